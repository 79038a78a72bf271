#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mdcell/autodiff.hpp"
#include "mdcell/ctc.hpp"

using namespace mdcell;

namespace {

// Sum over all K^T frame paths whose collapse equals the target.
double brute_force_probability(const Matrix& p, const LabelSeq& target) {
  const std::size_t T = p.size(), K = p[0].size();
  const int blank = static_cast<int>(K) - 1;
  std::vector<int> path(T, 0);
  double total = 0.0;
  while (true) {
    LabelSeq collapsed;
    int last = -1;
    double prob = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      prob *= p[t][static_cast<std::size_t>(path[t])];
      if (path[t] != last && path[t] != blank) collapsed.push_back(path[t]);
      last = path[t];
    }
    if (collapsed == target) total += prob;
    std::size_t t = 0;
    while (t < T && ++path[t] == static_cast<int>(K)) path[t++] = 0;
    if (t == T) break;
  }
  return total;
}

Matrix random_posteriors(std::size_t T, std::size_t K, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  Matrix m(T, std::vector<double>(K));
  for (auto& row : m) {
    for (double& v : row) v = n(rng);
    row = softmax(row);
  }
  return m;
}

}  // namespace

TEST(Ctc, SingleFrameSingleLabel) {
  const CtcResult r = ctc_loss({{0.6, 0.4}}, {0});
  EXPECT_NEAR(r.loss, -std::log(0.6), 1e-15);
}

TEST(Ctc, EmptyTargetIsAllBlank) {
  const CtcResult r = ctc_loss({{0.3, 0.7}}, {});
  EXPECT_NEAR(r.loss, -std::log(0.7), 1e-15);
}

TEST(Ctc, TwoFrames) {
  const Matrix p{{0.5, 0.2, 0.3}, {0.1, 0.6, 0.3}};
  const double expected = -std::log(0.5 * 0.1 + 0.5 * 0.3 + 0.3 * 0.1);
  EXPECT_NEAR(ctc_loss(p, {0}).loss, expected, 1e-14);
}

TEST(Ctc, InfeasibleTarget) {
  const Matrix p{{0.5, 0.5}, {0.5, 0.5}};
  const CtcResult r = ctc_loss(p, {0, 0});
  EXPECT_EQ(r.status, CtcStatus::Infeasible);
  EXPECT_TRUE(std::isinf(r.loss));
  EXPECT_EQ(ctc_min_frames({0, 0}), 3u);
  EXPECT_EQ(ctc_min_frames({0, 1}), 2u);
}

TEST(Ctc, MatchesBruteForceEnumeration) {
  std::mt19937_64 rng(7);
  for (std::size_t T = 1; T <= 6; ++T) {
    for (std::size_t K = 2; K <= 4; ++K) {
      for (int trial = 0; trial < 4; ++trial) {
        const Matrix p = random_posteriors(T, K, rng);
        std::uniform_int_distribution<int> len(0, 3), lab(0, static_cast<int>(K) - 2);
        LabelSeq target(static_cast<std::size_t>(len(rng)));
        for (int& l : target) l = lab(rng);
        const CtcResult r = ctc_loss(p, target);
        const double prob = brute_force_probability(p, target);
        if (prob == 0.0) {
          EXPECT_EQ(r.status, CtcStatus::Infeasible);
          continue;
        }
        EXPECT_NEAR(r.loss, -std::log(prob), 1e-10) << "T=" << T << " K=" << K;
      }
    }
  }
}

TEST(Ctc, PosteriorGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Matrix p = random_posteriors(6, 4, rng);
  const LabelSeq target{0, 2, 2};
  const CtcResult r = ctc_loss(p, target);
  std::vector<double> x, g;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t k = 0; k < 4; ++k) x.push_back(p[t][k]), g.push_back(r.grad[t][k]);
  auto f = [&](std::span<const double> v) {
    Matrix m(6, std::vector<double>(4));
    for (std::size_t i = 0; i < v.size(); ++i) m[i / 4][i % 4] = v[i];
    return ctc_loss(m, target).loss;
  };
  EXPECT_LE(finite_diff_check(f, x, g).max_rel_error, 1e-6);
}

TEST(Ctc, LogitGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n(0.0, 2.0);
  for (const LabelSeq& target : {LabelSeq{}, LabelSeq{1}, LabelSeq{0, 1, 0}, LabelSeq{2, 2}}) {
    Matrix z(7, std::vector<double>(4));
    for (auto& row : z)
      for (double& v : row) v = n(rng);
    const CtcResult r = ctc_loss_logits(z, target);
    std::vector<double> x, g;
    for (std::size_t t = 0; t < z.size(); ++t)
      for (std::size_t k = 0; k < 4; ++k) x.push_back(z[t][k]), g.push_back(r.grad[t][k]);
    auto f = [&](std::span<const double> v) {
      Matrix m(7, std::vector<double>(4));
      for (std::size_t i = 0; i < v.size(); ++i) m[i / 4][i % 4] = v[i];
      return ctc_loss_logits(m, target).loss;
    };
    EXPECT_LE(finite_diff_check(f, x, g).max_rel_error, 1e-6);

    Matrix post;
    for (const auto& row : z) post.push_back(softmax(row));
    EXPECT_NEAR(ctc_loss(post, target).loss, r.loss, 1e-12);
  }
}

TEST(Ctc, StableOverLongSequences) {
  Matrix p(400, std::vector<double>{0.01, 0.01, 0.98});
  const CtcResult r = ctc_loss(p, {0, 1, 0, 1});
  EXPECT_EQ(r.status, CtcStatus::Ok);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GT(r.loss, 0.0);
}

TEST(Decode, BestPath) {
  auto frame = [](int k) {
    std::vector<double> row(3, 0.1);
    row[static_cast<std::size_t>(k)] = 0.8;
    return row;
  };
  EXPECT_EQ(best_path_decode({frame(0), frame(0), frame(2), frame(1)}), (LabelSeq{0, 1}));
  EXPECT_EQ(best_path_decode({frame(2), frame(2)}), LabelSeq{});
  EXPECT_EQ(best_path_decode({frame(0), frame(2), frame(0)}), (LabelSeq{0, 0}));
  EXPECT_EQ(best_path_decode({{0.4, 0.4, 0.2}}), LabelSeq{0});
}

TEST(Ler, Examples) {
  EXPECT_EQ(label_error_rate({0, 1, 2}, {0, 1, 2}), 0.0);
  EXPECT_DOUBLE_EQ(label_error_rate({0, 1}, {0, 1, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(label_error_rate({0, 3, 2}, {0, 1, 2}), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(label_error_rate({0, 1}, {}), 2.0);
  EXPECT_EQ(edit_distance({0, 1, 2}, {2, 1, 0}), edit_distance({2, 1, 0}, {0, 1, 2}));
}

TEST(Ler, CorpusMicroAndMacro) {
  const std::vector<LabelSeq> hyps{{0}, {0, 1, 2, 2}};
  const std::vector<LabelSeq> refs{{1}, {0, 1, 2}};
  const CorpusLer c = corpus_ler(hyps, refs);
  EXPECT_EQ(c.distance, 2u);
  EXPECT_EQ(c.ref_length, 4u);
  EXPECT_DOUBLE_EQ(c.micro, 0.5);
  EXPECT_DOUBLE_EQ(c.macro, (1.0 + 1.0 / 3.0) / 2.0);
}
