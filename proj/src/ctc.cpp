#include "mdcell/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mdcell/error.hpp"

namespace mdcell {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

struct Lattice {
  std::vector<int> ext;  // blank-interleaved target l'
  Matrix alpha;          // log alpha_t(s), includes y_t(l'_s)
  Matrix beta;           // log beta_t(s), suffix after t, excludes y_t
  double log_p = kNegInf;
};

// `logy` holds log posteriors.
Lattice forward_backward(const Matrix& logy, const LabelSeq& target, int blank) {
  Lattice lat;
  lat.ext.reserve(2 * target.size() + 1);
  lat.ext.push_back(blank);
  for (int l : target) {
    lat.ext.push_back(l);
    lat.ext.push_back(blank);
  }
  const std::size_t T = logy.size();
  const std::size_t S = lat.ext.size();
  const auto& e = lat.ext;
  auto can_skip = [&](std::size_t s) { return s >= 2 && e[s] != blank && e[s] != e[s - 2]; };

  lat.alpha.assign(T, std::vector<double>(S, kNegInf));
  lat.alpha[0][0] = logy[0][static_cast<std::size_t>(e[0])];
  if (S > 1) lat.alpha[0][1] = logy[0][static_cast<std::size_t>(e[1])];
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = lat.alpha[t - 1][s];
      if (s >= 1) a = log_add(a, lat.alpha[t - 1][s - 1]);
      if (can_skip(s)) a = log_add(a, lat.alpha[t - 1][s - 2]);
      lat.alpha[t][s] = a == kNegInf ? kNegInf : a + logy[t][static_cast<std::size_t>(e[s])];
    }
  }

  lat.beta.assign(T, std::vector<double>(S, kNegInf));
  lat.beta[T - 1][S - 1] = 0.0;
  if (S > 1) lat.beta[T - 1][S - 2] = 0.0;
  for (std::size_t t = T - 1; t-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      auto step = [&](std::size_t s2) {
        const double b = lat.beta[t + 1][s2];
        return b == kNegInf ? kNegInf : b + logy[t + 1][static_cast<std::size_t>(e[s2])];
      };
      double b = step(s);
      if (s + 1 < S) b = log_add(b, step(s + 1));
      if (s + 2 < S && can_skip(s + 2)) b = log_add(b, step(s + 2));
      lat.beta[t][s] = b;
    }
  }
  lat.log_p = lat.alpha[T - 1][S - 1];
  if (S > 1) lat.log_p = log_add(lat.log_p, lat.alpha[T - 1][S - 2]);
  return lat;
}

// occupancy[t][k] = P(frame t emits k | target)
Matrix occupancy(const Lattice& lat, std::size_t K) {
  const std::size_t T = lat.alpha.size();
  Matrix occ(T, std::vector<double>(K, 0.0));
  std::vector<double> acc(K);
  for (std::size_t t = 0; t < T; ++t) {
    std::fill(acc.begin(), acc.end(), kNegInf);
    for (std::size_t s = 0; s < lat.ext.size(); ++s) {
      const double ab = lat.alpha[t][s] + lat.beta[t][s];
      const auto k = static_cast<std::size_t>(lat.ext[s]);
      acc[k] = log_add(acc[k], ab);
    }
    for (std::size_t k = 0; k < K; ++k) occ[t][k] = acc[k] == kNegInf ? 0.0 : std::exp(acc[k] - lat.log_p);
  }
  return occ;
}

void check_inputs(const Matrix& m, const LabelSeq& target) {
  require(!m.empty(), "ctc: empty posterior sequence");
  const std::size_t K = m[0].size();
  require(K >= 1, "ctc: need at least the blank label");
  for (const auto& row : m) require(row.size() == K, "ctc: ragged posterior rows");
  for (int l : target)
    require(l >= 0 && static_cast<std::size_t>(l) + 1 < K, "ctc: target label outside alphabet");
}

CtcResult infeasible(std::size_t T, std::size_t K) {
  return {std::numeric_limits<double>::infinity(), CtcStatus::Infeasible, Matrix(T, std::vector<double>(K, 0.0))};
}

}  // namespace

std::size_t ctc_min_frames(const LabelSeq& target) {
  std::size_t n = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++n;
  return n;
}

CtcResult ctc_loss(const Matrix& posteriors, const LabelSeq& target) {
  check_inputs(posteriors, target);
  const std::size_t T = posteriors.size();
  const std::size_t K = posteriors[0].size();
  if (ctc_min_frames(target) > T) return infeasible(T, K);
  Matrix logy(T, std::vector<double>(K));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < K; ++k) logy[t][k] = std::log(posteriors[t][k]);
  const Lattice lat = forward_backward(logy, target, static_cast<int>(K) - 1);
  if (lat.log_p == kNegInf) return infeasible(T, K);
  CtcResult r{-lat.log_p, CtcStatus::Ok, occupancy(lat, K)};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < K; ++k) {
      const double o = r.grad[t][k];
      r.grad[t][k] = o == 0.0 ? 0.0 : -o / posteriors[t][k];
    }
  return r;
}

CtcResult ctc_loss_logits(const Matrix& logits, const LabelSeq& target) {
  check_inputs(logits, target);
  const std::size_t T = logits.size();
  const std::size_t K = logits[0].size();
  if (ctc_min_frames(target) > T) return infeasible(T, K);
  Matrix logy(T, std::vector<double>(K));
  Matrix post(T);
  for (std::size_t t = 0; t < T; ++t) {
    const double m = *std::max_element(logits[t].begin(), logits[t].end());
    double z = 0.0;
    for (double v : logits[t]) z += std::exp(v - m);
    const double lz = m + std::log(z);
    post[t].resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      logy[t][k] = logits[t][k] - lz;
      post[t][k] = std::exp(logy[t][k]);
    }
  }
  const Lattice lat = forward_backward(logy, target, static_cast<int>(K) - 1);
  if (lat.log_p == kNegInf) return infeasible(T, K);
  CtcResult r{-lat.log_p, CtcStatus::Ok, occupancy(lat, K)};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < K; ++k) r.grad[t][k] = post[t][k] - r.grad[t][k];
  return r;
}

std::vector<double> softmax(std::span<const double> z) {
  require(!z.empty(), "softmax: empty input");
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) sum += p[k] = std::exp(z[k] - m);
  for (double& v : p) v /= sum;
  return p;
}

LabelSeq best_path_decode(const Matrix& posteriors) {
  LabelSeq out;
  if (posteriors.empty()) return out;
  const int blank = static_cast<int>(posteriors[0].size()) - 1;
  int prev = -1;
  for (const auto& row : posteriors) {
    // max_element returns the first maximum, i.e. the lowest label on ties
    const int k = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (k != prev && k != blank) out.push_back(k);
    prev = k;
  }
  return out;
}

std::size_t edit_distance(const LabelSeq& a, const LabelSeq& b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double label_error_rate(const LabelSeq& hyp, const LabelSeq& ref) {
  return static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(std::max<std::size_t>(1, ref.size()));
}

CorpusLer corpus_ler(std::span<const LabelSeq> hyps, std::span<const LabelSeq> refs) {
  require(hyps.size() == refs.size(), "corpus_ler: hypothesis/reference count mismatch");
  CorpusLer r;
  if (refs.empty()) return r;
  double macro = 0.0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    r.distance += edit_distance(hyps[i], refs[i]);
    r.ref_length += refs[i].size();
    macro += label_error_rate(hyps[i], refs[i]);
  }
  r.micro = static_cast<double>(r.distance) / static_cast<double>(std::max<std::size_t>(1, r.ref_length));
  r.macro = macro / static_cast<double>(refs.size());
  return r;
}

}  // namespace mdcell
