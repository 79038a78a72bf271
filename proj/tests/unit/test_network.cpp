#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mdcell/data.hpp"
#include "mdcell/error.hpp"
#include "mdcell/network.hpp"

using namespace mdcell;

namespace {

Grid random_image(const LatticeShape& shape, int channels, std::uint64_t seed) {
  Grid g(shape, channels);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Real& v : g.data) v = static_cast<Real>(u(rng));
  return g;
}

NetworkSpec small_spec(CellKind kind) {
  NetworkSpec s;
  s.layers = {LayerSpec::md(kind, 2), LayerSpec::subsample({2, 2}), LayerSpec::feed_forward(4),
              LayerSpec::md(kind, 2), LayerSpec::output(3)};
  return s;
}

std::vector<Example> tiny_corpus(int count) {
  SyntheticParams p;
  p.count = count;
  p.height = 12;
  p.width = 20;
  p.glyph = 6;
  p.max_length = 2;
  p.jitter = 1;
  p.alphabet = 2;
  return gen_synthetic(p);
}

}  // namespace

TEST(Network, SameSeedBuildsIdenticalModels) {
  const Model a = build(NetworkSpec::demo(4));
  const Model b = build(NetworkSpec::demo(4));
  EXPECT_EQ(a.params.value, b.params.value);
  NetworkSpec other = NetworkSpec::demo(4);
  other.seed = 2;
  EXPECT_NE(build(other).params.value, a.params.value);
}

TEST(Network, InitialisationRanges) {
  NetworkSpec s = NetworkSpec::demo(4);
  s.forget_bias = 0.75;
  const Model m = build(s);
  for (const LayerParams& lp : m.layers) {
    for (const auto& d : lp.dirs) {
      for (int k = d.w_in; k < d.w_rec[0]; ++k) EXPECT_LE(std::abs(m.params.value[k]), s.init_scale);
      for (int k = d.w_rec[0]; k < d.bias; ++k) EXPECT_LE(std::abs(m.params.value[k]), s.recurrent_scale);
    }
  }
  // LeakyLP layout: c_in, lambda_1, lambda_2, phi, omega_0, omega_1; phi rows start at 3 * cells.
  const auto& d0 = m.layers[0].dirs[0];
  for (int c = 0; c < 4; ++c) EXPECT_EQ(m.params.value[d0.bias + 3 * 4 + c], 0.75);
  EXPECT_EQ(m.params.value[d0.bias], 0.0);
}

TEST(Network, ZeroScaleGivesUniformPosteriors) {
  NetworkSpec s = NetworkSpec::demo(5);
  s.init_scale = 0.0;
  s.recurrent_scale = 0.0;
  const Model m = build(s);
  for (const auto& row : forward(m, random_image({1, 1}, 1, 1)))
    for (double p : row) EXPECT_NEAR(p, 0.2, 1e-15);
}

TEST(Network, DemoParameterCount) {
  // cells per direction C, gates G, input width F, D = 2, 4 directions:
  // 4 * G*C * (F + 2C + 1) per MD layer, W*(F+1) per dense layer.
  const std::size_t g = gate_layout(CellKind::LeakyLP, 2).size();
  const std::size_t md1 = 4 * g * 4 * (1 + 8 + 1);
  const std::size_t ff = 12 * (16 * 6 + 1);
  const std::size_t md2 = 4 * g * 8 * (12 + 16 + 1);
  const std::size_t out = 4 * (32 + 1);
  const NetworkSpec s = NetworkSpec::demo(4);
  EXPECT_EQ(parameter_count(s), md1 + ff + md2 + out);
  EXPECT_EQ(build(s).params.size(), md1 + ff + md2 + out);
  EXPECT_EQ(md1 + ff + md2 + out, 7824u);
}

TEST(Network, ShapeAlgebra) {
  EXPECT_EQ(subsampled_shape({24, 60}, std::vector<int>{3, 2}).str(), LatticeShape({8, 30}).str());
  EXPECT_EQ(subsampled_shape({25, 61}, std::vector<int>{3, 2}).str(), LatticeShape({9, 31}).str());
  const NetworkSpec h = NetworkSpec::hierarchical3(5, {CellKind::LeakyLP, CellKind::Lstm, CellKind::Lstm});
  EXPECT_EQ(final_shape(h, {24, 60}).str(), LatticeShape({4, 15}).str());
  EXPECT_EQ(forward(build(NetworkSpec::demo(4)), random_image({25, 61}, 1, 3)).size(), 31u);
}

TEST(Network, PosteriorsNormalised) {
  const Model m = build(small_spec(CellKind::Lstm));
  for (const auto& row : forward(m, random_image({7, 9}, 1, 2))) {
    double sum = 0.0;
    for (double p : row) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Network, MismatchedImageIsRejected) {
  const Model m = build(small_spec(CellKind::Lstm));
  EXPECT_THROW(forward(m, random_image({9}, 1, 1)), ContractViolation);
  EXPECT_THROW(forward(m, random_image({3, 3}, 2, 1)), ContractViolation);
}

TEST(Network, LabelPermutationPermutesPosteriors) {
  const Model m = build(small_spec(CellKind::LeakyLP));
  Model p = m;
  const LayerParams& out = m.layers.back();
  const int perm[] = {2, 0, 1};
  for (int k = 0; k < 3; ++k) {
    for (int j = 0; j < out.in_features; ++j)
      p.params.value[out.w + perm[k] * out.in_features + j] = m.params.value[out.w + k * out.in_features + j];
    p.params.value[out.b + perm[k]] = m.params.value[out.b + k];
  }
  const Grid img = random_image({6, 8}, 1, 4);
  const Matrix a = forward(m, img), b = forward(p, img);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(b[t][perm[k]], a[t][k], 1e-15);
}

TEST(Network, FlipEquivariance) {
  NetworkSpec s;
  s.layers = {LayerSpec::md(CellKind::LeakyLP, 3), LayerSpec::output(3)};
  const Model m = build(s);
  const int cells = 3;
  // Flip rows, swap direction d <-> d ^ 1 (dimension 0 reversed), and move
  // the matching output-weight columns along.
  Model f = m;
  const auto& L = m.layers[0];
  const int per_dir = L.dirs[1].w_in - L.dirs[0].w_in;
  for (int d = 0; d < 4; ++d)
    for (int k = 0; k < per_dir; ++k)
      f.params.value[L.dirs[d ^ 1].w_in + k] = m.params.value[L.dirs[d].w_in + k];
  const auto& O = m.layers[1];
  for (int r = 0; r < 3; ++r)
    for (int d = 0; d < 4; ++d)
      for (int c = 0; c < cells; ++c)
        f.params.value[O.w + r * O.in_features + (d ^ 1) * cells + c] =
            m.params.value[O.w + r * O.in_features + d * cells + c];
  const LatticeShape shape{5, 7};
  const Grid img = random_image(shape, 1, 8);
  Grid flipped(shape, 1);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) flipped.data[shape.linear({4 - y, x})] = img.data[shape.linear({y, x})];
  const Matrix a = forward(m, img), b = forward(f, flipped);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[t][k], b[t][k], 1e-13);
}

TEST(Network, ForwardIsPure) {
  const Model m = build(small_spec(CellKind::Leaky));
  const Grid a = random_image({6, 6}, 1, 1), b = random_image({6, 6}, 1, 2);
  const Matrix first = forward(m, a);
  forward(m, b);
  EXPECT_EQ(forward(m, a), first);
}

TEST(Network, GradientCheckEveryKind) {
  for (CellKind k : kAllCellKinds) {
    const int dims = k == CellKind::LstmStableReduced ? 2 : 1;
    const GradCheckResult r = gradient_check(k, dims == 1 ? LatticeShape{5} : LatticeShape{4, 3}, 2);
    EXPECT_LE(r.params.max_rel_error, 1e-6) << to_string(k);
    EXPECT_LE(r.input.max_rel_error, 1e-6) << to_string(k);
  }
}

TEST(Network, SpecJsonRoundTrip) {
  NetworkSpec s = NetworkSpec::hierarchical3(7, {CellKind::LeakyLP, CellKind::Lstm, CellKind::TypeE});
  s.seed = 99;
  s.init_scale = 0.7;
  s.recurrent_scale = 0.05;
  s.forget_bias = 1.0;
  EXPECT_EQ(to_json(spec_from_json(to_json(s))), to_json(s));
  EXPECT_THROW(spec_from_json(nlohmann::json{{"layers", {{{"type", "conv"}}}}}), ContractViolation);
}

TEST(Network, ModelRoundTripIsByteStable) {
  Model m = build(small_spec(CellKind::TypeC));
  m.epoch = 3;
  m.learning_rate = 5e-4;
  std::stringstream a;
  save_model(m, a);
  const std::string bytes = a.str();
  const Model back = load_model(a);
  EXPECT_EQ(back.params.value, m.params.value);
  EXPECT_EQ(back.epoch, 3);
  std::stringstream b;
  save_model(back, b);
  EXPECT_EQ(b.str(), bytes);
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_model(cut), ContractViolation);
}

TEST(Training, ZeroLearningRateKeepsWeights) {
  const auto data = tiny_corpus(6);
  NetworkSpec s = small_spec(CellKind::LeakyLP);
  Model m = build(s);
  const auto before = m.params.value;
  TrainOptions o;
  o.learning_rate = 0.0;
  o.epochs = 2;
  const TrainLog log = train_sgd(m, data, data, o);
  EXPECT_EQ(m.params.value, before);
  ASSERT_EQ(log.epochs.size(), 3u);
  EXPECT_NEAR(log.epochs[1].train_loss, log.epochs[0].train_loss, 1e-12);
  EXPECT_NEAR(log.epochs[2].train_loss, log.epochs[0].train_loss, 1e-12);
}

TEST(Training, SmallStepDecreasesSampleLoss) {
  const auto data = tiny_corpus(1);
  Model m = build(small_spec(CellKind::LeakyLP));
  Tape tape(&m.params);
  std::vector<Real> grad(m.params.size());
  const double before = loss_and_gradient(tape, m, data[0].image, data[0].target, grad).loss;
  for (std::size_t k = 0; k < grad.size(); ++k) m.params.value[k] -= 1e-4 * grad[k];
  std::vector<Real> unused(m.params.size());
  EXPECT_LT(loss_and_gradient(tape, m, data[0].image, data[0].target, unused).loss, before);
}

TEST(Training, DeterministicLog) {
  const auto data = tiny_corpus(8);
  auto run = [&] {
    Model m = build(small_spec(CellKind::LeakyLP));
    TrainOptions o;
    o.learning_rate = 1e-3;
    o.epochs = 2;
    o.shuffle_seed = 5;
    return train_log_csv(train_sgd(m, data, data, o));
  };
  const std::string a = run();
  EXPECT_EQ(a, run());
  EXPECT_EQ(a.substr(0, a.find('\n')), "epoch,train_loss,val_ler,val_ler_macro,infeasible");
}

TEST(Training, DivergenceIsRecorded) {
  const auto data = tiny_corpus(4);
  Model m = build(small_spec(CellKind::Lstm));
  TrainOptions o;
  o.learning_rate = 1e300;
  o.epochs = 3;
  const TrainLog log = train_sgd(m, data, data, o);
  EXPECT_TRUE(log.diverged);
  EXPECT_FALSE(log.divergence.empty());
  for (Real v : m.params.value) ASSERT_TRUE(std::isfinite(v));
}

TEST(Training, InfeasibleSamplesAreCounted) {
  auto data = tiny_corpus(3);
  data[0].target = LabelSeq(40, 0);
  Model m = build(small_spec(CellKind::Leaky));
  TrainOptions o;
  o.epochs = 1;
  const TrainLog log = train_sgd(m, data, data, o);
  EXPECT_EQ(log.epochs[0].infeasible, 1u);
  EXPECT_EQ(log.epochs[1].infeasible, 1u);
}
