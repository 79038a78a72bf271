// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Arguments select a subset (e.g. `acceptance 1 11 12`).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mdcell/analysis.hpp"
#include "mdcell/autodiff.hpp"
#include "mdcell/cells.hpp"
#include "mdcell/ctc.hpp"
#include "mdcell/data.hpp"
#include "mdcell/lattice.hpp"
#include "mdcell/network.hpp"

using namespace mdcell;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---- 1 ----

Outcome gradients() {
  const auto t0 = Clock::now();
  const LatticeShape shapes[] = {LatticeShape{5}, LatticeShape{5, 5}, LatticeShape{5, 5, 4}};
  double worst = 0.0;
  std::string worst_case;
  int runs = 0;
  for (CellKind k : kAllCellKinds) {
    for (int d = 1; d <= 3; ++d) {
      if (!kind_supports_dims(k, d)) continue;
      const GradCheckResult r = gradient_check(k, shapes[d - 1], 7 + static_cast<std::uint64_t>(d));
      ++runs;
      for (double e : {r.params.max_rel_error, r.input.max_rel_error}) {
        if (!(e <= worst)) {
          worst = e;
          worst_case = std::string(to_string(k)) + " D=" + std::to_string(d);
        }
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 120.0,
          fmt("%d networks, max rel error %.3g (%s), %.1f s", runs, worst, worst_case.c_str(), t)};
}

// ---- 2 ----

Outcome truncated_product() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 64);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(rng);
    const LatticeShape shape{n};
    std::vector<GateActivations> field(static_cast<std::size_t>(n));
    for (GateActivations& g : field) {
      g.cell_input = 2.0 * u(rng) - 1.0;
      g.input_gate = u(rng);
      g.forget_dim = {u(rng)};
      g.output = u(rng);
    }
    const auto j = truncated_state_jacobian(CellKind::Lstm, field, {0}, shape, {+1});
    double product = 1.0;
    for (int t = 0; t < n; ++t) {
      if (t > 0) product *= field[static_cast<std::size_t>(t)].forget_dim[0];
      worst = std::max(worst, std::abs(j.at({t}) - product));
    }
  }
  return {worst <= 1e-12, fmt("100 sequences, max abs error %.3g", worst)};
}

// ---- 3 ----

Outcome explosion() {
  // Path-sum oracle: monotone paths (0,0) -> (5,5), each step a factor 0.9.
  std::vector<std::vector<double>> paths(6, std::vector<double>(6, 0.0));
  for (int i = 0; i <= 5; ++i)
    for (int j = 0; j <= 5; ++j) paths[i][j] = (i == 0 || j == 0) ? 1.0 : paths[i - 1][j] + paths[i][j - 1];
  const double oracle = paths[5][5] * std::pow(0.9, 10);
  const auto two = explosion_series(2, 0.9, 40);
  const double got = two[4].value;
  const double rel = std::abs(got - oracle) / oracle;
  bool increasing = true;
  for (std::size_t i = 1; i < two.size(); ++i) increasing = increasing && two[i].value > two[i - 1].value;
  const auto one = explosion_series(1, 0.9, 40);
  bool decreasing = true;
  for (std::size_t i = 1; i < one.size(); ++i) decreasing = decreasing && one[i].value < one[i - 1].value;
  return {two[4].k == 5 && rel <= 1e-9 && increasing && decreasing,
          fmt("J(5,5) = %.9f vs oracle %.9f (rel %.2g), D=2 increasing to k=40: %s, D=1 decreasing: %s", got,
              oracle, rel, increasing ? "yes" : "no", decreasing ? "yes" : "no")};
}

// ---- 4 ----

Outcome neg_suite() {
  const auto t0 = Clock::now();
  std::string failed;
  int suites = 0;
  for (CellKind k : {CellKind::LstmStable, CellKind::Leaky, CellKind::LeakyLP, CellKind::TypeB}) {
    for (int d = 1; d <= 3; ++d) {
      const PropertyReport r = neg_probe(k, d, 1000, 6, 40 + static_cast<std::uint64_t>(d));
      ++suites;
      if (!r.holds) failed += std::string(" ") + std::string(to_string(k)) + "/D" + std::to_string(d);
    }
  }
  const double t = seconds_since(t0);
  return {failed.empty() && t < 300.0,
          fmt("%d suites of 1000 fields, %.1f s%s%s", suites, t, failed.empty() ? "" : ", violated:", failed.c_str())};
}

// ---- 5 ----

Outcome bounded_state() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> extent(1, 6);
  double worst = 0.0;
  int fields = 0;
  for (CellKind k : {CellKind::Leaky, CellKind::LeakyLP, CellKind::TypeB, CellKind::TypeD, CellKind::TypeE}) {
    for (int d = 1; d <= 3; ++d) {
      if (!kind_supports_dims(k, d)) continue;
      const std::size_t slots = gate_layout(k, d).size();
      for (int trial = 0; trial < 1000; ++trial) {
        ++fields;
        Coord ext;
        std::vector<int> e;
        for (int i = 0; i < d; ++i) e.push_back(extent(rng));
        const LatticeShape shape = d == 1 ? LatticeShape{e[0]} : d == 2 ? LatticeShape{e[0], e[1]}
                                                                        : LatticeShape{e[0], e[1], e[2]};
        const ScanDirection dir = ScanDirection::from_index(d, trial % ScanDirection::count(d));
        std::vector<double> s(shape.size(), 0.0);
        for (const Coord& p : scan_order(shape, dir)) {
          std::vector<double> units(slots);
          for (double& v : units) v = u(rng);
          units[0] = 2.0 * units[0] - 1.0;
          const GateActivations g = gates_from_units(k, d, units);
          std::vector<std::optional<double>> prev;
          for (const auto& q : predecessors(p, dir, shape))
            prev.push_back(q ? std::optional(s[shape.linear(*q)]) : std::nullopt);
          const double v = cell_forward(k, g, prev).s;
          s[shape.linear(p)] = v;
          worst = std::max(worst, std::abs(v));
        }
      }
    }
  }
  return {worst <= 1.0 + 1e-15, fmt("%d gate fields, max |s| = %.17g", fields, worst)};
}

// ---- 6 ----

Outcome nvg_suite() {
  struct Case {
    CellKind kind;
    int dims;
  };
  const Case cases[] = {{CellKind::Lstm, 1},       {CellKind::Lstm, 2},       {CellKind::LstmStable, 2},
                        {CellKind::LstmStable, 3}, {CellKind::Leaky, 2}};
  int probes = 0;
  std::string failed;
  for (const Case& c : cases) {
    for (double delta : {0.05, 0.1}) {
      // Every window with p_in = (1,..,1) and ||p_out - p_in||_1 <= 8.
      std::vector<std::vector<int>> offsets{{}};
      for (int d = 0; d < c.dims; ++d) {
        std::vector<std::vector<int>> next;
        for (const auto& o : offsets)
          for (int v = 0; v <= 8; ++v) {
            auto w = o;
            w.push_back(v);
            next.push_back(w);
          }
        offsets = next;
      }
      for (const auto& o : offsets) {
        int l1 = 0;
        for (int v : o) l1 += v;
        if (l1 > 8) continue;
        Coord p_in, p_out;
        if (c.dims == 1) p_in = {1}, p_out = {1 + o[0]};
        if (c.dims == 2) p_in = {1, 1}, p_out = {1 + o[0], 1 + o[1]};
        if (c.dims == 3) p_in = {1, 1, 1}, p_out = {1 + o[0], 1 + o[1], 1 + o[2]};
        ++probes;
        if (!nvg_probe(c.kind, c.dims, p_in, p_out, delta).holds && failed.size() < 200)
          failed += " " + std::string(to_string(c.kind)) + "/D" + std::to_string(c.dims) + "/k" + std::to_string(l1);
      }
    }
  }
  return {failed.empty(), fmt("%d windows%s%s", probes, failed.empty() ? "" : ", violated:", failed.c_str())};
}

// ---- 7 ----

Outcome cod() {
  const PropertyReport leaky = cod_probe(CellKind::Leaky, 50);
  const double oracle = (1.0 - std::tanh(1.0) * std::tanh(1.0)) * (1.0 - kCodEpsilon);
  const double d1 = leaky.details.at("delta1").get<double>();
  const double d2 = leaky.details.at("delta2").get<double>();
  const PropertyReport lstm = cod_probe(CellKind::Lstm, 50);
  const double slope = lstm.witness.at("open_gate_slope").get<double>();
  const bool ok = leaky.holds && std::abs(oracle - 0.4195) < 1e-4 && d1 >= oracle - 1e-15 && d2 <= 1e-3 &&
                  slope < 1e-10;
  return {ok, fmt("Leaky delta1 %.6f (oracle %.6f), delta2 %.3g; Lstm open-gate slope %.3g after 50 steps", d1,
                  oracle, d2, slope)};
}

// ---- 8 ----

Outcome frequency() {
  double worst = 0.0;
  for (double a1 : {-0.9, -0.5, 0.0, 0.3, 0.7, 0.9})
    for (double a0 : {1.0 - std::abs(a1), 0.5 * (1.0 - std::abs(a1))})
      for (const auto& [b0, b1] : {std::pair{1.0, 0.0}, std::pair{0.5, 0.5}, std::pair{0.8, -0.3}})
        for (const SpectrumRow& row : spectrum(TransferFunction{a0, a1, b0, b1}, 4096))
          worst = std::max(worst, std::abs(row.closed.h - row.empirical));
  double worst_half = 0.0;
  for (double phi : {-0.9, -0.5, 0.0, 0.5, 0.9}) {
    const TransferFunction tf = butterworth(phi);
    const double wc = 2.0 * std::numbers::pi * cutoff_frequency(phi);
    worst_half = std::max(worst_half, std::abs(magnitude(tf, wc).h - magnitude(tf, 0.0).h / std::numbers::sqrt2));
  }
  const double fc = cutoff_frequency(-0.5);
  return {worst <= 1e-9 && worst_half <= 1e-9 && std::abs(fc - 0.3976) <= 1e-4,
          fmt("DFT vs closed form max %.3g, half-power error %.3g, f_cutoff(-0.5) = %.6f", worst, worst_half, fc)};
}

// ---- 9 ----

Outcome stable_equivalence() {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::optional<double> s_lstm, s_stable;
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    GateActivations l;
    l.cell_input = 2.0 * u(rng) - 1.0;
    l.input_gate = u(rng);
    l.forget_dim = {u(rng)};
    l.output = u(rng);
    GateActivations s = l;
    s.forget_dim.clear();
    s.forget = l.forget_dim[0];
    s.lambda = {u(rng)};
    const CellState a = cell_forward(CellKind::Lstm, l, std::vector{s_lstm});
    const CellState b = cell_forward(CellKind::LstmStable, s, std::vector{s_stable});
    worst = std::max({worst, std::abs(a.y - b.y), std::abs(a.s - b.s)});
    s_lstm = a.s;
    s_stable = b.s;
  }
  return {worst <= 1e-15, fmt("1000 steps, max |diff| %.3g", worst)};
}

// ---- 10 ----

double enumerate_paths(const Matrix& p, const LabelSeq& target) {
  const std::size_t T = p.size(), K = p[0].size();
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  while (true) {
    LabelSeq collapsed;
    std::size_t last = K;
    double prob = 1.0;
    for (std::size_t t = 0; t < T; ++t) {
      prob *= p[t][path[t]];
      if (path[t] != last && path[t] != K - 1) collapsed.push_back(static_cast<int>(path[t]));
      last = path[t];
    }
    if (collapsed == target) total += prob;
    std::size_t t = 0;
    while (t < T && ++path[t] == K) path[t++] = 0;
    if (t == T) return total;
  }
}

Outcome ctc() {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.5);
  auto random_matrix = [&](std::size_t T, std::size_t K) {
    Matrix m(T, std::vector<double>(K));
    for (auto& row : m)
      for (double& v : row) v = n(rng);
    return m;
  };
  double worst_loss = 0.0;
  int cases = 0;
  for (std::size_t K = 2; K <= 4; ++K)
    for (std::size_t T = 1; T <= 6; ++T)
      for (int trial = 0; trial < 4; ++trial) {
        Matrix p = random_matrix(T, K);
        for (auto& row : p) row = softmax(row);
        LabelSeq target;
        const int len = std::uniform_int_distribution<int>(0, 3)(rng);
        for (int i = 0; i < len; ++i)
          target.push_back(std::uniform_int_distribution<int>(0, static_cast<int>(K) - 2)(rng));
        const double prob = enumerate_paths(p, target);
        const CtcResult r = ctc_loss(p, target);
        ++cases;
        if (prob == 0.0) {
          if (r.status != CtcStatus::Infeasible) worst_loss = INFINITY;
          continue;
        }
        worst_loss = std::max(worst_loss, std::abs(r.loss + std::log(prob)));
      }
  double worst_grad = 0.0;
  for (const LabelSeq& target : {LabelSeq{0}, LabelSeq{1, 1}, LabelSeq{0, 2, 1}}) {
    const Matrix z = random_matrix(6, 4);
    const CtcResult r = ctc_loss_logits(z, target);
    std::vector<double> x, g;
    for (std::size_t t = 0; t < 6; ++t)
      for (std::size_t k = 0; k < 4; ++k) x.push_back(z[t][k]), g.push_back(r.grad[t][k]);
    auto f = [&](std::span<const double> v) {
      Matrix m(6, std::vector<double>(4));
      for (std::size_t i = 0; i < v.size(); ++i) m[i / 4][i % 4] = v[i];
      return ctc_loss_logits(m, target).loss;
    };
    worst_grad = std::max(worst_grad, finite_diff_check(f, x, g).max_rel_error);
  }
  return {worst_loss <= 1e-10 && worst_grad <= 1e-6,
          fmt("%d enumeration cases, max |loss diff| %.3g; gradient FD max rel error %.3g", cases, worst_loss,
              worst_grad)};
}

// ---- 11, 12 ----

struct DemoRun {
  TrainLog log;
  std::string csv;
  double seconds = 0.0;
  bool finite = true;
};

DemoRun demo_training() {
  SyntheticParams p;
  p.count = 400;
  const std::vector<Example> all = gen_synthetic(p);
  const std::vector<Example> train(all.begin(), all.begin() + 300), validation(all.begin() + 300, all.end());
  Model model = build(NetworkSpec::demo(4));
  TrainOptions o;
  o.learning_rate = 5e-4;
  o.epochs = 30;
  o.shuffle_seed = 1;
  o.on_epoch = [](const EpochRecord& e) {
    std::fprintf(stderr, "  epoch %2d loss %.4f val LER %.4f\n", e.epoch, e.train_loss, e.val_ler);
  };
  const auto t0 = Clock::now();
  DemoRun run;
  run.log = train_sgd(model, train, validation, o);
  run.seconds = seconds_since(t0);
  run.csv = train_log_csv(run.log);
  for (const EpochRecord& e : run.log.epochs)
    run.finite = run.finite && std::isfinite(e.train_loss) && std::isfinite(e.val_ler);
  for (Real v : model.params.value) run.finite = run.finite && std::isfinite(v);
  return run;
}

std::optional<DemoRun> first_run;

Outcome desk_training() {
  first_run = demo_training();
  const TrainLog& log = first_run->log;
  if (log.epochs.size() < 2) return {false, "no epochs recorded" + (log.diverged ? ": " + log.divergence : "")};
  const double loss1 = log.epochs[1].train_loss;
  const double last = log.epochs.back().train_loss;
  double best_ler = 1e300;
  for (std::size_t i = 1; i < log.epochs.size(); ++i) best_ler = std::min(best_ler, log.epochs[i].val_ler);
  const double final_ler = log.epochs.back().val_ler;
  const bool ok = !log.diverged && first_run->finite && last <= 0.5 * loss1 && final_ler < 0.15 &&
                  first_run->seconds < 600.0;
  return {ok, fmt("loss epoch 1 %.4f -> epoch %d %.4f, val LER final %.4f (best %.4f), %.0f s%s", loss1,
                  log.epochs.back().epoch, last, final_ler, best_ler, first_run->seconds,
                  first_run->finite ? "" : ", non-finite values")};
}

Outcome determinism() {
  if (!first_run) first_run = demo_training();
  const DemoRun second = demo_training();
  const bool same = second.csv == first_run->csv;
  return {same, fmt("%zu-byte training log %s", second.csv.size(), same ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient correctness", gradients}},
      {2, {"1D truncated Jacobian is the forget-gate product", truncated_product}},
      {3, {"2D explosion vs path-sum oracle", explosion}},
      {4, {"NEG suite", neg_suite}},
      {5, {"bounded state", bounded_state}},
      {6, {"NVG constructive suite", nvg_suite}},
      {7, {"COD separation", cod}},
      {8, {"frequency toolkit", frequency}},
      {9, {"Stable equals Lstm in 1D", stable_equivalence}},
      {10, {"CTC oracle", ctc}},
      {11, {"desk-scale training", desk_training}},
      {12, {"training determinism", determinism}},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s criterion %2d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, entry.first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
