#include "mdcell/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <sstream>

#include <fftw3.h>

#include "mdcell/autodiff.hpp"
#include "mdcell/error.hpp"

namespace mdcell {

std::string_view to_string(Property p) {
  switch (p) {
    case Property::NVG: return "nvg";
    case Property::NEG: return "neg";
    case Property::COD: return "cod";
  }
  return "?";
}

Property parse_property(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "nvg") return Property::NVG;
  if (n == "neg") return Property::NEG;
  if (n == "cod") return Property::COD;
  throw ContractViolation("unknown property '" + std::string(name) + "' (expected nvg, neg or cod)");
}

nlohmann::json to_json(const PropertyReport& r) {
  return {{"property", to_string(r.property)},
          {"kind", to_string(r.kind)},
          {"dims", r.dims},
          {"verdict", r.holds ? "holds" : "violated"},
          {"seed", r.seed},
          {"witness", r.witness},
          {"details", r.details}};
}

std::string to_text(const PropertyReport& r) {
  std::ostringstream os;
  os << to_string(r.property) << " " << to_string(r.kind) << " D=" << r.dims << ": "
     << (r.holds ? "holds" : "violated") << " (seed " << r.seed << ")\n";
  if (!r.witness.empty()) os << "  witness: " << r.witness.dump() << "\n";
  if (!r.details.empty()) os << "  details: " << r.details.dump() << "\n";
  return os.str();
}

namespace {

nlohmann::json coord_json(const Coord& p) {
  nlohmann::json j = nlohmann::json::array();
  for (int d = 0; d < p.dims(); ++d) j.push_back(p[d]);
  return j;
}

nlohmann::json shape_json(const LatticeShape& s) {
  nlohmann::json j = nlohmann::json::array();
  for (int d = 0; d < s.dims(); ++d) j.push_back(s.extent(d));
  return j;
}

GateActivations random_gates(CellKind kind, int dims, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> u(gate_layout(kind, dims).size());
  for (double& v : u) v = unit(rng);
  u[0] = 2.0 * u[0] - 1.0;
  return gates_from_units(kind, dims, u);
}

std::vector<double> coefficient_field(CellKind kind, int dims, std::span<const GateActivations> gates) {
  std::vector<double> coef;
  coef.reserve(gates.size() * static_cast<std::size_t>(dims));
  for (const GateActivations& g : gates) {
    const auto c = carry_coefficients(kind, g, dims);
    coef.insert(coef.end(), c.begin(), c.end());
  }
  return coef;
}

bool is_mixing_kind(CellKind kind) {
  switch (kind) {
    case CellKind::Unit:
    case CellKind::LstmNoForget:
    case CellKind::Lstm: return false;
    default: return true;
  }
}

}  // namespace

PropertyReport neg_probe(CellKind kind, int dims, int trials, int max_extent, std::uint64_t seed) {
  require(trials >= 1, "neg_probe: trials must be >= 1");
  require(max_extent >= 1, "neg_probe: max_extent must be >= 1");
  require(kind_supports_dims(kind, dims), "neg_probe: kind does not support this dimension");
  PropertyReport r;
  r.property = Property::NEG;
  r.kind = kind;
  r.dims = dims;
  r.seed = seed;
  r.holds = true;

  if ((kind == CellKind::Lstm || kind == CellKind::LstmNoForget) && dims >= 2) {
    const double phi = 1.0 - 1e-9;
    std::vector<int> ext(static_cast<std::size_t>(dims), 6);
    const LatticeShape shape(ext);
    std::vector<GateActivations> field(shape.size(), gates_from_units(kind, dims, std::vector<double>(gate_layout(kind, dims).size(), phi)));
    const Coord origin(dims);
    const auto plan = make_scan_plan(shape, ScanDirection::from_index(dims, 0));
    const auto jac = truncated_state_jacobian(coefficient_field(kind, dims, field), origin, plan);
    Coord corner(dims);
    for (int d = 0; d < dims; ++d) corner[d] = 5;
    const double v = jac.at(corner);
    if (v > 1.0 + kNegTolerance) {
      r.holds = false;
      r.witness = {{"search", "directed"}, {"forget_gates", phi},  {"shape", shape_json(shape)},
                   {"p_in", coord_json(origin)}, {"p", coord_json(corner)}, {"value", v}};
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> extent(1, max_extent);
  double max_seen = 0.0, min_seen = 1.0;
  std::size_t evaluations = 0;
  for (int t = 0; t < trials; ++t) {
    std::vector<int> ext(static_cast<std::size_t>(dims));
    for (int& e : ext) e = extent(rng);
    const LatticeShape shape(ext);
    std::vector<GateActivations> field;
    field.reserve(shape.size());
    for (std::size_t i = 0; i < shape.size(); ++i) field.push_back(random_gates(kind, dims, rng));
    const auto coef = coefficient_field(kind, dims, field);
    const int dir_index = t % ScanDirection::count(dims);
    const auto plan = make_scan_plan(shape, ScanDirection::from_index(dims, dir_index));
    for (std::size_t in = 0; in < shape.size(); ++in) {
      const Coord p_in = shape.coord(in);
      const auto jac = truncated_state_jacobian(coef, p_in, plan);
      for (std::size_t i = 0; i < jac.values.size(); ++i) {
        const double v = jac.values[i];
        ++evaluations;
        max_seen = std::max(max_seen, v);
        min_seen = std::min(min_seen, v);
        if (r.holds && (v < 0.0 || v > 1.0 + kNegTolerance || !std::isfinite(v))) {
          r.holds = false;
          r.witness = {{"search", "random"}, {"trial", t},        {"seed", seed},
                       {"shape", shape_json(shape)}, {"direction", dir_index}, {"p_in", coord_json(p_in)},
                       {"p", coord_json(shape.coord(i))}, {"value", v}};
        }
      }
    }
  }
  r.details = {{"trials", trials},     {"max_extent", max_extent}, {"evaluations", evaluations},
               {"max_jacobian", max_seen}, {"min_jacobian", min_seen}, {"tolerance", kNegTolerance}};
  return r;
}

double nvg_epsilon(CellKind kind, int dims, int k, double delta) {
  require(delta > 0.0 && delta < 1.0, "nvg: delta must lie in (0,1)");
  require(k >= 0 && dims >= 1, "nvg: bad window");
  // TypeC carries gamma_4 as one extra factor per step
  const int extra = kind == CellKind::TypeC ? 1 : 0;
  if (!is_mixing_kind(kind) || dims == 1)
    return std::min(delta / dims, 1.0 - std::pow(1.0 - delta, 1.0 / ((1 + extra) * k + 1)));
  return std::min(delta, (1.0 - std::pow(1.0 - delta, 1.0 / ((2 + extra) * k + 1))) / (dims - 1));
}

namespace {

bool leq(const Coord& a, const Coord& b) {
  for (int d = 0; d < a.dims(); ++d)
    if (a[d] > b[d]) return false;
  return true;
}

double input_gate_of(CellKind kind, const GateActivations& g) {
  if (kind == CellKind::Unit) return 1.0;
  if (has_tied_input_gate(kind)) return 1.0 - g.forget.value();
  return g.input_gate.value();
}

}  // namespace

std::vector<GateActivations> nvg_schedule(CellKind kind, const LatticeShape& shape, const Coord& p_in,
                                          const Coord& p_out, double delta) {
  const int dims = shape.dims();
  require(p_in.dims() == dims && p_out.dims() == dims, "nvg: coordinate dimension mismatch");
  require(leq(p_in, p_out), "nvg: p_in must be <= p_out");
  require(shape.contains(p_out), "nvg: window outside lattice");
  int k = 0;
  for (int d = 0; d < dims; ++d) k += p_out[d] - p_in[d];
  const double eps = nvg_epsilon(kind, dims, k, delta);
  const auto layout = gate_layout(kind, dims);
  const ScanDirection fwd = ScanDirection::from_index(dims, 0);
  std::vector<GateActivations> field;
  field.reserve(shape.size());
  for (std::size_t lin = 0; lin < shape.size(); ++lin) {
    const Coord p = shape.coord(lin);
    const bool at_in = p == p_in;
    const bool inside = !at_in && leq(p_in, p) && leq(p, p_out);
    const auto preds = predecessors(p, fwd, shape);
    std::vector<bool> in_p(static_cast<std::size_t>(dims), false);
    int n_p = 0;
    for (int d = 0; d < dims; ++d) {
      const auto& q = preds[static_cast<std::size_t>(d)];
      if (inside && q && leq(p_in, *q)) {
        in_p[static_cast<std::size_t>(d)] = true;
        ++n_p;
      }
    }
    std::vector<double> u(layout.size(), 0.5);
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const auto d = static_cast<std::size_t>(layout[i].dim);
      switch (layout[i].role) {
        case GateRole::CellInput: u[i] = 0.0; break;
        case GateRole::InputGate: u[i] = at_in ? 1.0 - eps : eps; break;
        case GateRole::ForgetDim: u[i] = in_p[d] ? (1.0 - eps) / n_p : eps; break;
        case GateRole::Forget: u[i] = inside ? 1.0 - eps : eps; break;
        case GateRole::Lambda:
          if (kind == CellKind::LstmStableReduced)
            u[i] = in_p[0] && in_p[1] ? 0.5 : in_p[0] ? 1.0 - eps : in_p[1] ? eps : 0.5;
          else
            u[i] = in_p[d] ? 1.0 - eps : eps;
          break;
        case GateRole::Gamma4: u[i] = 1.0 - eps; break;
        default: break;
      }
    }
    field.push_back(gates_from_units(kind, dims, u));
  }
  return field;
}

PropertyReport nvg_probe(CellKind kind, int dims, const Coord& p_in, const Coord& p_out, double delta) {
  require(kind_supports_dims(kind, dims), "nvg_probe: kind does not support this dimension");
  std::vector<int> ext(static_cast<std::size_t>(dims));
  for (int d = 0; d < dims; ++d) ext[static_cast<std::size_t>(d)] = p_out[d] + 2;
  const LatticeShape shape(ext);
  const auto field = nvg_schedule(kind, shape, p_in, p_out, delta);
  int k = 0;
  for (int d = 0; d < dims; ++d) k += p_out[d] - p_in[d];
  const double eps = nvg_epsilon(kind, dims, k, delta);
  const auto coef = coefficient_field(kind, dims, field);
  const auto plan = make_scan_plan(shape, ScanDirection::from_index(dims, 0));
  const bool tied = has_tied_input_gate(kind);

  PropertyReport r;
  r.property = Property::NVG;
  r.kind = kind;
  r.dims = dims;
  r.holds = true;
  double in_min = 1.0, in_max = 0.0, out_max = 0.0, other_rows_max = 0.0;
  std::size_t other_rows_failing = 0;
  for (std::size_t l1 = 0; l1 < shape.size(); ++l1) {
    const Coord p1 = shape.coord(l1);
    const bool is_in = p1 == p_in;
    const double iota = input_gate_of(kind, field[l1]);
    const auto jac = truncated_state_jacobian(coef, p1, plan);
    for (std::size_t l2 = 0; l2 < shape.size(); ++l2) {
      const Coord p2 = shape.coord(l2);
      const double g = jac.values[l2] * iota;
      const bool window = is_in && leq(p_in, p2) && leq(p2, p_out);
      if (!is_in && tied) {
        other_rows_max = std::max(other_rows_max, g);
        if (g > delta + kNvgTolerance) ++other_rows_failing;
        continue;
      }
      bool ok;
      if (window) {
        in_min = std::min(in_min, g);
        in_max = std::max(in_max, g);
        ok = g >= 1.0 - delta - kNvgTolerance && g <= 1.0 + kNvgTolerance;
      } else {
        out_max = std::max(out_max, g);
        ok = g >= 0.0 && g <= delta + kNvgTolerance;
      }
      if (!ok && r.holds) {
        r.holds = false;
        r.witness = {{"p1", coord_json(p1)},
                     {"p2", coord_json(p2)},
                     {"gradient", g},
                     {"required", window ? nlohmann::json::array({1.0 - delta, 1.0}) : nlohmann::json::array({0.0, delta})},
                     {"epsilon", eps}};
      }
    }
  }
  r.details = {{"p_in", coord_json(p_in)},    {"p_out", coord_json(p_out)}, {"delta", delta}, {"tolerance", kNvgTolerance},
               {"epsilon", eps},              {"window_l1", k},             {"shape", shape_json(shape)},
               {"in_window_min", in_min},     {"in_window_max", in_max},    {"outside_max", out_max},
               {"rows_checked", tied ? "p1 = p_in" : "all p1"}};
  if (tied) {
    r.details["other_rows_max"] = other_rows_max;
    r.details["other_rows_above_delta"] = other_rows_failing;
  }
  return r;
}

namespace {

double dtanh(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

// ∂y/∂s with s^- held fixed; `free` is the gate left unconstrained by the
// open/closed setting of the kind.
double output_slope(CellKind kind, bool open, double eps, double s, double sp, double free) {
  const double hi = 1.0 - eps;
  switch (kind) {
    case CellKind::Leaky: return (open ? hi : eps) * dtanh(s);
    case CellKind::LeakyLP:
    case CellKind::TypeC: {
      const double w0 = open ? hi : eps;
      return w0 * dtanh(w0 * s + free * sp);
    }
    case CellKind::TypeD: return open ? hi * hi : eps * free;
    case CellKind::TypeE: {
      const double g2 = open ? hi : eps;
      const double g3 = open ? free : eps;
      return (g2 + g3) * dtanh(g2 * s + g3 * (s - sp));
    }
    case CellKind::TypeB: return 0.5;
    case CellKind::Unit: return 1.0;
    default: break;
  }
  throw ContractViolation("output_slope: kind has no bounded-state output rule");
}

}  // namespace

double cod_open_bound(CellKind kind, double eps) {
  switch (kind) {
    case CellKind::Leaky: return (1.0 - eps) * dtanh(1.0);
    case CellKind::LeakyLP:
    case CellKind::TypeC: return (1.0 - eps) * dtanh(2.0);
    case CellKind::TypeD: return (1.0 - eps) * (1.0 - eps);
    case CellKind::TypeE: return (1.0 - eps) * dtanh(3.0);
    case CellKind::TypeB: return 0.5;
    case CellKind::Unit: return 1.0;
    default: break;
  }
  throw ContractViolation("cod_open_bound: only defined for bounded-output kinds");
}

PropertyReport cod_probe(CellKind kind, int drive_length) {
  require(drive_length >= 1, "cod_probe: drive_length must be >= 1");
  const double eps = kCodEpsilon;
  PropertyReport r;
  r.property = Property::COD;
  r.kind = kind;
  r.dims = kind == CellKind::LstmStableReduced ? 2 : 1;

  if (has_bounded_state(kind) || kind == CellKind::Unit) {
    constexpr int kStates = 41, kGates = 21;
    double open_min = 1e300, closed_max = 0.0;
    for (int i = 0; i < kStates; ++i) {
      const double s = -1.0 + 2.0 * i / (kStates - 1);
      for (int j = 0; j < kStates; ++j) {
        const double sp = -1.0 + 2.0 * j / (kStates - 1);
        for (int k = 0; k < kGates; ++k) {
          const double free = static_cast<double>(k) / (kGates - 1);
          open_min = std::min(open_min, output_slope(kind, true, eps, s, sp, free));
          closed_max = std::max(closed_max, output_slope(kind, false, eps, s, sp, free));
        }
      }
    }
    const double bound = cod_open_bound(kind, eps);
    r.holds = closed_max < open_min;
    r.details = {{"epsilon", eps},         {"delta1", open_min},      {"delta2", closed_max},
                 {"delta1_bound", bound},  {"state_range", {-1.0, 1.0}}};
    if (!r.holds)
      r.witness = {{"reason", "no gate scales dy/ds"}, {"open_min", open_min}, {"closed_max", closed_max}};
    return r;
  }

  const int dims = r.dims;
  const double hi = 1.0 - eps;
  const double input = 0.9;
  std::vector<double> u(gate_layout(kind, dims).size(), hi);
  u[0] = input;
  if (kind == CellKind::LstmStableReduced) u[2] = 0.5;
  const GateActivations g = gates_from_units(kind, dims, u);
  double s = 0.0;
  for (int t = 0; t < drive_length; ++t) {
    std::vector<std::optional<double>> prev(static_cast<std::size_t>(dims), t == 0 ? std::nullopt : std::optional(s));
    s = cell_forward(kind, g, prev).s;
  }
  const double slope = hi * dtanh(s);
  r.holds = slope >= eps;
  r.details = {{"epsilon", eps}, {"drive_length", drive_length}, {"input", input}, {"final_state", s},
               {"open_gate_slope", slope}, {"closed_gate_slope_max", eps}};
  if (!r.holds)
    r.witness = {{"drive_length", drive_length}, {"input", input}, {"gates", hi}, {"final_state", s},
                 {"open_gate_slope", slope}};
  return r;
}

std::vector<SeriesPoint> explosion_series(int dims, double phi, int k_max) {
  require(dims >= 1 && dims <= kMaxDims, "explosion_series: bad dimension");
  require(phi > 0.0 && phi < 1.0, "explosion_series: phi must lie in (0,1)");
  require(k_max >= 1, "explosion_series: k_max must be >= 1");
  std::vector<int> ext(static_cast<std::size_t>(dims), k_max + 1);
  const LatticeShape shape(ext);
  const std::vector<double> coef(shape.size() * static_cast<std::size_t>(dims), phi);
  const auto jac = truncated_state_jacobian(coef, Coord(dims), make_scan_plan(shape, ScanDirection::from_index(dims, 0)));
  std::vector<SeriesPoint> out;
  for (int k = 1; k <= k_max; ++k) {
    Coord p(dims);
    for (int d = 0; d < dims; ++d) p[d] = k;
    out.push_back({k, jac.at(p)});
  }
  return out;
}

double explosion_closed_form(int dims, double phi, int k) {
  const double lg = std::lgamma(dims * k + 1.0) - dims * std::lgamma(k + 1.0);
  return std::exp(lg + dims * k * std::log(phi));
}

bool series_diverges(const std::vector<SeriesPoint>& series) {
  require(series.size() >= 2, "series_diverges: need at least two terms");
  const auto& a = series[series.size() - 2];
  const auto& b = series.back();
  return b.value > a.value;
}

bool satisfies_gain_bound(const TransferFunction& tf) { return std::abs(tf.alpha0) <= 1.0 - tf.alpha1; }

TransferFunction transfer_for_cell(CellKind kind, const GateActivations& g) {
  const double phi = g.forget.value_or(0.0);
  TransferFunction tf{1.0 - phi, phi, 0.0, 0.0};
  switch (kind) {
    case CellKind::Leaky: tf.b0 = g.output.value(); break;
    case CellKind::LeakyLP:
      tf.b0 = g.output0.value();
      tf.b1 = g.output1.value();
      break;
    case CellKind::TypeB: tf.b0 = tf.b1 = 0.5; break;
    case CellKind::TypeC:
      tf.alpha1 = phi * g.gamma4.value();
      tf.b0 = g.gamma2.value();
      tf.b1 = g.gamma3.value();
      break;
    case CellKind::TypeD:
      tf.b0 = g.gamma2.value() * g.gamma3.value();
      tf.b1 = (1.0 - g.gamma2.value()) * g.gamma3.value();
      break;
    case CellKind::TypeE:
      tf.b0 = g.gamma2.value() + g.gamma3.value();
      tf.b1 = -g.gamma3.value();
      break;
    default: throw ContractViolation("transfer_for_cell: kind is not a first-order filter cell");
  }
  return tf;
}

TransferFunction butterworth(double phi) { return {1.0 - phi, phi, 0.5, 0.5}; }

Magnitude magnitude(const TransferFunction& tf, double omega) {
  require(std::abs(tf.alpha1) < 1.0, "magnitude: pole on or outside the unit circle (|alpha1| >= 1)");
  const double c = std::cos(omega), s = std::sin(omega);
  Magnitude m;
  m.h1 = std::abs(tf.alpha0) / std::sqrt((1.0 - tf.alpha1 * c) * (1.0 - tf.alpha1 * c) + tf.alpha1 * tf.alpha1 * s * s);
  m.h2 = std::sqrt((tf.b0 + tf.b1 * c) * (tf.b0 + tf.b1 * c) + tf.b1 * tf.b1 * s * s);
  m.h = m.h1 * m.h2;
  return m;
}

std::vector<double> impulse_spectrum(const TransferFunction& tf, std::size_t n) {
  require(n >= 64 && std::has_single_bit(n), "impulse_spectrum: N must be a power of two >= 64");
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in, out, FFTW_ESTIMATE);
  double x_prev = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = tf.alpha0 * (i == 0 ? 1.0 : 0.0) + tf.alpha1 * x_prev;
    in[i] = tf.b0 * x + tf.b1 * x_prev;
    x_prev = x;
  }
  fftw_execute(plan);
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  fftw_destroy_plan(plan);
  fftw_free(in);
  fftw_free(out);
  return mag;
}

std::vector<SpectrumRow> spectrum(const TransferFunction& tf, std::size_t n) {
  const auto emp = impulse_spectrum(tf, n);
  std::vector<SpectrumRow> rows(emp.size());
  for (std::size_t k = 0; k < emp.size(); ++k) {
    rows[k].f = static_cast<double>(k) / static_cast<double>(n);
    rows[k].closed = magnitude(tf, 2.0 * std::numbers::pi * rows[k].f);
    rows[k].empirical = emp[k];
  }
  return rows;
}

double cutoff_frequency(double phi) {
  require(phi > -1.0 && phi < 1.0, "cutoff_frequency: phi must lie in (-1,1)");
  return std::atan((1.0 - phi) / (1.0 + phi)) / std::numbers::pi;
}

double gate_for_cutoff(double f) {
  require(f > 0.0 && f < 0.5, "gate_for_cutoff: f must lie in (0,0.5)");
  const double t = std::tan(std::numbers::pi * f);
  return (1.0 - t) / (1.0 + t);
}

}  // namespace mdcell
