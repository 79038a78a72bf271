#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mdcell/cells.hpp"
#include "mdcell/lattice.hpp"

namespace mdcell {

enum class Property { NVG, NEG, COD };

std::string_view to_string(Property p);
Property parse_property(std::string_view name);

/// Outcome of one property probe. A violated verdict always carries a
/// replayable witness (seed, trial and coordinates, or the gate schedule).
struct PropertyReport {
  Property property = Property::NEG;
  CellKind kind = CellKind::Lstm;
  int dims = 1;
  bool holds = false;
  std::uint64_t seed = 0;
  nlohmann::json witness = nlohmann::json::object();
  nlohmann::json details = nlohmann::json::object();
};

nlohmann::json to_json(const PropertyReport& r);
std::string to_text(const PropertyReport& r);

/// Tolerance on the upper bound J <= 1 for accumulated rounding.
inline constexpr double kNegTolerance = 1e-12;

/// Random gate fields (every gate uniform in (0,1)) on random lattices with
/// extents in [1, max_extent]; the truncated Jacobian from every p_in must stay
/// in [0,1]. For Lstm and LstmNoForget with D >= 2 a directed search with all
/// forget gates at 1 - 1e-9 on a 6^D lattice is run as well.
PropertyReport neg_probe(CellKind kind, int dims, int trials, int max_extent, std::uint64_t seed);

/// Epsilon of the constructive NVG schedule for a window of L1 length `k`.
double nvg_epsilon(CellKind kind, int dims, int k, double delta);

/// Rounding allowance on the NVG intervals; the schedule attains 1 - δ exactly.
inline constexpr double kNvgTolerance = 1e-12;

/// Gate schedule of the NVG construction on `shape` (forward scan): input
/// gate open only at p_in, forget/lambda gates open only inside the window.
std::vector<GateActivations> nvg_schedule(CellKind kind, const LatticeShape& shape, const Coord& p_in,
                                          const Coord& p_out, double delta);

/// Evaluates g = ∂s^{p2}/∂c_in^{p1} = J_{p1}(p2)·ι(p1) under the schedule and
/// checks [1-δ,1] for p1 = p_in, p2 in the window and [0,δ] elsewhere. For
/// kinds with ι = 1 - φ only the p1 = p_in row is checked; the other rows are
/// reported in the details.
PropertyReport nvg_probe(CellKind kind, int dims, const Coord& p_in, const Coord& p_out, double delta);

/// Gate level used for "open" (1 - eps) and "closed" (eps) in cod_probe.
inline constexpr double kCodEpsilon = 1e-3;

/// Bounded-state kinds: min of ∂y/∂s with the output path open and max with it
/// closed, over |s|, |s^-| <= 1 and every free gate in [0,1]. Holds when the
/// closed maximum is below the open minimum. Unbounded kinds: drives a 1D
/// cell with open gates and constant input 0.9 for `drive_length` steps and
/// reports the open-gate derivative at the end.
PropertyReport cod_probe(CellKind kind, int drive_length);

/// Closed-form lower bound on the open-gate derivative for bounded kinds.
double cod_open_bound(CellKind kind, double eps = kCodEpsilon);

struct SeriesPoint {
  int k = 0;
  double value = 0.0;
};

/// Truncated Jacobian at the diagonal offsets (k,...,k), k = 1..k_max, for a
/// uniform forget-gate field phi (MD LSTM), via the truncated DP.
std::vector<SeriesPoint> explosion_series(int dims, double phi, int k_max);

/// ((Dk)! / (k!)^D) · phi^(Dk), evaluated in log space.
double explosion_closed_form(int dims, double phi, int k);

/// Divergent when the last ratio of consecutive terms exceeds 1.
bool series_diverges(const std::vector<SeriesPoint>& series);

struct TransferFunction {
  double alpha0 = 1.0;
  double alpha1 = 0.0;
  double b0 = 1.0;
  double b1 = 0.0;
};

/// |alpha0| <= 1 - alpha1 (unit gain at ω = 0 for alpha1 >= 0).
bool satisfies_gain_bound(const TransferFunction& tf);

/// Coefficients of a first-order cell given its gate values (Leaky, LeakyLP,
/// TypeB..TypeE). Leaky is linearised with b0 = ω.
TransferFunction transfer_for_cell(CellKind kind, const GateActivations& g);

/// alpha1 = phi, alpha0 = 1 - phi, b0 = b1 = 1/2.
TransferFunction butterworth(double phi);

struct Magnitude {
  double h1 = 0.0;
  double h2 = 0.0;
  double h = 0.0;
};

/// Closed-form magnitudes at angular frequency omega. |alpha1| < 1 required.
Magnitude magnitude(const TransferFunction& tf, double omega);

/// Runs the recurrence on a unit impulse for N samples and returns the DFT
/// magnitude at f = k/N, k = 0..N/2. N must be a power of two >= 64.
std::vector<double> impulse_spectrum(const TransferFunction& tf, std::size_t n);

struct SpectrumRow {
  double f = 0.0;
  Magnitude closed;
  double empirical = 0.0;
};

/// Closed form and impulse DFT side by side at f = k/N.
std::vector<SpectrumRow> spectrum(const TransferFunction& tf, std::size_t n);

/// f = atan((1 - phi) / (1 + phi)) / π for phi in (-1, 1).
double cutoff_frequency(double phi);
/// Inverse of cutoff_frequency for f in (0, 0.5).
double gate_for_cutoff(double f);

}  // namespace mdcell
