#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mdcell {

/// Update rule of a first-order MD cell.
///
/// TypeB..TypeE are the filter-derived layouts; TypeA is LeakyLP. For those
/// kinds gamma_1 is stored in `forget` because it plays the forget-gate role
/// (alpha_1 of the first-order filter).
enum class CellKind {
  Unit,
  LstmNoForget,
  Lstm,
  LstmStable,
  LstmStableReduced,
  Leaky,
  LeakyLP,
  TypeB,
  TypeC,
  TypeD,
  TypeE,
};

inline constexpr CellKind kAllCellKinds[] = {
    CellKind::Unit,   CellKind::LstmNoForget, CellKind::Lstm,  CellKind::LstmStable,
    CellKind::LstmStableReduced, CellKind::Leaky, CellKind::LeakyLP, CellKind::TypeB,
    CellKind::TypeC,  CellKind::TypeD,        CellKind::TypeE,
};

std::string_view to_string(CellKind kind);
/// Accepts the canonical names from to_string plus a few aliases
/// ("stable", "lstmstable", "typea", ...). Case-insensitive.
CellKind parse_cell_kind(std::string_view name);

/// True when D is a valid dimension for the kind (LstmStableReduced needs D=2).
bool kind_supports_dims(CellKind kind, int dims);

/// |s| <= 1 for inputs in [-1,1]: Leaky, LeakyLP and TypeB..E.
bool has_bounded_state(CellKind kind);

/// Kinds whose input gate is tied to the forget gate (iota = 1 - phi).
bool has_tied_input_gate(CellKind kind);

enum class GateRole {
  CellInput,   // c_in, tanh
  InputGate,   // iota
  Forget,      // phi (gamma_1 for filter layouts)
  ForgetDim,   // phi_d, one per dimension (MD LSTM)
  Lambda,      // lambda_d
  Output,      // omega
  Output0,     // omega_0 (LeakyLP / TypeA gamma_2)
  Output1,     // omega_1 (LeakyLP / TypeA gamma_3)
  Gamma2,
  Gamma3,
  Gamma4,
};

struct GateSlot {
  GateRole role;
  int dim = 0;  // only meaningful for ForgetDim and Lambda
};

/// Units of a cell in storage order; the cell input is always slot 0.
std::vector<GateSlot> gate_layout(CellKind kind, int dims);

/// Per-position unit activations of one cell. Exactly the gates demanded by
/// the kind are engaged; everything else stays empty.
struct GateActivations {
  double cell_input = 0.0;
  std::optional<double> input_gate;
  std::optional<double> forget;
  std::optional<double> output;
  std::optional<double> output0;
  std::optional<double> output1;
  std::optional<double> gamma2;
  std::optional<double> gamma3;
  std::optional<double> gamma4;
  std::vector<double> forget_dim;
  std::vector<double> lambda;
};

/// Throws ContractViolation unless `g` carries exactly the gates of `kind`.
/// Gate values must lie in [0,1] (the closed interval admits the limiting
/// schedules used by the analysis probes) and the cell input in [-1,1].
void validate(const GateActivations& g, CellKind kind, int dims);

/// Scatter layout-ordered activations into a GateActivations record.
GateActivations gates_from_units(CellKind kind, int dims, std::span<const double> activations);

/// Inverse of gates_from_units.
std::vector<double> units_from_gates(CellKind kind, int dims, const GateActivations& g);

struct CellState {
  double s = 0.0;
  double y = 0.0;
};

/// Weights of one unit: feed-forward row, one recurrent row per dimension
/// (over the H same-layer outputs of the predecessor) and a bias.
struct UnitWeights {
  std::vector<double> input;
  std::vector<std::vector<double>> recurrent;
  double bias = 0.0;
};

/// Weights of a single cell, one UnitWeights per slot of gate_layout.
struct CellParams {
  CellKind kind = CellKind::Lstm;
  int dims = 1;
  std::vector<UnitWeights> units;

  /// Zero-initialised weights for `inputs` feed-forward features and
  /// `hidden` same-layer outputs.
  static CellParams zeros(CellKind kind, int dims, int inputs, int hidden);
};

/// net = w_in . inputs + sum_d w_rec[d] . prev_outputs[d] + bias. An absent
/// predecessor contributes nothing.
double gate_net(const CellParams& params, int slot, std::span<const double> inputs,
                std::span<const std::optional<std::vector<double>>> prev_outputs);

enum class UnitActivation { Logistic, Tanh };

double logistic(double x);
double activate(UnitActivation kind, double net);

/// Lower bound on the lambda-weight denominator; below it the weights fall
/// back to uniform 1/D.
inline constexpr double kLambdaFloor = 1e-12;

/// Normalised convex weights lambda_d / sum(lambda).
std::vector<double> convex_weights(std::span<const double> lambda);

/// sum_d s_d * w_d with the normalised lambda weights; absent states read 0.
double convex_prev(std::span<const double> lambda, std::span<const std::optional<double>> prev_states);

/// Convex mixture of the predecessors as the kind sees it. Handles the
/// reduced (lambda_2 = 1 - lambda_1) variant. Only for kinds that mix.
double mixed_prev(CellKind kind, const GateActivations& g, std::span<const std::optional<double>> prev_states);

/// One cell update at a lattice position.
CellState cell_forward(CellKind kind, const GateActivations& g,
                       std::span<const std::optional<double>> prev_states);

}  // namespace mdcell
