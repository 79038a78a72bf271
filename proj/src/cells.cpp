#include "mdcell/cells.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "mdcell/error.hpp"

namespace mdcell {

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::Unit: return "unit";
    case CellKind::LstmNoForget: return "lstm-noforget";
    case CellKind::Lstm: return "lstm";
    case CellKind::LstmStable: return "stable";
    case CellKind::LstmStableReduced: return "stable-reduced";
    case CellKind::Leaky: return "leaky";
    case CellKind::LeakyLP: return "leakylp";
    case CellKind::TypeB: return "typeb";
    case CellKind::TypeC: return "typec";
    case CellKind::TypeD: return "typed";
    case CellKind::TypeE: return "typee";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  std::erase(n, '_');
  for (CellKind k : kAllCellKinds)
    if (n == to_string(k)) return k;
  if (n == "lstmstable" || n == "lstm-stable") return CellKind::LstmStable;
  if (n == "lstmstablereduced" || n == "stablereduced") return CellKind::LstmStableReduced;
  if (n == "lstmnoforget" || n == "noforget") return CellKind::LstmNoForget;
  if (n == "typea" || n == "leaky-lp") return CellKind::LeakyLP;
  if (n == "b") return CellKind::TypeB;
  if (n == "c") return CellKind::TypeC;
  if (n == "d") return CellKind::TypeD;
  if (n == "e") return CellKind::TypeE;
  throw ContractViolation("unknown cell kind '" + std::string(name) + "'");
}

bool kind_supports_dims(CellKind kind, int dims) {
  if (dims < 1) return false;
  if (kind == CellKind::LstmStableReduced) return dims == 2;
  return true;
}

bool has_bounded_state(CellKind kind) {
  switch (kind) {
    case CellKind::Leaky:
    case CellKind::LeakyLP:
    case CellKind::TypeB:
    case CellKind::TypeC:
    case CellKind::TypeD:
    case CellKind::TypeE: return true;
    default: return false;
  }
}

bool has_tied_input_gate(CellKind kind) { return has_bounded_state(kind); }

std::vector<GateSlot> gate_layout(CellKind kind, int dims) {
  require(kind_supports_dims(kind, dims),
          std::string("gate_layout: kind ") + std::string(to_string(kind)) + " does not support D=" +
              std::to_string(dims));
  std::vector<GateSlot> slots{{GateRole::CellInput}};
  auto lambdas = [&](int count) {
    for (int d = 0; d < count; ++d) slots.push_back({GateRole::Lambda, d});
  };
  switch (kind) {
    case CellKind::Unit: break;
    case CellKind::LstmNoForget:
      slots.push_back({GateRole::InputGate});
      slots.push_back({GateRole::Output});
      break;
    case CellKind::Lstm:
      slots.push_back({GateRole::InputGate});
      for (int d = 0; d < dims; ++d) slots.push_back({GateRole::ForgetDim, d});
      slots.push_back({GateRole::Output});
      break;
    case CellKind::LstmStable:
    case CellKind::LstmStableReduced:
      slots.push_back({GateRole::InputGate});
      lambdas(kind == CellKind::LstmStableReduced ? 1 : dims);
      slots.push_back({GateRole::Forget});
      slots.push_back({GateRole::Output});
      break;
    case CellKind::Leaky:
      lambdas(dims);
      slots.push_back({GateRole::Forget});
      slots.push_back({GateRole::Output});
      break;
    case CellKind::LeakyLP:
      lambdas(dims);
      slots.push_back({GateRole::Forget});
      slots.push_back({GateRole::Output0});
      slots.push_back({GateRole::Output1});
      break;
    case CellKind::TypeB:
      lambdas(dims);
      slots.push_back({GateRole::Forget});
      break;
    case CellKind::TypeC:
      lambdas(dims);
      slots.push_back({GateRole::Forget});
      slots.push_back({GateRole::Gamma2});
      slots.push_back({GateRole::Gamma3});
      slots.push_back({GateRole::Gamma4});
      break;
    case CellKind::TypeD:
    case CellKind::TypeE:
      lambdas(dims);
      slots.push_back({GateRole::Forget});
      slots.push_back({GateRole::Gamma2});
      slots.push_back({GateRole::Gamma3});
      break;
  }
  return slots;
}

namespace {

std::optional<double>* scalar_slot(GateActivations& g, GateRole role) {
  switch (role) {
    case GateRole::InputGate: return &g.input_gate;
    case GateRole::Forget: return &g.forget;
    case GateRole::Output: return &g.output;
    case GateRole::Output0: return &g.output0;
    case GateRole::Output1: return &g.output1;
    case GateRole::Gamma2: return &g.gamma2;
    case GateRole::Gamma3: return &g.gamma3;
    case GateRole::Gamma4: return &g.gamma4;
    default: return nullptr;
  }
}

const std::optional<double>* scalar_slot(const GateActivations& g, GateRole role) {
  return scalar_slot(const_cast<GateActivations&>(g), role);
}

void check_gate_value(double v, const char* what) {
  require(std::isfinite(v) && v >= 0.0 && v <= 1.0, std::string("gate ") + what + " outside [0,1]");
}

}  // namespace

void validate(const GateActivations& g, CellKind kind, int dims) {
  const auto layout = gate_layout(kind, dims);
  require(std::isfinite(g.cell_input) && std::abs(g.cell_input) <= 1.0, "cell input outside [-1,1]");
  int n_forget_dim = 0, n_lambda = 0;
  GateActivations probe;  // records which scalar roles the kind demands
  for (const GateSlot& slot : layout) {
    if (slot.role == GateRole::ForgetDim) ++n_forget_dim;
    else if (slot.role == GateRole::Lambda) ++n_lambda;
    else if (auto* p = scalar_slot(probe, slot.role)) *p = 0.0;
  }
  require(static_cast<int>(g.forget_dim.size()) == n_forget_dim,
          "gate/kind mismatch: per-dimension forget gates");
  require(static_cast<int>(g.lambda.size()) == n_lambda, "gate/kind mismatch: lambda gates");
  const GateRole roles[] = {GateRole::InputGate, GateRole::Forget, GateRole::Output, GateRole::Output0,
                            GateRole::Output1,   GateRole::Gamma2, GateRole::Gamma3, GateRole::Gamma4};
  for (GateRole r : roles) {
    const bool wanted = scalar_slot(probe, r)->has_value();
    const bool present = scalar_slot(g, r)->has_value();
    require(wanted == present, "gate/kind mismatch for " + std::string(to_string(kind)));
    if (present) check_gate_value(**scalar_slot(g, r), "scalar");
  }
  for (double v : g.forget_dim) check_gate_value(v, "phi_d");
  for (double v : g.lambda) check_gate_value(v, "lambda_d");
}

GateActivations gates_from_units(CellKind kind, int dims, std::span<const double> activations) {
  const auto layout = gate_layout(kind, dims);
  require(activations.size() == layout.size(), "gates_from_units: wrong unit count");
  GateActivations g;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const double v = activations[i];
    switch (layout[i].role) {
      case GateRole::CellInput: g.cell_input = v; break;
      case GateRole::ForgetDim: g.forget_dim.push_back(v); break;
      case GateRole::Lambda: g.lambda.push_back(v); break;
      default: *scalar_slot(g, layout[i].role) = v; break;
    }
  }
  return g;
}

std::vector<double> units_from_gates(CellKind kind, int dims, const GateActivations& g) {
  const auto layout = gate_layout(kind, dims);
  std::vector<double> out;
  out.reserve(layout.size());
  for (const GateSlot& slot : layout) {
    switch (slot.role) {
      case GateRole::CellInput: out.push_back(g.cell_input); break;
      case GateRole::ForgetDim: out.push_back(g.forget_dim.at(static_cast<std::size_t>(slot.dim))); break;
      case GateRole::Lambda: out.push_back(g.lambda.at(static_cast<std::size_t>(slot.dim))); break;
      default: out.push_back(scalar_slot(g, slot.role)->value()); break;
    }
  }
  return out;
}

CellParams CellParams::zeros(CellKind kind, int dims, int inputs, int hidden) {
  CellParams p;
  p.kind = kind;
  p.dims = dims;
  const auto layout = gate_layout(kind, dims);
  p.units.resize(layout.size());
  for (auto& u : p.units) {
    u.input.assign(static_cast<std::size_t>(inputs), 0.0);
    u.recurrent.assign(static_cast<std::size_t>(dims), std::vector<double>(static_cast<std::size_t>(hidden), 0.0));
  }
  return p;
}

double gate_net(const CellParams& params, int slot, std::span<const double> inputs,
                std::span<const std::optional<std::vector<double>>> prev_outputs) {
  require(slot >= 0 && static_cast<std::size_t>(slot) < params.units.size(), "gate_net: slot out of range");
  const UnitWeights& u = params.units[static_cast<std::size_t>(slot)];
  require(inputs.size() == u.input.size(), "gate_net: input width mismatch");
  require(prev_outputs.size() == u.recurrent.size(), "gate_net: predecessor count mismatch");
  double net = u.bias;
  for (std::size_t i = 0; i < inputs.size(); ++i) net += u.input[i] * inputs[i];
  for (std::size_t d = 0; d < prev_outputs.size(); ++d) {
    if (!prev_outputs[d]) continue;
    const auto& h = *prev_outputs[d];
    require(h.size() == u.recurrent[d].size(), "gate_net: hidden width mismatch");
    for (std::size_t j = 0; j < h.size(); ++j) net += u.recurrent[d][j] * h[j];
  }
  return net;
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double activate(UnitActivation kind, double net) {
  return kind == UnitActivation::Logistic ? logistic(net) : std::tanh(net);
}

std::vector<double> convex_weights(std::span<const double> lambda) {
  require(!lambda.empty(), "convex_weights: need at least one lambda");
  double sum = 0.0;
  for (double l : lambda) sum += l;
  std::vector<double> w(lambda.size());
  if (sum < kLambdaFloor) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(lambda.size()));
  } else {
    for (std::size_t d = 0; d < lambda.size(); ++d) w[d] = lambda[d] / sum;
  }
  return w;
}

double convex_prev(std::span<const double> lambda, std::span<const std::optional<double>> prev_states) {
  require(lambda.size() == prev_states.size(), "convex_prev: lambda/state count mismatch");
  const auto w = convex_weights(lambda);
  double acc = 0.0;
  for (std::size_t d = 0; d < w.size(); ++d)
    if (prev_states[d]) acc += *prev_states[d] * w[d];
  return acc;
}

double mixed_prev(CellKind kind, const GateActivations& g, std::span<const std::optional<double>> prev_states) {
  if (kind == CellKind::LstmStableReduced) {
    require(prev_states.size() == 2 && g.lambda.size() == 1, "reduced cell needs D=2 and one lambda");
    const double w0 = g.lambda[0];
    const double w1 = 1.0 - w0;
    return (prev_states[0] ? *prev_states[0] * w0 : 0.0) + (prev_states[1] ? *prev_states[1] * w1 : 0.0);
  }
  return convex_prev(g.lambda, prev_states);
}

CellState cell_forward(CellKind kind, const GateActivations& g,
                       std::span<const std::optional<double>> prev_states) {
  const int dims = static_cast<int>(prev_states.size());
  validate(g, kind, dims);
  const double cin = g.cell_input;
  CellState out;
  switch (kind) {
    case CellKind::Unit:
      // the unit's net already went through tanh as the cell input
      out.s = out.y = cin;
      break;
    case CellKind::LstmNoForget: {
      double s = *g.input_gate * cin;
      for (const auto& p : prev_states)
        if (p) s += *p;
      out.s = s;
      out.y = std::tanh(s) * *g.output;
      break;
    }
    case CellKind::Lstm: {
      double s = *g.input_gate * cin;
      for (int d = 0; d < dims; ++d)
        if (prev_states[static_cast<std::size_t>(d)]) s += *prev_states[static_cast<std::size_t>(d)] * g.forget_dim[static_cast<std::size_t>(d)];
      out.s = s;
      out.y = std::tanh(s) * *g.output;
      break;
    }
    case CellKind::LstmStable:
    case CellKind::LstmStableReduced: {
      const double prev = mixed_prev(kind, g, prev_states);
      out.s = *g.input_gate * cin + prev * *g.forget;
      out.y = *g.output * std::tanh(out.s);
      break;
    }
    case CellKind::Leaky: {
      const double prev = mixed_prev(kind, g, prev_states);
      out.s = (1.0 - *g.forget) * cin + prev * *g.forget;
      out.y = *g.output * std::tanh(out.s);
      break;
    }
    case CellKind::LeakyLP: {
      const double prev = mixed_prev(kind, g, prev_states);
      out.s = (1.0 - *g.forget) * cin + prev * *g.forget;
      out.y = std::tanh(out.s * *g.output0 + prev * *g.output1);
      break;
    }
    case CellKind::TypeB: {
      const double prev = mixed_prev(kind, g, prev_states);
      out.s = (1.0 - *g.forget) * cin + prev * *g.forget;
      out.y = (out.s + prev) / 2.0;
      break;
    }
    case CellKind::TypeC: {
      const double prev = mixed_prev(kind, g, prev_states);
      out.s = (1.0 - *g.forget) * cin + prev * (*g.forget * *g.gamma4);
      out.y = std::tanh(out.s * *g.gamma2 + prev * *g.gamma3);
      break;
    }
    case CellKind::TypeD: {
      const double prev = mixed_prev(kind, g, prev_states);
      out.s = (1.0 - *g.forget) * cin + prev * *g.forget;
      out.y = *g.gamma3 * (*g.gamma2 * out.s + (1.0 - *g.gamma2) * prev);
      break;
    }
    case CellKind::TypeE: {
      const double prev = mixed_prev(kind, g, prev_states);
      out.s = (1.0 - *g.forget) * cin + prev * *g.forget;
      out.y = std::tanh(*g.gamma2 * out.s + *g.gamma3 * (out.s - prev));
      break;
    }
  }
  return out;
}

}  // namespace mdcell
