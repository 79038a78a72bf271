#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mdcell/cells.hpp"
#include "mdcell/config.hpp"
#include "mdcell/lattice.hpp"

namespace mdcell {

/// Flat parameter vector. Matrices are addressed by offset and stored
/// row-major.
struct ParamStore {
  std::vector<Real> value;

  /// Appends `count` zero parameters and returns their offset.
  int allocate(std::size_t count);
  std::size_t size() const { return value.size(); }
};

/// A view of `len` consecutive values of a tape node. node < 0 means absent.
struct Operand {
  int node = -1;
  int offset = 0;
  int len = 0;

  bool present() const { return node >= 0; }
  Operand slice(int off, int n) const { return {node, offset + off, n}; }
};

/// Where in a network a node was recorded; used to report divergence.
struct Site {
  int layer = -1;
  int direction = -1;
  std::int64_t position = -1;  // linear lattice index, -1 when not positional
};

struct Divergence {
  int node = -1;
  Site site;
  std::string op;
  std::string describe() const;
};

/// One W·x term of an affine node. `param` is the offset of a row-major
/// [rows × x.len] matrix in the ParamStore. Absent x contributes nothing.
struct AffineTerm {
  int param = -1;
  Operand x;
};

/// Reverse-mode tape over vector-valued nodes. Values are computed eagerly
/// as nodes are recorded; backward() propagates whatever adjoints the caller
/// seeded, in exact reverse recording order.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Input,
    Constant,
    Affine,
    Logistic,
    Tanh,
    OneMinus,
    Scale,
    Mul,
    Add,
    Sub,
    Sum,
    Blend,
    ConvexMix,
    Concat,
  };

  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}

  void clear();
  std::size_t node_count() const { return nodes_.size(); }
  void set_site(const Site& site) { site_ = site; }

  Operand input(std::span<const Real> values);
  Operand constant(std::span<const Real> values);

  /// bias (offset of `rows` parameters, or -1) + Σ W_k · x_k
  Operand affine(int rows, int bias_param, std::span<const AffineTerm> terms);
  Operand logistic(Operand a);
  Operand tanh(Operand a);
  Operand one_minus(Operand a);
  Operand scale(Operand a, Real c);
  Operand mul(Operand a, Operand b);
  Operand add(Operand a, Operand b);
  Operand sub(Operand a, Operand b);
  /// Elementwise sum of equally long operands; absent ones are skipped.
  Operand sum(std::span<const Operand> terms);
  /// (1 - t)·a + t·b
  Operand blend(Operand a, Operand b, Operand t);
  /// Σ_d w_d s_d with w_d = λ_d / Σλ (uniform below kLambdaFloor). With
  /// `reduced`, lambda holds one operand and the weights are (λ, 1 - λ).
  /// Absent predecessor states read as 0.
  Operand convex_mix(std::span<const Operand> lambda, std::span<const Operand> prev, bool reduced);
  Operand concat(std::span<const Operand> parts);

  std::span<const Real> value(Operand a) const;
  std::span<Real> adjoint(Operand a);
  std::span<const Real> adjoint_view(Operand a) const;

  /// Zero every node adjoint (parameter gradients are left alone).
  void zero_adjoints();
  /// Propagate seeded adjoints to all nodes. Parameter gradients are
  /// accumulated into `param_grad`, which must match the ParamStore size
  /// whenever affine nodes were recorded.
  void backward(std::span<Real> param_grad = {});

  /// First node holding a NaN or infinity, in recording order.
  std::optional<Divergence> first_nonfinite() const;

  static const char* op_name(Op op);

 private:
  struct Arg {
    Operand x;
    int param = -1;
  };
  struct Node {
    Op op;
    bool reduced = false;
    int start = 0;
    int len = 0;
    int arg_begin = 0;
    int arg_count = 0;
    int param = -1;
    Real scalar = 0;
    Site site;
  };

  int push(Op op, int len, std::span<const Arg> args);
  const Real* val(const Operand& a) const { return vals_.data() + nodes_[a.node].start + a.offset; }
  Real* adj(const Operand& a) { return adjs_.data() + nodes_[a.node].start + a.offset; }
  const Real* pval(int offset) const { return params_->value.data() + offset; }

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::vector<Arg> args_;
  std::vector<Real> vals_;
  std::vector<Real> adjs_;
  Site site_;
};

/// Coefficients c_d of the truncated state recurrence J(p) = Σ_d c_d J(p_d^-)
/// for one position, given its gates and the dimension count.
std::vector<double> carry_coefficients(CellKind kind, const GateActivations& g, int dims);

/// J(p) = ∂s^p / ∂s^{p_in} with gates held fixed, over a whole lattice.
struct TruncatedJacobianField {
  LatticeShape shape;
  std::vector<double> values;  // row-major, see LatticeShape::linear

  double at(const Coord& p) const { return values[shape.linear(p)]; }
};

/// `gate_field` is indexed by linear lattice position.
TruncatedJacobianField truncated_state_jacobian(CellKind kind, std::span<const GateActivations> gate_field,
                                                const Coord& p_in, const LatticeShape& shape,
                                                const ScanDirection& dir);

/// Same recurrence, driven by precomputed carry coefficients
/// (`coef[linear * D + d]`). Used by the probes, which sweep many p_in.
TruncatedJacobianField truncated_state_jacobian(std::span<const double> coef, const Coord& p_in,
                                                const ScanPlan& plan);

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double numeric = 0.0;
  double analytic = 0.0;
  std::size_t checked = 0;
};

/// Denominator floor of the relative error |fd - g| / max(|fd|, |g|, floor).
inline constexpr double kFdRelativeFloor = 1e-2;

/// Central differences of `f` at `x` against `grad`, coordinate by coordinate.
FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> x, std::span<const double> grad, double step = 1e-6,
                           double floor = kFdRelativeFloor);

}  // namespace mdcell
