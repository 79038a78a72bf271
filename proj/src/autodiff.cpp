#include "mdcell/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mdcell/error.hpp"

namespace mdcell {

int ParamStore::allocate(std::size_t count) {
  const auto offset = static_cast<int>(value.size());
  value.resize(value.size() + count, Real(0));
  return offset;
}

std::string Divergence::describe() const {
  std::ostringstream os;
  os << "non-finite value at node " << node << " (" << op << ")";
  if (site.layer >= 0) os << " layer " << site.layer;
  if (site.direction >= 0) os << " direction " << site.direction;
  if (site.position >= 0) os << " position " << site.position;
  return os.str();
}

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Affine: return "affine";
    case Op::Logistic: return "logistic";
    case Op::Tanh: return "tanh";
    case Op::OneMinus: return "one_minus";
    case Op::Scale: return "scale";
    case Op::Mul: return "mul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Sum: return "sum";
    case Op::Blend: return "blend";
    case Op::ConvexMix: return "convex_mix";
    case Op::Concat: return "concat";
  }
  return "?";
}

void Tape::clear() {
  nodes_.clear();
  args_.clear();
  vals_.clear();
  adjs_.clear();
  site_ = {};
}

int Tape::push(Op op, int len, std::span<const Arg> args) {
  Node n;
  n.op = op;
  n.start = static_cast<int>(vals_.size());
  n.len = len;
  n.arg_begin = static_cast<int>(args_.size());
  n.arg_count = static_cast<int>(args.size());
  n.site = site_;
  args_.insert(args_.end(), args.begin(), args.end());
  vals_.resize(vals_.size() + static_cast<std::size_t>(len), Real(0));
  adjs_.resize(vals_.size(), Real(0));
  nodes_.push_back(n);
  return static_cast<int>(nodes_.size()) - 1;
}

Operand Tape::input(std::span<const Real> values) {
  const int id = push(Op::Input, static_cast<int>(values.size()), {});
  std::copy(values.begin(), values.end(), vals_.begin() + nodes_[id].start);
  return {id, 0, static_cast<int>(values.size())};
}

Operand Tape::constant(std::span<const Real> values) {
  const int id = push(Op::Constant, static_cast<int>(values.size()), {});
  std::copy(values.begin(), values.end(), vals_.begin() + nodes_[id].start);
  return {id, 0, static_cast<int>(values.size())};
}

Operand Tape::affine(int rows, int bias_param, std::span<const AffineTerm> terms) {
  require(params_ != nullptr, "affine node needs a parameter store");
  std::vector<Arg> args;
  args.reserve(terms.size());
  for (const AffineTerm& t : terms)
    if (t.x.present()) args.push_back({t.x, t.param});
  const int id = push(Op::Affine, rows, args);
  nodes_[id].param = bias_param;
  Real* out = vals_.data() + nodes_[id].start;
  if (bias_param >= 0) std::copy_n(pval(bias_param), rows, out);
  for (const Arg& a : args) {
    const Real* x = val(a.x);
    const Real* w = pval(a.param);
    const int n = a.x.len;
    for (int r = 0; r < rows; ++r) {
      Real acc = 0;
      const Real* wr = w + static_cast<std::ptrdiff_t>(r) * n;
      for (int c = 0; c < n; ++c) acc += wr[c] * x[c];
      out[r] += acc;
    }
  }
  return {id, 0, rows};
}

Operand Tape::logistic(Operand a) {
  const Arg args[] = {{a}};
  const int id = push(Op::Logistic, a.len, args);
  const Real* x = val(a);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = Real(1) / (Real(1) + std::exp(-x[i]));
  return {id, 0, a.len};
}

Operand Tape::tanh(Operand a) {
  const Arg args[] = {{a}};
  const int id = push(Op::Tanh, a.len, args);
  const Real* x = val(a);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = std::tanh(x[i]);
  return {id, 0, a.len};
}

Operand Tape::one_minus(Operand a) {
  const Arg args[] = {{a}};
  const int id = push(Op::OneMinus, a.len, args);
  const Real* x = val(a);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = Real(1) - x[i];
  return {id, 0, a.len};
}

Operand Tape::scale(Operand a, Real c) {
  const Arg args[] = {{a}};
  const int id = push(Op::Scale, a.len, args);
  nodes_[id].scalar = c;
  const Real* x = val(a);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = c * x[i];
  return {id, 0, a.len};
}

Operand Tape::mul(Operand a, Operand b) {
  require(a.len == b.len, "mul: length mismatch");
  const Arg args[] = {{a}, {b}};
  const int id = push(Op::Mul, a.len, args);
  const Real* x = val(a);
  const Real* y = val(b);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = x[i] * y[i];
  return {id, 0, a.len};
}

Operand Tape::add(Operand a, Operand b) {
  require(a.len == b.len, "add: length mismatch");
  const Arg args[] = {{a}, {b}};
  const int id = push(Op::Add, a.len, args);
  const Real* x = val(a);
  const Real* y = val(b);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = x[i] + y[i];
  return {id, 0, a.len};
}

Operand Tape::sub(Operand a, Operand b) {
  require(a.len == b.len, "sub: length mismatch");
  const Arg args[] = {{a}, {b}};
  const int id = push(Op::Sub, a.len, args);
  const Real* x = val(a);
  const Real* y = val(b);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = x[i] - y[i];
  return {id, 0, a.len};
}

Operand Tape::sum(std::span<const Operand> terms) {
  std::vector<Arg> args;
  int len = -1;
  for (const Operand& t : terms) {
    if (!t.present()) continue;
    require(len < 0 || t.len == len, "sum: length mismatch");
    len = t.len;
    args.push_back({t});
  }
  require(len >= 0, "sum: no present terms");
  const int id = push(Op::Sum, len, args);
  Real* out = vals_.data() + nodes_[id].start;
  for (const Arg& a : args) {
    const Real* x = val(a.x);
    for (int i = 0; i < len; ++i) out[i] += x[i];
  }
  return {id, 0, len};
}

Operand Tape::blend(Operand a, Operand b, Operand t) {
  require(a.len == b.len && a.len == t.len, "blend: length mismatch");
  const Arg args[] = {{a}, {b}, {t}};
  const int id = push(Op::Blend, a.len, args);
  const Real* x = val(a);
  const Real* y = val(b);
  const Real* w = val(t);
  Real* out = vals_.data() + nodes_[id].start;
  for (int i = 0; i < a.len; ++i) out[i] = (Real(1) - w[i]) * x[i] + w[i] * y[i];
  return {id, 0, a.len};
}

Operand Tape::convex_mix(std::span<const Operand> lambda, std::span<const Operand> prev, bool reduced) {
  const std::size_t dims = prev.size();
  require(dims >= 1, "convex_mix: need at least one predecessor");
  require(reduced ? (dims == 2 && lambda.size() == 1) : lambda.size() == dims,
          "convex_mix: lambda/predecessor count mismatch");
  const int len = lambda[0].len;
  std::vector<Arg> args;
  for (const Operand& l : lambda) {
    require(l.len == len, "convex_mix: lambda length mismatch");
    args.push_back({l});
  }
  for (const Operand& p : prev) {
    require(!p.present() || p.len == len, "convex_mix: state length mismatch");
    args.push_back({p});
  }
  const int id = push(Op::ConvexMix, len, args);
  nodes_[id].reduced = reduced;
  Real* out = vals_.data() + nodes_[id].start;
  const Arg* a = args_.data() + nodes_[id].arg_begin;
  const std::size_t nl = lambda.size();
  for (int i = 0; i < len; ++i) {
    Real acc = 0;
    if (reduced) {
      const Real w0 = val(a[0].x)[i];
      if (a[1].x.present()) acc += w0 * val(a[1].x)[i];
      if (a[2].x.present()) acc += (Real(1) - w0) * val(a[2].x)[i];
    } else {
      Real total = 0;
      for (std::size_t d = 0; d < dims; ++d) total += val(a[d].x)[i];
      const bool uniform = total < Real(kLambdaFloor);
      for (std::size_t d = 0; d < dims; ++d) {
        if (!a[nl + d].x.present()) continue;
        const Real w = uniform ? Real(1) / static_cast<Real>(dims) : val(a[d].x)[i] / total;
        acc += w * val(a[nl + d].x)[i];
      }
    }
    out[i] = acc;
  }
  return {id, 0, len};
}

Operand Tape::concat(std::span<const Operand> parts) {
  std::vector<Arg> args;
  int len = 0;
  for (const Operand& p : parts) {
    require(p.present(), "concat: absent part");
    args.push_back({p});
    len += p.len;
  }
  const int id = push(Op::Concat, len, args);
  Real* out = vals_.data() + nodes_[id].start;
  for (const Arg& a : args) {
    std::copy_n(val(a.x), a.x.len, out);
    out += a.x.len;
  }
  return {id, 0, len};
}

std::span<const Real> Tape::value(Operand a) const {
  require(a.present(), "value of absent operand");
  return {val(a), static_cast<std::size_t>(a.len)};
}

std::span<Real> Tape::adjoint(Operand a) {
  require(a.present(), "adjoint of absent operand");
  return {adj(a), static_cast<std::size_t>(a.len)};
}

std::span<const Real> Tape::adjoint_view(Operand a) const {
  require(a.present(), "adjoint of absent operand");
  return {adjs_.data() + nodes_[a.node].start + a.offset, static_cast<std::size_t>(a.len)};
}

void Tape::zero_adjoints() { std::fill(adjs_.begin(), adjs_.end(), Real(0)); }

void Tape::backward(std::span<Real> param_grad) {
  auto pgrad = [&](int offset) {
    require(params_ != nullptr && param_grad.size() == params_->size(),
            "backward: parameter gradient buffer does not match the store");
    return param_grad.data() + offset;
  };
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& n = *it;
    const Real* g = adjs_.data() + n.start;
    const Real* y = vals_.data() + n.start;
    const Arg* a = args_.data() + n.arg_begin;
    const int len = n.len;
    switch (n.op) {
      case Op::Input:
      case Op::Constant: break;
      case Op::Affine: {
        if (n.param >= 0) {
          Real* gb = pgrad(n.param);
          for (int r = 0; r < len; ++r) gb[r] += g[r];
        }
        for (int k = 0; k < n.arg_count; ++k) {
          const Operand& x = a[k].x;
          const Real* xv = val(x);
          Real* xa = adj(x);
          const Real* w = pval(a[k].param);
          Real* gw = pgrad(a[k].param);
          const int cols = x.len;
          for (int r = 0; r < len; ++r) {
            const Real gr = g[r];
            if (gr == Real(0)) continue;
            const Real* wr = w + static_cast<std::ptrdiff_t>(r) * cols;
            Real* gwr = gw + static_cast<std::ptrdiff_t>(r) * cols;
            for (int c = 0; c < cols; ++c) {
              xa[c] += wr[c] * gr;
              gwr[c] += gr * xv[c];
            }
          }
        }
        break;
      }
      case Op::Logistic: {
        Real* xa = adj(a[0].x);
        for (int i = 0; i < len; ++i) xa[i] += g[i] * y[i] * (Real(1) - y[i]);
        break;
      }
      case Op::Tanh: {
        Real* xa = adj(a[0].x);
        for (int i = 0; i < len; ++i) xa[i] += g[i] * (Real(1) - y[i] * y[i]);
        break;
      }
      case Op::OneMinus: {
        Real* xa = adj(a[0].x);
        for (int i = 0; i < len; ++i) xa[i] -= g[i];
        break;
      }
      case Op::Scale: {
        Real* xa = adj(a[0].x);
        for (int i = 0; i < len; ++i) xa[i] += n.scalar * g[i];
        break;
      }
      case Op::Mul: {
        const Real* xv = val(a[0].x);
        const Real* yv = val(a[1].x);
        Real* xa = adj(a[0].x);
        for (int i = 0; i < len; ++i) xa[i] += g[i] * yv[i];
        Real* ya = adj(a[1].x);
        for (int i = 0; i < len; ++i) ya[i] += g[i] * xv[i];
        break;
      }
      case Op::Add:
      case Op::Sub: {
        Real* xa = adj(a[0].x);
        for (int i = 0; i < len; ++i) xa[i] += g[i];
        Real* ya = adj(a[1].x);
        if (n.op == Op::Add)
          for (int i = 0; i < len; ++i) ya[i] += g[i];
        else
          for (int i = 0; i < len; ++i) ya[i] -= g[i];
        break;
      }
      case Op::Sum:
        for (int k = 0; k < n.arg_count; ++k) {
          Real* xa = adj(a[k].x);
          for (int i = 0; i < len; ++i) xa[i] += g[i];
        }
        break;
      case Op::Blend: {
        const Real* xv = val(a[0].x);
        const Real* yv = val(a[1].x);
        const Real* tv = val(a[2].x);
        Real* xa = adj(a[0].x);
        for (int i = 0; i < len; ++i) xa[i] += g[i] * (Real(1) - tv[i]);
        Real* ya = adj(a[1].x);
        for (int i = 0; i < len; ++i) ya[i] += g[i] * tv[i];
        Real* ta = adj(a[2].x);
        for (int i = 0; i < len; ++i) ta[i] += g[i] * (yv[i] - xv[i]);
        break;
      }
      case Op::ConvexMix: {
        if (n.reduced) {
          const Operand& l = a[0].x;
          const Real* lv = val(l);
          Real* la = adj(l);
          for (int i = 0; i < len; ++i) {
            const Real s0 = a[1].x.present() ? val(a[1].x)[i] : Real(0);
            const Real s1 = a[2].x.present() ? val(a[2].x)[i] : Real(0);
            la[i] += g[i] * (s0 - s1);
            if (a[1].x.present()) adj(a[1].x)[i] += g[i] * lv[i];
            if (a[2].x.present()) adj(a[2].x)[i] += g[i] * (Real(1) - lv[i]);
          }
          break;
        }
        const int dims = n.arg_count / 2;
        for (int i = 0; i < len; ++i) {
          Real total = 0;
          for (int d = 0; d < dims; ++d) total += val(a[d].x)[i];
          const bool uniform = total < Real(kLambdaFloor);
          for (int d = 0; d < dims; ++d) {
            const Operand& s = a[dims + d].x;
            if (!s.present()) continue;
            const Real w = uniform ? Real(1) / static_cast<Real>(dims) : val(a[d].x)[i] / total;
            adj(s)[i] += g[i] * w;
          }
          if (uniform) continue;
          for (int d = 0; d < dims; ++d) {
            const Operand& s = a[dims + d].x;
            const Real sd = s.present() ? val(s)[i] : Real(0);
            adj(a[d].x)[i] += g[i] * (sd - y[i]) / total;
          }
        }
        break;
      }
      case Op::Concat: {
        int off = 0;
        for (int k = 0; k < n.arg_count; ++k) {
          Real* xa = adj(a[k].x);
          for (int i = 0; i < a[k].x.len; ++i) xa[i] += g[off + i];
          off += a[k].x.len;
        }
        break;
      }
    }
  }
}

std::optional<Divergence> Tape::first_nonfinite() const {
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const Node& n = nodes_[k];
    for (int i = 0; i < n.len; ++i) {
      if (!std::isfinite(vals_[static_cast<std::size_t>(n.start + i)]))
        return Divergence{static_cast<int>(k), n.site, op_name(n.op)};
    }
  }
  return std::nullopt;
}

std::vector<double> carry_coefficients(CellKind kind, const GateActivations& g, int dims) {
  const auto d = static_cast<std::size_t>(dims);
  switch (kind) {
    case CellKind::Unit: return std::vector<double>(d, 0.0);
    case CellKind::LstmNoForget: return std::vector<double>(d, 1.0);
    case CellKind::Lstm: {
      require(g.forget_dim.size() == d, "carry_coefficients: need one forget gate per dimension");
      return g.forget_dim;
    }
    default: break;
  }
  std::vector<double> w;
  if (kind == CellKind::LstmStableReduced) {
    require(dims == 2 && g.lambda.size() == 1, "reduced cell needs D=2 and one lambda");
    w = {g.lambda[0], 1.0 - g.lambda[0]};
  } else {
    require(g.lambda.size() == d, "carry_coefficients: need one lambda per dimension");
    w = convex_weights(g.lambda);
  }
  double c = g.forget.value();
  if (kind == CellKind::TypeC) c *= g.gamma4.value();
  for (double& x : w) x *= c;
  return w;
}

TruncatedJacobianField truncated_state_jacobian(std::span<const double> coef, const Coord& p_in,
                                                const ScanPlan& plan) {
  const LatticeShape& shape = plan.shape;
  const int dims = shape.dims();
  require(p_in.dims() == dims && shape.contains(p_in), "truncated_state_jacobian: p_in outside lattice");
  require(coef.size() == shape.size() * static_cast<std::size_t>(dims),
          "truncated_state_jacobian: coefficient field has wrong size");
  TruncatedJacobianField field{shape, std::vector<double>(shape.size(), 0.0)};
  const std::size_t start = shape.linear(p_in);
  bool reached = false;
  for (std::uint32_t lin : plan.order) {
    if (lin == start) {
      field.values[lin] = 1.0;
      reached = true;
      continue;
    }
    if (!reached) continue;
    double acc = 0.0;
    for (int d = 0; d < dims; ++d) {
      const std::uint32_t q = plan.predecessor(lin, d);
      if (q == ScanPlan::kAbsent) continue;
      const double jq = field.values[q];
      if (jq != 0.0) acc += coef[lin * static_cast<std::size_t>(dims) + static_cast<std::size_t>(d)] * jq;
    }
    field.values[lin] = acc;
  }
  return field;
}

TruncatedJacobianField truncated_state_jacobian(CellKind kind, std::span<const GateActivations> gate_field,
                                                const Coord& p_in, const LatticeShape& shape,
                                                const ScanDirection& dir) {
  require(gate_field.size() == shape.size(), "truncated_state_jacobian: gate field size mismatch");
  const int dims = shape.dims();
  std::vector<double> coef;
  coef.reserve(shape.size() * static_cast<std::size_t>(dims));
  for (const GateActivations& g : gate_field) {
    const auto c = carry_coefficients(kind, g, dims);
    coef.insert(coef.end(), c.begin(), c.end());
  }
  return truncated_state_jacobian(coef, p_in, make_scan_plan(shape, dir));
}

FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> x, std::span<const double> grad, double step,
                           double floor) {
  require(step > 0.0, "finite_diff_check: step must be positive");
  require(x.size() == grad.size(), "finite_diff_check: gradient size mismatch");
  FdReport report;
  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double fp = f(probe);
    probe[i] = x[i] - step;
    const double fm = f(probe);
    probe[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(grad[i]), floor});
    const double err = std::abs(numeric - grad[i]) / denom;
    if (err > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.numeric = numeric;
      report.analytic = grad[i];
    }
    ++report.checked;
  }
  return report;
}

}  // namespace mdcell
