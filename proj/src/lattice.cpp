#include "mdcell/lattice.hpp"

#include <sstream>

#include "mdcell/error.hpp"

namespace mdcell {

Coord::Coord(int dims) : dims_(dims) {
  require(dims >= 1 && dims <= kMaxDims, "Coord: dimension out of range");
}

Coord::Coord(std::initializer_list<int> indices) : dims_(static_cast<int>(indices.size())) {
  require(dims_ >= 1 && dims_ <= kMaxDims, "Coord: dimension out of range");
  int d = 0;
  for (int i : indices) v_[d++] = i;
}

bool operator==(const Coord& a, const Coord& b) {
  if (a.dims_ != b.dims_) return false;
  for (int d = 0; d < a.dims_; ++d)
    if (a.v_[d] != b.v_[d]) return false;
  return true;
}

std::string Coord::str() const {
  std::ostringstream os;
  os << '(';
  for (int d = 0; d < dims_; ++d) os << (d ? "," : "") << v_[d];
  os << ')';
  return os.str();
}

LatticeShape::LatticeShape(std::initializer_list<int> extents)
    : LatticeShape(std::vector<int>(extents)) {}

LatticeShape::LatticeShape(const std::vector<int>& extents)
    : dims_(static_cast<int>(extents.size())) {
  require(dims_ >= 1 && dims_ <= kMaxDims, "LatticeShape: dimension out of range");
  for (int d = 0; d < dims_; ++d) {
    require(extents[d] >= 1, "LatticeShape: every extent must be >= 1");
    ext_[d] = extents[d];
  }
}

std::size_t LatticeShape::size() const {
  std::size_t n = 1;
  for (int d = 0; d < dims_; ++d) n *= static_cast<std::size_t>(ext_[d]);
  return n;
}

bool LatticeShape::contains(const Coord& p) const {
  if (p.dims() != dims_) return false;
  for (int d = 0; d < dims_; ++d)
    if (p[d] < 0 || p[d] >= ext_[d]) return false;
  return true;
}

std::size_t LatticeShape::linear(const Coord& p) const {
  std::size_t idx = 0;
  for (int d = 0; d < dims_; ++d) idx = idx * static_cast<std::size_t>(ext_[d]) + static_cast<std::size_t>(p[d]);
  return idx;
}

Coord LatticeShape::coord(std::size_t linear_index) const {
  Coord p(dims_);
  for (int d = dims_ - 1; d >= 0; --d) {
    p[d] = static_cast<int>(linear_index % static_cast<std::size_t>(ext_[d]));
    linear_index /= static_cast<std::size_t>(ext_[d]);
  }
  return p;
}

std::string LatticeShape::str() const {
  std::ostringstream os;
  for (int d = 0; d < dims_; ++d) os << (d ? "x" : "") << ext_[d];
  return os.str();
}

ScanDirection::ScanDirection(std::initializer_list<int> signs)
    : dims_(static_cast<int>(signs.size())) {
  require(dims_ >= 1 && dims_ <= kMaxDims, "ScanDirection: dimension out of range");
  int d = 0;
  for (int s : signs) {
    require(s == 1 || s == -1, "ScanDirection: signs must be +1 or -1");
    s_[d++] = s;
  }
}

ScanDirection ScanDirection::from_index(int dims, int index) {
  require(dims >= 1 && dims <= kMaxDims, "ScanDirection: dimension out of range");
  require(index >= 0 && index < count(dims), "ScanDirection: index out of range");
  ScanDirection dir;
  dir.dims_ = dims;
  for (int d = 0; d < dims; ++d) dir.s_[d] = (index >> d) & 1 ? -1 : 1;
  return dir;
}

int ScanDirection::index() const {
  int idx = 0;
  for (int d = 0; d < dims_; ++d)
    if (s_[d] < 0) idx |= 1 << d;
  return idx;
}

std::string ScanDirection::str() const {
  std::string out = "(";
  for (int d = 0; d < dims_; ++d) {
    if (d) out += ',';
    out += s_[d] > 0 ? '+' : '-';
  }
  return out + ')';
}

std::vector<std::optional<Coord>> predecessors(const Coord& p, const ScanDirection& dir,
                                               const LatticeShape& shape) {
  require(p.dims() == shape.dims() && dir.dims() == shape.dims(),
          "predecessors: dimension mismatch");
  require(shape.contains(p), "predecessors: position outside lattice");
  std::vector<std::optional<Coord>> out(static_cast<std::size_t>(shape.dims()));
  for (int d = 0; d < shape.dims(); ++d) {
    Coord q = p;
    q[d] -= dir.sign(d);
    if (q[d] >= 0 && q[d] < shape.extent(d)) out[static_cast<std::size_t>(d)] = q;
  }
  return out;
}

std::vector<Coord> scan_order(const LatticeShape& shape, const ScanDirection& dir) {
  require(dir.dims() == shape.dims(), "scan_order: dimension mismatch");
  const std::size_t n = shape.size();
  std::vector<Coord> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    // i enumerates transformed coordinates lexicographically.
    Coord t = shape.coord(i);
    for (int d = 0; d < shape.dims(); ++d)
      if (dir.sign(d) < 0) t[d] = shape.extent(d) - 1 - t[d];
    order.push_back(t);
  }
  return order;
}

namespace {

PathCount binomial(long n, long k) {
  PathCount r = 1;
  for (long i = 1; i <= k; ++i) {
    r *= n - k + i;
    r /= i;  // exact: r is C(n-k+i, i) after this step
  }
  return r;
}

}  // namespace

PathCount count_paths(const Coord& p, const Coord& q) {
  require(p.dims() == q.dims(), "count_paths: dimension mismatch");
  PathCount total = 1;
  long running = 0;
  for (int d = 0; d < p.dims(); ++d) {
    const long step = static_cast<long>(q[d]) - p[d];
    if (step < 0) return 0;
    running += step;
    total *= binomial(running, step);
  }
  return total;
}

ScanPlan make_scan_plan(const LatticeShape& shape, const ScanDirection& dir) {
  require(dir.dims() == shape.dims(), "make_scan_plan: dimension mismatch");
  ScanPlan plan;
  plan.shape = shape;
  plan.dir = dir;
  const std::size_t n = shape.size();
  const auto dims = static_cast<std::size_t>(shape.dims());
  plan.order.reserve(n);
  for (const Coord& p : scan_order(shape, dir)) plan.order.push_back(static_cast<std::uint32_t>(shape.linear(p)));
  plan.pred.assign(n * dims, ScanPlan::kAbsent);
  for (std::size_t i = 0; i < n; ++i) {
    const Coord p = shape.coord(i);
    for (int d = 0; d < shape.dims(); ++d) {
      Coord q = p;
      q[d] -= dir.sign(d);
      if (q[d] >= 0 && q[d] < shape.extent(d))
        plan.pred[i * dims + static_cast<std::size_t>(d)] = static_cast<std::uint32_t>(shape.linear(q));
    }
  }
  return plan;
}

}  // namespace mdcell
