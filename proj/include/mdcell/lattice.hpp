#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace mdcell {

inline constexpr int kMaxDims = 6;

/// A lattice position p in N^D. Fixed capacity, no heap allocation.
class Coord {
 public:
  Coord() = default;
  explicit Coord(int dims);
  Coord(std::initializer_list<int> indices);

  int dims() const { return dims_; }
  int operator[](int d) const { return v_[d]; }
  int& operator[](int d) { return v_[d]; }

  friend bool operator==(const Coord& a, const Coord& b);

  std::string str() const;

 private:
  std::array<int, kMaxDims> v_{};
  int dims_ = 0;
};

/// Extents of a finite D-dimensional lattice; row-major linearisation with the
/// last dimension fastest.
class LatticeShape {
 public:
  LatticeShape() = default;
  LatticeShape(std::initializer_list<int> extents);
  explicit LatticeShape(const std::vector<int>& extents);

  int dims() const { return dims_; }
  int extent(int d) const { return ext_[d]; }
  std::size_t size() const;

  bool contains(const Coord& p) const;
  std::size_t linear(const Coord& p) const;
  Coord coord(std::size_t linear_index) const;

  std::string str() const;

 private:
  std::array<int, kMaxDims> ext_{};
  int dims_ = 0;
};

/// Traversal sign per dimension. +1 scans towards larger indices.
class ScanDirection {
 public:
  ScanDirection() = default;
  ScanDirection(std::initializer_list<int> signs);

  /// Direction number `index` of the 2^D directions; bit d set means dim d is
  /// reversed. Index 0 is all-forward.
  static ScanDirection from_index(int dims, int index);
  static int count(int dims) { return 1 << dims; }

  int dims() const { return dims_; }
  int sign(int d) const { return s_[d]; }
  int index() const;

  std::string str() const;

 private:
  std::array<int, kMaxDims> s_{};
  int dims_ = 0;
};

using PathCount = boost::multiprecision::cpp_int;

/// Predecessor of p in every dimension: p moved one step against the scan
/// direction, or nullopt where that step leaves the lattice.
std::vector<std::optional<Coord>> predecessors(const Coord& p, const ScanDirection& dir,
                                               const LatticeShape& shape);

/// Lexicographic order over direction-transformed coordinates. Every
/// predecessor precedes its successor.
std::vector<Coord> scan_order(const LatticeShape& shape, const ScanDirection& dir);

/// Number of monotone p-to-q lattice paths: the multinomial coefficient of
/// q - p, or 0 when a component of q - p is negative.
PathCount count_paths(const Coord& p, const Coord& q);

/// Precomputed linear indices for one (shape, direction) pair, used by the
/// hot loops in the network and in the truncated-gradient evaluator.
struct ScanPlan {
  static constexpr std::uint32_t kAbsent = 0xffffffffu;

  LatticeShape shape;
  ScanDirection dir;
  std::vector<std::uint32_t> order;  // linear indices in scan order
  std::vector<std::uint32_t> pred;   // [linear * dims + d] -> linear or kAbsent

  std::uint32_t predecessor(std::size_t linear, int d) const {
    return pred[linear * static_cast<std::size_t>(shape.dims()) + static_cast<std::size_t>(d)];
  }
};

ScanPlan make_scan_plan(const LatticeShape& shape, const ScanDirection& dir);

}  // namespace mdcell
