#pragma once

#include <vector>

#include "mdcell/config.hpp"
#include "mdcell/error.hpp"
#include "mdcell/lattice.hpp"

namespace mdcell {

/// Feature map on a lattice: `channels` values per position, position-major.
struct Grid {
  LatticeShape shape;
  int channels = 1;
  std::vector<Real> data;

  Grid() = default;
  Grid(const LatticeShape& s, int c) : shape(s), channels(c), data(s.size() * static_cast<std::size_t>(c), Real(0)) {
    require(c >= 1, "Grid: need at least one channel");
  }

  Real& at(std::size_t linear, int c) { return data[linear * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]; }
  Real at(std::size_t linear, int c) const {
    return data[linear * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)];
  }
};

}  // namespace mdcell
