#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdcell/network.hpp"

namespace mdcell {

using Sample = Example;

struct SyntheticParams {
  std::uint64_t seed = 1;
  int count = 400;
  int alphabet = 3;
  int height = 24;
  int width = 60;
  int glyph = 10;
  int min_length = 1;
  int max_length = 4;
  double noise = 0.0;  // additive uniform noise in [-noise, noise], clipped to [0,1]
  int jitter = 2;      // horizontal start offset in [0, jitter], vertical offset in [-jitter, jitter]
  int gap = 2;         // pixels between neighbouring glyphs
};

/// Largest alphabet with a distinct stroke glyph.
int max_alphabet();

/// Number of distinct single-glyph placements on the jitter grid.
int jitter_positions(const SyntheticParams& p);

/// Pixels are quantised to k/255 so a P5 round trip is exact.
std::vector<Sample> gen_synthetic(const SyntheticParams& p);

/// Binary 8-bit P5 graymap.
void write_pgm(const std::string& path, const Grid& image);
Grid read_pgm(const std::string& path);

/// Writes `<id>.pgm` for every sample plus `index.tsv` (`id<TAB>l,l,...`).
void write_corpus(const std::string& directory, const std::vector<Sample>& samples);

/// Reads the layout written by write_corpus. Labels must lie in
/// [0, alphabet) when `alphabet` is given. Errors name the file and line.
std::vector<Sample> load_corpus(const std::string& directory, std::optional<int> alphabet = std::nullopt);

}  // namespace mdcell
