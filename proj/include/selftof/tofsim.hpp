// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "selftof/tensor.hpp"

namespace selftof::tofsim {

struct ZoneRect {
  int y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open pixel ranges
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
  double center_y() const { return 0.5 * (y0 + y1 - 1); }
  double center_x() const { return 0.5 * (x0 + x1 - 1); }
};

// Per-zone Gaussian moments of the low-resolution ToF measurement. Invalid
// zones carry mean = std = 0 exactly.
struct ZoneGrid {
  int rows = 0;
  int cols = 0;
  std::vector<double> mean;          // row-major, meters
  std::vector<double> stddev;        // row-major, meters
  std::vector<std::uint8_t> valid;   // row-major
  std::vector<ZoneRect> fov;         // pixel footprint of each zone

  int zone_count() const { return rows * cols; }
  int valid_count() const;
  void check_invariants() const;  // throws on violation
};

// Even partition of [0, extent) into n ranges; remainder pixels go to the
// last range.
std::vector<std::pair<int, int>> partition_extent(int extent, int n);

// Footprints for a rows x cols grid over an height x width image.
std::vector<ZoneRect> zone_footprints(int height, int width, int rows, int cols);

// Fits per-zone Gaussian moments (sample mean, population std) over pixels
// with finite positive depth. A zone is invalid when fewer than 10% of its
// footprint pixels are valid.
ZoneGrid fit_zones(const Tensor& depth, int rows, int cols);

// Invalidates exactly floor(ratio * valid_count) currently-valid zones,
// chosen uniformly without replacement; deterministic per seed.
ZoneGrid inject_sparsity(const ZoneGrid& grid, double sparsity_ratio, std::uint64_t seed);

// rows x cols map: mean where valid, 0 where invalid.
Tensor zones_to_lowres_map(const ZoneGrid& grid);

// Plain-text record with bit-exact double round-trip.
void save_zone_grid(const ZoneGrid& grid, const std::string& path);
ZoneGrid load_zone_grid(const std::string& path);
void write_zone_grid(const ZoneGrid& grid, std::ostream& os);
ZoneGrid read_zone_grid(std::istream& is);

}  // namespace selftof::tofsim
