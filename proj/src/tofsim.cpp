// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/tofsim.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "selftof/rng.hpp"

namespace selftof::tofsim {

int ZoneGrid::valid_count() const {
  int n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void ZoneGrid::check_invariants() const {
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (mean.size() != n || stddev.size() != n || valid.size() != n || fov.size() != n)
    throw std::logic_error("ZoneGrid: inconsistent sizes");
  for (std::size_t i = 0; i < n; ++i) {
    if (valid[i]) {
      if (!(mean[i] > 0.0) || !(stddev[i] >= 0.0))
        throw std::logic_error("ZoneGrid: valid zone with non-positive moments");
    } else if (mean[i] != 0.0 || stddev[i] != 0.0) {
      throw std::logic_error("ZoneGrid: invalid zone with non-zero moments");
    }
  }
}

std::vector<std::pair<int, int>> partition_extent(int extent, int n) {
  if (n <= 0) throw std::invalid_argument("partition_extent: degenerate grid shape");
  if (extent < n) throw std::invalid_argument("partition_extent: extent smaller than grid");
  const int base = extent / n;
  std::vector<std::pair<int, int>> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {i * base, (i + 1) * base};
  out.back().second = extent;  // remainder goes to the last range
  return out;
}

std::vector<ZoneRect> zone_footprints(int height, int width, int rows, int cols) {
  auto ys = partition_extent(height, rows);
  auto xs = partition_extent(width, cols);
  std::vector<ZoneRect> fov;
  fov.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      fov.push_back({ys[static_cast<std::size_t>(r)].first, ys[static_cast<std::size_t>(r)].second,
                     xs[static_cast<std::size_t>(c)].first, xs[static_cast<std::size_t>(c)].second});
  return fov;
}

ZoneGrid fit_zones(const Tensor& depth, int rows, int cols) {
  if (depth.ndim() != 2 || depth.dim(0) <= 0 || depth.dim(1) <= 0)
    throw std::invalid_argument("fit_zones: depth must be a non-empty [H,W] map");
  if (rows <= 0 || cols <= 0) throw std::invalid_argument("fit_zones: degenerate grid shape");
  const int H = depth.dim(0), W = depth.dim(1);

  ZoneGrid g;
  g.rows = rows;
  g.cols = cols;
  g.fov = zone_footprints(H, W, rows, cols);
  const int nz = rows * cols;
  g.mean.assign(static_cast<std::size_t>(nz), 0.0);
  g.stddev.assign(static_cast<std::size_t>(nz), 0.0);
  g.valid.assign(static_cast<std::size_t>(nz), 0);

  std::vector<double> vals;
  for (int z = 0; z < nz; ++z) {
    const ZoneRect& r = g.fov[static_cast<std::size_t>(z)];
    vals.clear();
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        const double d = depth.at(y, x);
        if (std::isfinite(d) && d > 0.0) vals.push_back(d);
      }
    const std::size_t footprint = static_cast<std::size_t>(r.height()) * r.width();
    // valid iff at least 10% of footprint pixels carry valid depth
    if (vals.size() * 10 >= footprint && !vals.empty()) {
      double m, s;
      values_mean_std(vals.data(), vals.size(), m, s);
      g.mean[static_cast<std::size_t>(z)] = m;
      g.stddev[static_cast<std::size_t>(z)] = s;
      g.valid[static_cast<std::size_t>(z)] = 1;
    }
  }
  return g;
}

ZoneGrid inject_sparsity(const ZoneGrid& grid, double sparsity_ratio, std::uint64_t seed) {
  if (!(sparsity_ratio >= 0.0 && sparsity_ratio <= 1.0))
    throw std::invalid_argument("inject_sparsity: ratio must be in [0,1]");
  ZoneGrid out = grid;
  std::vector<int> valid_idx;
  for (int z = 0; z < grid.zone_count(); ++z)
    if (grid.valid[static_cast<std::size_t>(z)]) valid_idx.push_back(z);
  const int drop = static_cast<int>(std::floor(sparsity_ratio * valid_idx.size()));
  if (drop == 0) return out;
  Rng rng(seed);
  rng.shuffle(valid_idx);
  for (int i = 0; i < drop; ++i) {
    const std::size_t z = static_cast<std::size_t>(valid_idx[static_cast<std::size_t>(i)]);
    out.valid[z] = 0;
    out.mean[z] = 0.0;
    out.stddev[z] = 0.0;
  }
  return out;
}

Tensor zones_to_lowres_map(const ZoneGrid& grid) {
  Tensor map({grid.rows, grid.cols});
  for (int z = 0; z < grid.zone_count(); ++z)
    map[static_cast<std::size_t>(z)] =
        grid.valid[static_cast<std::size_t>(z)] ? grid.mean[static_cast<std::size_t>(z)] : 0.0;
  return map;
}

void write_zone_grid(const ZoneGrid& grid, std::ostream& os) {
  os << "zonegrid v1\n" << grid.rows << " " << grid.cols << "\n";
  char buf[64];
  auto put = [&](const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
      os << buf << (i + 1 == v.size() ? "\n" : " ");
    }
  };
  put(grid.mean);
  put(grid.stddev);
  for (std::size_t i = 0; i < grid.valid.size(); ++i)
    os << int(grid.valid[i]) << (i + 1 == grid.valid.size() ? "\n" : " ");
  for (const auto& r : grid.fov) os << r.y0 << " " << r.y1 << " " << r.x0 << " " << r.x1 << "\n";
}

ZoneGrid read_zone_grid(std::istream& is) {
  std::string magic, version;
  is >> magic >> version;
  if (magic != "zonegrid" || version != "v1")
    throw std::runtime_error("zone grid record: bad header");
  ZoneGrid g;
  is >> g.rows >> g.cols;
  if (g.rows <= 0 || g.cols <= 0) throw std::runtime_error("zone grid record: bad shape");
  const std::size_t n = static_cast<std::size_t>(g.rows) * g.cols;
  g.mean.resize(n);
  g.stddev.resize(n);
  g.valid.resize(n);
  g.fov.resize(n);
  for (auto& v : g.mean) is >> v;
  for (auto& v : g.stddev) is >> v;
  for (auto& v : g.valid) {
    int b;
    is >> b;
    v = static_cast<std::uint8_t>(b != 0);
  }
  for (auto& r : g.fov) is >> r.y0 >> r.y1 >> r.x0 >> r.x1;
  if (!is) throw std::runtime_error("zone grid record: truncated");
  return g;
}

void save_zone_grid(const ZoneGrid& grid, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_zone_grid(grid, f);
}

ZoneGrid load_zone_grid(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open zone grid: " + path);
  return read_zone_grid(f);
}

}  // namespace selftof::tofsim
