// License: Apache 2.0. See LICENSE file in root directory.
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "doctest.h"
#include "selftof/rng.hpp"
#include "selftof/tofsim.hpp"

using namespace selftof;
using namespace selftof::tofsim;

TEST_SUITE_BEGIN("tofsim");

namespace {

// independent per-zone loop oracle: naive mean / population std
void oracle_zone_moments(const Tensor& depth, const ZoneRect& r, double& mean, double& stddev,
                         int& valid_pixels) {
  double sum = 0.0;
  valid_pixels = 0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const double d = depth.at(y, x);
      if (std::isfinite(d) && d > 0.0) {
        sum += d;
        ++valid_pixels;
      }
    }
  if (valid_pixels == 0) {
    mean = stddev = 0.0;
    return;
  }
  mean = sum / valid_pixels;
  double ss = 0.0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const double d = depth.at(y, x);
      if (std::isfinite(d) && d > 0.0) ss += (d - mean) * (d - mean);
    }
  stddev = std::sqrt(ss / valid_pixels);
}

}  // namespace

TEST_CASE("constant depth: every zone mean=2, std=0, valid") {
  Tensor depth = Tensor::full({64, 64}, 2.0);
  ZoneGrid g = fit_zones(depth, 8, 8);
  g.check_invariants();
  for (int z = 0; z < 64; ++z) {
    CHECK(g.valid[static_cast<size_t>(z)] == 1);
    CHECK(g.mean[static_cast<size_t>(z)] == 2.0);
    CHECK(g.stddev[static_cast<size_t>(z)] == 0.0);
  }
}

TEST_CASE("half 1m / half 3m zone: mean=2, std=1") {
  Tensor depth({8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) depth.at(y, x) = x < 4 ? 1.0 : 3.0;
  ZoneGrid g = fit_zones(depth, 1, 1);
  CHECK(g.mean[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(g.stddev[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("random field matches the per-zone loop oracle to 1e-6") {
  Rng rng(42);
  Tensor depth({50, 70});  // uneven footprints: remainder goes to the last row/col
  for (std::size_t i = 0; i < depth.size(); ++i)
    depth[i] = rng.next_double() < 0.15 ? 0.0 : rng.uniform(0.5, 9.5);
  ZoneGrid g = fit_zones(depth, 8, 8);
  g.check_invariants();
  for (int z = 0; z < 64; ++z) {
    double m, s;
    int nv;
    const ZoneRect& r = g.fov[static_cast<size_t>(z)];
    oracle_zone_moments(depth, r, m, s, nv);
    const std::size_t footprint = static_cast<std::size_t>(r.height()) * r.width();
    const bool should_be_valid = static_cast<std::size_t>(nv) * 10 >= footprint && nv > 0;
    CHECK(g.valid[static_cast<size_t>(z)] == (should_be_valid ? 1 : 0));
    if (should_be_valid) {
      CHECK(g.mean[static_cast<size_t>(z)] == doctest::Approx(m).epsilon(1e-6));
      CHECK(g.stddev[static_cast<size_t>(z)] == doctest::Approx(s).epsilon(1e-6));
    }
  }
}

TEST_CASE("fit_zones is permutation-invariant within a footprint") {
  Rng rng(7);
  Tensor depth({16, 16});
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = rng.uniform(1.0, 5.0);
  ZoneGrid a = fit_zones(depth, 2, 2);
  // shuffle pixels inside each 8x8 footprint
  Tensor shuffled = depth.clone();
  for (const auto& r : a.fov) {
    std::vector<double> vals;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) vals.push_back(depth.at(y, x));
    rng.shuffle(vals);
    std::size_t k = 0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) shuffled.at(y, x) = vals[k++];
  }
  ZoneGrid b = fit_zones(shuffled, 2, 2);
  for (int z = 0; z < 4; ++z) {
    CHECK(a.mean[static_cast<size_t>(z)] == doctest::Approx(b.mean[static_cast<size_t>(z)]).epsilon(1e-12));
    CHECK(a.stddev[static_cast<size_t>(z)] == doctest::Approx(b.stddev[static_cast<size_t>(z)]).epsilon(1e-12));
  }
}

TEST_CASE("zone mean bounded by min/max pixel depth; std non-negative") {
  Rng rng(11);
  Tensor depth({32, 32});
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = rng.uniform(0.3, 7.0);
  ZoneGrid g = fit_zones(depth, 4, 4);
  for (int z = 0; z < 16; ++z) {
    const ZoneRect& r = g.fov[static_cast<size_t>(z)];
    double lo = 1e300, hi = -1e300;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        lo = std::min(lo, depth.at(y, x));
        hi = std::max(hi, depth.at(y, x));
      }
    CHECK(g.mean[static_cast<size_t>(z)] >= lo - 1e-12);
    CHECK(g.mean[static_cast<size_t>(z)] <= hi + 1e-12);
    CHECK(g.stddev[static_cast<size_t>(z)] >= 0.0);
  }
}

TEST_CASE("degenerate grid shape and all-invalid depth") {
  Tensor depth = Tensor::full({16, 16}, 1.0);
  CHECK_THROWS_AS(fit_zones(depth, 0, 8), std::invalid_argument);
  CHECK_THROWS_AS(fit_zones(depth, 8, 0), std::invalid_argument);
  Tensor zeros = Tensor::zeros({16, 16});
  ZoneGrid g = fit_zones(zeros, 4, 4);  // all-invalid is not an error
  CHECK(g.valid_count() == 0);
  g.check_invariants();
}

TEST_CASE("inject_sparsity: identity, total dropout, exact count, determinism") {
  Tensor depth = Tensor::full({64, 64}, 3.0);
  ZoneGrid g = fit_zones(depth, 8, 8);

  ZoneGrid same = inject_sparsity(g, 0.0, 5);
  for (int z = 0; z < 64; ++z) CHECK(same.valid[static_cast<size_t>(z)] == 1);

  ZoneGrid none = inject_sparsity(g, 1.0, 5);
  CHECK(none.valid_count() == 0);
  none.check_invariants();

  ZoneGrid sr = inject_sparsity(g, 0.2, 123);
  CHECK(sr.valid_count() == 64 - 12);  // floor(0.2 * 64)
  ZoneGrid sr2 = inject_sparsity(g, 0.2, 123);
  CHECK(sr.valid == sr2.valid);  // deterministic replay
  ZoneGrid sr3 = inject_sparsity(g, 0.2, 124);
  CHECK(sr.valid != sr3.valid);  // seed changes the draw
}

TEST_CASE("inject_sparsity never resurrects zones or alters survivors") {
  Rng rng(3);
  Tensor depth({64, 64});
  for (std::size_t i = 0; i < depth.size(); ++i)
    depth[i] = rng.next_double() < 0.3 ? 0.0 : rng.uniform(1.0, 4.0);
  ZoneGrid g = fit_zones(depth, 8, 8);
  ZoneGrid s = inject_sparsity(g, 0.5, 77);
  for (int z = 0; z < 64; ++z) {
    if (!g.valid[static_cast<size_t>(z)]) CHECK(s.valid[static_cast<size_t>(z)] == 0);
    if (s.valid[static_cast<size_t>(z)]) {
      CHECK(s.mean[static_cast<size_t>(z)] == g.mean[static_cast<size_t>(z)]);
      CHECK(s.stddev[static_cast<size_t>(z)] == g.stddev[static_cast<size_t>(z)]);
    }
  }
  CHECK_THROWS_AS(inject_sparsity(g, 1.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(inject_sparsity(g, -0.1, 1), std::invalid_argument);
}

TEST_CASE("zones_to_lowres_map") {
  Tensor depth = Tensor::full({64, 64}, 1.5);
  ZoneGrid g = fit_zones(depth, 8, 8);
  Tensor map = zones_to_lowres_map(g);
  for (std::size_t i = 0; i < map.size(); ++i) CHECK(map[i] == 1.5);

  ZoneGrid s = inject_sparsity(g, 0.1, 9);
  Tensor map2 = zones_to_lowres_map(s);
  for (int z = 0; z < 64; ++z)
    CHECK(map2[static_cast<size_t>(z)] == (s.valid[static_cast<size_t>(z)] ? 1.5 : 0.0));
}

TEST_CASE("round trip: fit(upsample_nn(map)) reproduces means exactly for std=0 grids") {
  Rng rng(19);
  Tensor depth({64, 64});
  ZoneGrid base = fit_zones(Tensor::full({64, 64}, 1.0), 8, 8);
  // piecewise-constant field with an arbitrary value per zone
  for (int z = 0; z < 64; ++z) {
    const ZoneRect& r = base.fov[static_cast<size_t>(z)];
    const double v = rng.uniform(0.5, 8.0);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) depth.at(y, x) = v;
  }
  ZoneGrid g = fit_zones(depth, 8, 8);
  for (int z = 0; z < 64; ++z) CHECK(g.stddev[static_cast<size_t>(z)] == 0.0);

  // nearest upsampling of the low-res map back to 64x64
  Tensor map = zones_to_lowres_map(g);
  Tensor up({64, 64});
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) up.at(y, x) = map.at(y * 8 / 64, x * 8 / 64);
  ZoneGrid g2 = fit_zones(up, 8, 8);
  for (int z = 0; z < 64; ++z) {
    CHECK(g2.mean[static_cast<size_t>(z)] == g.mean[static_cast<size_t>(z)]);  // exact
    CHECK(g2.stddev[static_cast<size_t>(z)] == 0.0);
  }
}

TEST_CASE("serialization: bit-exact round trip") {
  Rng rng(23);
  Tensor depth({40, 40});
  for (std::size_t i = 0; i < depth.size(); ++i)
    depth[i] = rng.next_double() < 0.2 ? 0.0 : rng.uniform(0.3, 9.7);
  ZoneGrid g = inject_sparsity(fit_zones(depth, 8, 8), 0.15, 5);
  std::stringstream ss;
  write_zone_grid(g, ss);
  ZoneGrid h = read_zone_grid(ss);
  CHECK(h.rows == g.rows);
  CHECK(h.cols == g.cols);
  CHECK(h.valid == g.valid);
  for (int z = 0; z < 64; ++z) {
    CHECK(std::memcmp(&h.mean[static_cast<size_t>(z)], &g.mean[static_cast<size_t>(z)], 8) == 0);
    CHECK(std::memcmp(&h.stddev[static_cast<size_t>(z)], &g.stddev[static_cast<size_t>(z)], 8) == 0);
  }
  for (int z = 0; z < 64; ++z) {
    CHECK(h.fov[static_cast<size_t>(z)].y0 == g.fov[static_cast<size_t>(z)].y0);
    CHECK(h.fov[static_cast<size_t>(z)].x1 == g.fov[static_cast<size_t>(z)].x1);
  }
}

TEST_CASE("footprints partition the image") {
  auto fov = zone_footprints(50, 70, 8, 8);
  std::vector<int> cover(50 * 70, 0);
  for (const auto& r : fov)
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) ++cover[static_cast<size_t>(y) * 70 + x];
  for (int c : cover) CHECK(c == 1);  // non-overlapping and contiguous
}

TEST_SUITE_END();
