// License: Apache 2.0. See LICENSE file in root directory.
#include <cmath>

#include "doctest.h"
#include "selftof/rng.hpp"
#include "selftof/scale.hpp"
#include "selftof/tofsim.hpp"

using namespace selftof;
using namespace selftof::scale;

TEST_SUITE_BEGIN("scale");

namespace {

// zone-constant depth field (64x64, 8x8 zones); values with few mantissa bits
// so that zone means reproduce them exactly
Tensor zone_constant_field(Rng& rng, std::vector<double>* zone_values = nullptr) {
  Tensor depth({64, 64});
  auto fov = tofsim::zone_footprints(64, 64, 8, 8);
  for (const auto& r : fov) {
    const double v = static_cast<double>(1 + rng.next_below(512)) / 64.0;  // (0, 8]
    if (zone_values) zone_values->push_back(v);
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) depth.at(y, x) = v;
  }
  return depth;
}

double sort_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("MS: metric, zone-consistent prediction recovers scale 1") {
  Rng rng(3);
  Tensor depth = zone_constant_field(rng);
  tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
  ScaledDepth r = median_scaling_ms(depth, g);
  CHECK(r.scale == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("MS: prediction GT/2 with zones from GT recovers scale 2") {
  Rng rng(5);
  Tensor depth = zone_constant_field(rng);
  tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
  Tensor half = depth.clone();
  for (std::size_t i = 0; i < half.size(); ++i) half[i] *= 0.5;
  ScaledDepth r = median_scaling_ms(half, g);
  CHECK(r.scale == doctest::Approx(2.0).epsilon(1e-6));
  for (std::size_t i = 0; i < depth.size(); ++i)
    CHECK(r.depth[i] == doctest::Approx(depth[i]).epsilon(1e-6));
}

TEST_CASE("MS: random inputs match a sort-based median oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor gt({32, 32}), pred({32, 32});
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt[i] = rng.uniform(0.5, 8.0);
      pred[i] = rng.uniform(0.5, 8.0);
    }
    tofsim::ZoneGrid g = tofsim::inject_sparsity(tofsim::fit_zones(gt, 8, 8), 0.3, trial);
    std::vector<double> means, pixels;
    for (int z = 0; z < 64; ++z) {
      if (!g.valid[static_cast<size_t>(z)]) continue;
      means.push_back(g.mean[static_cast<size_t>(z)]);
      const auto& r = g.fov[static_cast<size_t>(z)];
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) pixels.push_back(pred.at(y, x));
    }
    const double oracle = sort_median(means) / sort_median(pixels);
    CHECK(median_scaling_ms(pred, g).scale == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("MMS: homogeneity recovers any positive scale") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor depth = zone_constant_field(rng);
    tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
    const double s = rng.uniform(0.1, 10.0);
    Tensor pred = depth.clone();
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] /= s;
    ScaledDepth r = median_of_median_scaling_mms(pred, g);
    CHECK(r.scale == doctest::Approx(s).epsilon(1e-6));
  }
}

TEST_CASE("MMS: median robustness against a minority of outlier zones") {
  Rng rng(13);
  Tensor depth = zone_constant_field(rng);
  tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
  // prediction at exactly half scale, then corrupt two zones hard
  Tensor pred = depth.clone();
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] *= 0.5;
  auto corrupt = [&](int z, double factor) {
    const auto& r = g.fov[static_cast<size_t>(z)];
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) pred.at(y, x) *= factor;
  };
  corrupt(5, 0.2);   // zone scale becomes 10
  corrupt(40, 0.2);
  ScaledDepth mms = median_of_median_scaling_mms(pred, g);
  CHECK(mms.scale == doctest::Approx(2.0).epsilon(1e-9));  // 62 of 64 zones still say 2.0

  // brute-force oracle over the constructed zone set
  std::vector<double> zone_scales;
  for (int z = 0; z < 64; ++z) {
    const auto& r = g.fov[static_cast<size_t>(z)];
    std::vector<double> px;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) px.push_back(pred.at(y, x));
    zone_scales.push_back(g.mean[static_cast<size_t>(z)] / sort_median(px));
  }
  CHECK(mms.scale == doctest::Approx(sort_median(zone_scales)).epsilon(1e-9));
}

TEST_CASE("MMS equals MS on a uniform field") {
  Tensor depth = Tensor::full({64, 64}, 2.5);
  tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
  Tensor pred = Tensor::full({64, 64}, 5.0);
  CHECK(median_of_median_scaling_mms(pred, g).scale ==
        doctest::Approx(median_scaling_ms(pred, g).scale).epsilon(1e-12));
}

TEST_CASE("MS/MMS: no valid zones raises NoScaleAvailable; zero-median zones skipped") {
  tofsim::ZoneGrid empty = tofsim::fit_zones(Tensor::zeros({64, 64}), 8, 8);
  Tensor pred = Tensor::full({64, 64}, 1.0);
  CHECK_THROWS_AS(median_scaling_ms(pred, empty), NoScaleAvailable);
  CHECK_THROWS_AS(median_of_median_scaling_mms(pred, empty), NoScaleAvailable);

  // a zone whose prediction median is zero is skipped by MMS
  Rng rng(17);
  Tensor depth = zone_constant_field(rng);
  tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
  Tensor pz = depth.clone();
  const auto& r0 = g.fov[0];
  for (int y = r0.y0; y < r0.y1; ++y)
    for (int x = r0.x0; x < r0.x1; ++x) pz.at(y, x) = 0.0;
  ScaledDepth r = median_of_median_scaling_mms(pz, g);
  CHECK(std::isfinite(r.scale));
  CHECK(r.scale > 0.0);
}

TEST_CASE("scale equivariance is exact for power-of-two rescalings") {
  Rng rng(19);
  Tensor depth = zone_constant_field(rng);
  tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
  Tensor pred({64, 64});
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = rng.uniform(0.5, 4.0);

  for (double k : {0.25, 0.5, 2.0, 8.0}) {
    Tensor scaled = pred.clone();
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= k;
    ScaledDepth base_ms = median_scaling_ms(pred, g);
    ScaledDepth ms = median_scaling_ms(scaled, g);
    CHECK(ms.scale == base_ms.scale / k);  // exact
    for (std::size_t i = 0; i < pred.size(); ++i) CHECK(ms.depth[i] == base_ms.depth[i]);

    ScaledDepth base_mms = median_of_median_scaling_mms(pred, g);
    ScaledDepth mms = median_of_median_scaling_mms(scaled, g);
    CHECK(mms.scale == base_mms.scale / k);
    for (std::size_t i = 0; i < pred.size(); ++i) CHECK(mms.depth[i] == base_mms.depth[i]);
  }
}

TEST_CASE("eval median scaling") {
  Rng rng(23);
  Tensor gt({16, 16});
  for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = rng.uniform(0.5, 6.0);

  SUBCASE("pred = gt is unchanged") {
    Tensor out = eval_median_scaling(gt, gt);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == gt[i]);
  }
  SUBCASE("pred = gt/2 maps exactly onto gt") {
    Tensor half = gt.clone();
    for (std::size_t i = 0; i < half.size(); ++i) half[i] *= 0.5;
    Tensor out = eval_median_scaling(half, gt);
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(gt[i]).epsilon(1e-12));
  }
  SUBCASE("random pair matches the median oracle") {
    Tensor pred({16, 16});
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = rng.uniform(0.5, 6.0);
    std::vector<double> pv(pred.data(), pred.data() + pred.size());
    std::vector<double> gv(gt.data(), gt.data() + gt.size());
    const double s = sort_median(gv) / sort_median(pv);
    Tensor out = eval_median_scaling(pred, gt);
    for (std::size_t i = 0; i < out.size(); ++i)
      CHECK(out[i] == doctest::Approx(pred[i] * s).epsilon(1e-9));
  }
  SUBCASE("empty overlap is rejected") {
    CHECK_THROWS_AS(eval_median_scaling(Tensor::zeros({4, 4}), Tensor::full({4, 4}, 1.0)),
                    std::invalid_argument);
  }
}

TEST_CASE("median convention: even counts average the two middle values") {
  CHECK(median_of({3.0, 1.0}) == 2.0);
  CHECK(median_of({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(median_of({5.0, 1.0, 3.0}) == 3.0);
}

TEST_CASE("MMS gradient flows through the selected zones only") {
  Rng rng(29);
  Tensor depth = zone_constant_field(rng);
  tofsim::ZoneGrid g = tofsim::fit_zones(depth, 8, 8);
  Tensor pred({64, 64});
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = rng.uniform(1.0, 3.0);
  ad::Var p = ad::Var::leaf(pred.clone(), true);
  ScaledDepthAd r = median_of_median_scaling_mms_ad(p, g);
  ad::backward(r.scale);
  REQUIRE(p.has_grad());
  int touched = 0;
  for (std::size_t i = 0; i < p.grad().size(); ++i) touched += p.grad()[i] != 0.0;
  CHECK(touched >= 1);
  CHECK(touched <= 4);  // at most two selected zones, two median pixels each
}

TEST_SUITE_END();
