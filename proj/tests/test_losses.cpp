// License: Apache 2.0. See LICENSE file in root directory.
#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "selftof/losses.hpp"
#include "selftof/rng.hpp"
#include "selftof/tofsim.hpp"

using namespace selftof;
using namespace selftof::losses;
using ad::Var;

TEST_SUITE_BEGIN("losses");

namespace {

// independent sliding-window SSIM oracle with reflect padding
double oracle_ssim_at(const Tensor& a, const Tensor& b, int i, int j) {
  const int H = a.dim(0), W = a.dim(1);
  auto refl = [](int x, int n) { return x < 0 ? -x : (x >= n ? 2 * n - 2 - x : x); };
  double ma = 0, mb = 0;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      ma += a.at(refl(i + di, H), refl(j + dj, W));
      mb += b.at(refl(i + di, H), refl(j + dj, W));
    }
  ma /= 9;
  mb /= 9;
  double va = 0, vb = 0, cov = 0;
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      const double xa = a.at(refl(i + di, H), refl(j + dj, W));
      const double xb = b.at(refl(i + di, H), refl(j + dj, W));
      va += xa * xa;
      vb += xb * xb;
      cov += xa * xb;
    }
  va = va / 9 - ma * ma;
  vb = vb / 9 - mb * mb;
  cov = cov / 9 - ma * mb;
  const double C1 = 1e-4, C2 = 9e-4;
  return ((2 * ma * mb + C1) * (2 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
}

tofsim::ZoneGrid grid_from(const Tensor& depth, int rows, int cols) {
  return tofsim::fit_zones(depth, rows, cols);
}

}  // namespace

TEST_CASE("ssim of identical images is exactly 1") {
  Rng rng(3);
  Tensor a({12, 12});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.next_double();
  Var s = ssim(Var::constant(a), Var::constant(a));
  for (std::size_t i = 0; i < s.val().size(); ++i) CHECK(s.val()[i] == 1.0);
}

TEST_CASE("ssim of constant 0 vs constant 1 is tiny") {
  Tensor a = Tensor::zeros({8, 8});
  Tensor b = Tensor::full({8, 8}, 1.0);
  Var s = ssim(Var::constant(a), Var::constant(b));
  // analytic: means 0 and 1, variances 0 -> (C1*C2)/((1+C1)*C2) = C1/(1+C1)
  const double expect = 1e-4 / (1.0 + 1e-4);
  for (std::size_t i = 0; i < s.val().size(); ++i) {
    CHECK(s.val()[i] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(s.val()[i] < 0.01);
  }
}

TEST_CASE("ssim matches the sliding-window oracle on random pairs") {
  Rng rng(7);
  Tensor a({10, 14}), b({10, 14});
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.next_double();
    b[i] = rng.next_double();
  }
  Var s = ssim(Var::constant(a), Var::constant(b));
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 14; ++j)
      CHECK(s.val().at(i, j) == doctest::Approx(oracle_ssim_at(a, b, i, j)).epsilon(1e-5));
}

TEST_CASE("photometric loss: identical images give exactly zero") {
  Rng rng(11);
  Tensor img({3, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  Reconstruction r{Var::constant(img), Tensor::full({8, 8}, 1.0)};
  PhotometricLoss l = photometric_loss(Var::constant(img), {r});
  CHECK(l.value.item() == 0.0);
  CHECK_FALSE(l.degenerate);
}

TEST_CASE("photometric loss on constant images with a 0.1 offset") {
  const double alpha = 0.85;
  Tensor t = Tensor::full({3, 8, 8}, 0.4);
  Tensor w = Tensor::full({3, 8, 8}, 0.5);
  Reconstruction r{Var::constant(w), Tensor::full({8, 8}, 1.0)};
  PhotometricLoss l = photometric_loss(Var::constant(t), {r}, alpha);
  // constant pair: variances 0; SSIM = (2 ab + C1)(C2)/((a^2+b^2+C1) C2)
  const double a = 0.4, b = 0.5, C1 = 1e-4;
  const double s = (2 * a * b + C1) / (a * a + b * b + C1);
  const double expect = alpha * (1 - s) / 2 + (1 - alpha) * 0.1;
  CHECK(l.value.item() == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("photometric min-selection: a perfect source dominates") {
  Rng rng(13);
  Tensor img({3, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  Tensor corrupted = img.clone();
  for (std::size_t i = 0; i < corrupted.size(); ++i)
    corrupted[i] = std::min(1.0, corrupted[i] + rng.uniform(0.1, 0.3));
  Tensor full = Tensor::full({8, 8}, 1.0);
  Reconstruction perfect{Var::constant(img), full};
  Reconstruction bad{Var::constant(corrupted), full};
  PhotometricLoss both = photometric_loss(Var::constant(img), {perfect, bad});
  PhotometricLoss alone = photometric_loss(Var::constant(img), {perfect});
  CHECK(both.value.item() == doctest::Approx(alone.value.item()).epsilon(1e-12));
  CHECK(both.value.item() == 0.0);
}

TEST_CASE("photometric loss: zero valid pixels is degenerate zero") {
  Tensor img = Tensor::full({3, 4, 4}, 0.3);
  Reconstruction r{Var::constant(img), Tensor::zeros({4, 4})};
  PhotometricLoss l = photometric_loss(Var::constant(img), {r});
  CHECK(l.value.item() == 0.0);
  CHECK(l.degenerate);
}

TEST_CASE("smoothness: constant disparity is exactly zero") {
  Tensor disp = Tensor::full({8, 8}, 0.7);
  Rng rng(17);
  Tensor img({3, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  CHECK(smoothness_loss(Var::constant(disp), img).item() == 0.0);
}

TEST_CASE("smoothness: linear ramp on a constant image") {
  const int H = 6, W = 9;
  Tensor disp({H, W});
  const double slope = 0.05, base = 1.0;
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) disp.at(i, j) = base + slope * j;
  Tensor img = Tensor::full({3, H, W}, 0.5);
  const double mean_disp = base + slope * (W - 1) / 2.0;
  // x-gradient of the normalised ramp is slope/mean everywhere; no y term
  const double expect = slope / mean_disp;
  CHECK(smoothness_loss(Var::constant(disp), img).item() == doctest::Approx(expect).epsilon(1e-9));

  // an aligned image edge strictly reduces the penalty
  Tensor edgy = img.clone();
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) edgy.at(0, i, j) = j < W / 2 ? 0.1 : 0.9;
  CHECK(smoothness_loss(Var::constant(disp), edgy).item() < expect);
}

TEST_CASE("smoothness is exactly invariant to positive disparity rescaling") {
  Rng rng(19);
  Tensor disp({8, 8});
  for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = rng.uniform(0.5, 2.0);
  Tensor img({3, 8, 8});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  const double l1 = smoothness_loss(Var::constant(disp), img).item();
  Tensor scaled = disp.clone();
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 4.0;  // power of two: exact
  const double l2 = smoothness_loss(Var::constant(scaled), img).item();
  CHECK(l1 == l2);

  CHECK_THROWS_AS(smoothness_loss(Var::constant(Tensor::zeros({4, 4})), Tensor::full({3, 4, 4}, 0.1)),
                  std::invalid_argument);
}

TEST_CASE("depth consistency: moment-matched prediction gives exactly zero") {
  Rng rng(23);
  Tensor depth({32, 32});
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = rng.uniform(1.0, 5.0);
  tofsim::ZoneGrid g = grid_from(depth, 8, 8);
  CHECK(depth_consistency_loss(Var::constant(depth), g).item() == 0.0);
}

TEST_CASE("depth consistency: single valid zone arithmetic") {
  // constant prediction 2.0 vs one valid zone mu=1, sigma=0 -> (1)^2 = 1
  Tensor gt = Tensor::zeros({8, 8});
  tofsim::ZoneGrid g = grid_from(Tensor::full({8, 8}, 1.0), 1, 1);
  CHECK(g.valid_count() == 1);
  CHECK(g.mean[0] == 1.0);
  Tensor pred = Tensor::full({8, 8}, 2.0);
  CHECK(depth_consistency_loss(Var::constant(pred), g).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("depth consistency matches a per-zone loop oracle") {
  Rng rng(29);
  Tensor gt_depth({40, 40}), pred({40, 40});
  for (std::size_t i = 0; i < gt_depth.size(); ++i) {
    gt_depth[i] = rng.next_double() < 0.2 ? 0.0 : rng.uniform(1.0, 6.0);
    pred[i] = rng.uniform(0.8, 6.5);
  }
  tofsim::ZoneGrid g = tofsim::inject_sparsity(grid_from(gt_depth, 8, 8), 0.2, 3);
  double oracle = 0.0;
  for (int z = 0; z < g.zone_count(); ++z) {
    if (!g.valid[static_cast<size_t>(z)]) continue;
    const auto& r = g.fov[static_cast<size_t>(z)];
    double sum = 0.0;
    int n = 0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        sum += pred.at(y, x);
        ++n;
      }
    const double mu = sum / n;
    double ss = 0.0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) ss += (pred.at(y, x) - mu) * (pred.at(y, x) - mu);
    const double sigma = std::sqrt(ss / n);
    oracle += (g.mean[static_cast<size_t>(z)] - mu) * (g.mean[static_cast<size_t>(z)] - mu) +
              (g.stddev[static_cast<size_t>(z)] - sigma) * (g.stddev[static_cast<size_t>(z)] - sigma);
  }
  CHECK(depth_consistency_loss(Var::constant(pred), g).item() ==
        doctest::Approx(oracle).epsilon(1e-6));
  // mean-over-zones variant
  CHECK(depth_consistency_loss(Var::constant(pred), g, DcReduce::kMean).item() ==
        doctest::Approx(oracle / g.valid_count()).epsilon(1e-6));
}

TEST_CASE("depth consistency: zero valid zones gives zero; permutation invariance") {
  Tensor pred = Tensor::full({8, 8}, 2.0);
  tofsim::ZoneGrid empty = grid_from(Tensor::zeros({8, 8}), 2, 2);
  CHECK(depth_consistency_loss(Var::constant(pred), empty).item() == 0.0);

  Rng rng(31);
  Tensor depth({16, 16});
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = rng.uniform(1.0, 3.0);
  tofsim::ZoneGrid g = grid_from(Tensor::full({16, 16}, 2.0), 2, 2);
  const double before = depth_consistency_loss(Var::constant(depth), g).item();
  Tensor shuffled = depth.clone();
  for (const auto& r : g.fov) {
    std::vector<double> vals;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) vals.push_back(depth.at(y, x));
    rng.shuffle(vals);
    std::size_t k = 0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) shuffled.at(y, x) = vals[k++];
  }
  CHECK(depth_consistency_loss(Var::constant(shuffled), g).item() ==
        doctest::Approx(before).epsilon(1e-9));
}

TEST_CASE("total loss: weighted combination and abort signal") {
  LossWeights w;
  TotalLoss t = total_loss(Var::scalar(1.0), Var::scalar(1.0), Var::scalar(1.0), w);
  CHECK(t.value.item() == doctest::Approx(1.11).epsilon(1e-12));
  CHECK(t.finite);

  LossWeights zero{0.0, 0.0, 0.0, 0.85};
  CHECK(total_loss(Var::scalar(3.0), Var::scalar(4.0), Var::scalar(5.0), zero).value.item() == 0.0);

  TotalLoss bad = total_loss(Var::scalar(std::nan("")), Var::scalar(1.0), Var::scalar(1.0), w);
  CHECK_FALSE(bad.finite);
}

TEST_CASE("total loss on a fixture of recorded parts matches the hand sum") {
  LossWeights w;
  const double ph = 0.123456789, s = 0.042, dc = 3.25;
  TotalLoss t = total_loss(Var::scalar(ph), Var::scalar(s), Var::scalar(dc), w);
  CHECK(t.value.item() == doctest::Approx(1.0 * ph + 0.1 * s + 0.01 * dc).epsilon(1e-9));
  CHECK(t.photometric == ph);
  CHECK(t.smoothness == s);
  CHECK(t.depth_consistency == dc);
}

TEST_CASE("gradcheck: all losses w.r.t. their continuous inputs") {
  Rng rng(37);

  SUBCASE("photometric") {
    Tensor t({2, 6, 6}), r({2, 6, 6});
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = rng.next_double();
      r[i] = rng.next_double();
    }
    Tensor mask = Tensor::full({6, 6}, 1.0);
    testutil::GradCheck gc;
    gc.inputs = {t, r};
    gc.builder = [mask](std::vector<Var>& v) {
      return photometric_loss(v[0], {Reconstruction{v[1], mask}}).value;
    };
    std::vector<std::pair<int, std::size_t>> probes;
    for (int k = 0; k < 2; ++k)
      for (int i = 0; i < 10; ++i) probes.emplace_back(k, rng.next_below(t.size()));
    CHECK(gc.max_rel_error(probes) < 1e-4);
  }

  SUBCASE("smoothness") {
    Tensor disp({6, 6});
    for (std::size_t i = 0; i < disp.size(); ++i) disp[i] = rng.uniform(0.5, 1.5);
    Tensor img({3, 6, 6});
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
    testutil::GradCheck gc;
    gc.inputs = {disp};
    gc.builder = [img](std::vector<Var>& v) { return smoothness_loss(v[0], img); };
    CHECK(gc.max_rel_error(testutil::random_probes(disp, 0, 20, rng)) < 1e-4);
  }

  SUBCASE("depth consistency") {
    Tensor gt({16, 16}), pred({16, 16});
    for (std::size_t i = 0; i < gt.size(); ++i) {
      gt[i] = rng.uniform(1.0, 4.0);
      pred[i] = rng.uniform(1.0, 4.0);
    }
    tofsim::ZoneGrid g = grid_from(gt, 4, 4);
    testutil::GradCheck gc;
    gc.inputs = {pred};
    gc.builder = [g](std::vector<Var>& v) { return depth_consistency_loss(v[0], g); };
    CHECK(gc.max_rel_error(testutil::random_probes(pred, 0, 20, rng)) < 1e-4);
  }
}

TEST_SUITE_END();
