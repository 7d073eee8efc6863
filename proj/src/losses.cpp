// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace selftof::losses {

using ad::Var;

Var ssim(const Var& a, const Var& b) {
  if (!a.val().same_shape(b.val())) throw std::invalid_argument("ssim: shape mismatch");
  constexpr double C1 = 0.01 * 0.01;
  constexpr double C2 = 0.03 * 0.03;
  Var mu_a = ad::mean3x3_reflect(a);
  Var mu_b = ad::mean3x3_reflect(b);
  Var mu_ab = ad::mul(mu_a, mu_b);
  Var sig_a = ad::sub(ad::mean3x3_reflect(ad::mul(a, a)), ad::mul(mu_a, mu_a));
  Var sig_b = ad::sub(ad::mean3x3_reflect(ad::mul(b, b)), ad::mul(mu_b, mu_b));
  Var sig_ab = ad::sub(ad::mean3x3_reflect(ad::mul(a, b)), mu_ab);
  Var num = ad::mul(ad::add(ad::mul(mu_ab, 2.0), C1), ad::add(ad::mul(sig_ab, 2.0), C2));
  Var den = ad::mul(ad::add(ad::add(ad::mul(mu_a, mu_a), ad::mul(mu_b, mu_b)), C1),
                    ad::add(ad::add(sig_a, sig_b), C2));
  return ad::divide(num, den);
}

PhotometricLoss photometric_loss(const Var& target, const std::vector<Reconstruction>& recons,
                                 double alpha, PhotometricReduce reduce) {
  if (recons.empty()) throw std::invalid_argument("photometric_loss: needs >= 1 reconstruction");
  const Tensor& tv = target.val();
  const int H = tv.dim(1), W = tv.dim(2);

  Tensor joint = Tensor::full({H, W}, 1.0);
  for (const auto& r : recons) {
    if (!r.image.val().same_shape(tv)) throw std::invalid_argument("photometric_loss: shape mismatch");
    for (std::size_t i = 0; i < joint.size(); ++i) joint[i] *= r.mask[i];
  }

  Var combined;
  for (std::size_t k = 0; k < recons.size(); ++k) {
    Var l1 = ad::mean_channels(ad::vabs(ad::sub(target, recons[k].image)));
    Var dssim = ad::mul(ad::add(ad::neg(ad::mean_channels(ssim(target, recons[k].image))), 1.0), 0.5);
    Var pp = ad::add(ad::mul(dssim, alpha), ad::mul(l1, 1.0 - alpha));
    if (k == 0)
      combined = pp;
    else
      combined = reduce == PhotometricReduce::kMin ? ad::minimum(combined, pp)
                                                   : ad::add(combined, pp);
  }
  if (reduce == PhotometricReduce::kAverage && recons.size() > 1)
    combined = ad::mul(combined, 1.0 / static_cast<double>(recons.size()));

  double count = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) count += joint[i];
  PhotometricLoss out;
  if (count == 0.0) {
    out.value = Var::scalar(0.0);
    out.degenerate = true;
    return out;
  }
  out.value = ad::mul(ad::sum(ad::mul_mask(combined, joint)), 1.0 / count);
  return out;
}

Var smoothness_loss(const Var& disparity, const Tensor& image) {
  const Tensor& d = disparity.val();
  if (d.ndim() != 2) throw std::invalid_argument("smoothness_loss: disparity must be [H,W]");
  if (image.ndim() != 3 || image.dim(1) != d.dim(0) || image.dim(2) != d.dim(1))
    throw std::invalid_argument("smoothness_loss: image shape mismatch");
  const int C = image.dim(0), H = d.dim(0), W = d.dim(1);

  Var m = ad::mean(disparity);
  if (!(m.item() > 0.0)) throw std::invalid_argument("smoothness_loss: disparity mean must be positive");
  Var norm = ad::divide(disparity, m);

  // edge weights from the image, channel-averaged forward differences
  Tensor wx({H, W - 1}), wy({H - 1, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j + 1 < W; ++j) {
      double g = 0.0;
      for (int c = 0; c < C; ++c) g += std::fabs(image.at(c, i, j + 1) - image.at(c, i, j));
      wx.at(i, j) = std::exp(-g / C);
    }
  for (int i = 0; i + 1 < H; ++i)
    for (int j = 0; j < W; ++j) {
      double g = 0.0;
      for (int c = 0; c < C; ++c) g += std::fabs(image.at(c, i + 1, j) - image.at(c, i, j));
      wy.at(i, j) = std::exp(-g / C);
    }

  Var lx = ad::mean(ad::mul_mask(ad::vabs(ad::dx_forward(norm)), wx));
  Var ly = ad::mean(ad::mul_mask(ad::vabs(ad::dy_forward(norm)), wy));
  return ad::add(lx, ly);
}

std::pair<Var, Var> zone_moments_ad(const Var& pred_depth, const tofsim::ZoneGrid& grid) {
  const Tensor& d = pred_depth.val();
  if (d.ndim() != 2) throw std::invalid_argument("zone_moments_ad: depth must be [H,W]");
  const int W = d.dim(1);
  std::vector<int> zones;
  for (int z = 0; z < grid.zone_count(); ++z)
    if (grid.valid[static_cast<std::size_t>(z)]) zones.push_back(z);
  const int K = static_cast<int>(zones.size());
  if (K == 0) return {Var::constant(Tensor({0})), Var::constant(Tensor({0}))};
  for (int z : zones) {
    const auto& r = grid.fov[static_cast<std::size_t>(z)];
    if (r.y1 > d.dim(0) || r.x1 > W)
      throw std::invalid_argument("zone_moments_ad: prediction does not cover zone footprints");
  }

  Tensor mu({K}), sig({K});
  for (int k = 0; k < K; ++k) {
    const auto& r = grid.fov[static_cast<std::size_t>(zones[static_cast<std::size_t>(k)])];
    double m, s;
    block_mean_std(d.data(), W, r.y0, r.y1, r.x0, r.x1, m, s);
    mu[static_cast<std::size_t>(k)] = m;
    sig[static_cast<std::size_t>(k)] = s;
  }

  std::vector<tofsim::ZoneRect> rects;
  rects.reserve(static_cast<std::size_t>(K));
  for (int z : zones) rects.push_back(grid.fov[static_cast<std::size_t>(z)]);

  Tensor mu_copy = mu;
  auto mu_node = ad::make_node(mu, {pred_depth.node()}, [rects, W](ad::Node& n) {
    ad::Node& in = *n.inputs[0];
    Tensor g(in.val.shape());
    for (std::size_t k = 0; k < rects.size(); ++k) {
      const auto& r = rects[k];
      const double inv = n.grad[k] / (static_cast<double>(r.height()) * r.width());
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) g[static_cast<std::size_t>(y) * W + x] += inv;
    }
    in.accumulate(g);
  });

  // d sigma / d x_i = (x_i - mu) / (n * sigma); guarded near sigma = 0
  Tensor sig_vals = sig;
  auto sig_node =
      ad::make_node(sig, {pred_depth.node()}, [rects, W, mu_copy, sig_vals](ad::Node& n) {
        ad::Node& in = *n.inputs[0];
        Tensor g(in.val.shape());
        for (std::size_t k = 0; k < rects.size(); ++k) {
          const auto& r = rects[k];
          const double count = static_cast<double>(r.height()) * r.width();
          const double denom = count * std::max(sig_vals[k], 1e-12);
          const double gk = n.grad[k];
          for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) {
              const std::size_t i = static_cast<std::size_t>(y) * W + x;
              g[i] += gk * (in.val[i] - mu_copy[k]) / denom;
            }
        }
        in.accumulate(g);
      });

  return {Var(mu_node), Var(sig_node)};
}

Var depth_consistency_loss(const Var& pred_depth, const tofsim::ZoneGrid& grid, DcReduce reduce) {
  std::vector<double> mu_meas, sig_meas;
  for (int z = 0; z < grid.zone_count(); ++z)
    if (grid.valid[static_cast<std::size_t>(z)]) {
      mu_meas.push_back(grid.mean[static_cast<std::size_t>(z)]);
      sig_meas.push_back(grid.stddev[static_cast<std::size_t>(z)]);
    }
  const int K = static_cast<int>(mu_meas.size());
  if (K == 0) return Var::scalar(0.0);

  auto [mu_pred, sig_pred] = zone_moments_ad(pred_depth, grid);
  Var mu_t = Var::constant(Tensor::from({K}, mu_meas));
  Var sig_t = Var::constant(Tensor::from({K}, sig_meas));
  Var loss = ad::add(ad::sum(ad::square(ad::sub(mu_t, mu_pred))),
                     ad::sum(ad::square(ad::sub(sig_t, sig_pred))));
  if (reduce == DcReduce::kMean) loss = ad::mul(loss, 1.0 / K);
  return loss;
}

TotalLoss total_loss(const Var& photometric, const Var& smoothness, const Var& depth_consistency,
                     const LossWeights& w) {
  TotalLoss out;
  out.photometric = photometric.item();
  out.smoothness = smoothness.item();
  out.depth_consistency = depth_consistency.item();
  out.finite = std::isfinite(out.photometric) && std::isfinite(out.smoothness) &&
               std::isfinite(out.depth_consistency);
  out.value = ad::add(ad::add(ad::mul(photometric, w.w_ph), ad::mul(smoothness, w.w_s)),
                      ad::mul(depth_consistency, w.w_dc));
  return out;
}

}  // namespace selftof::losses
