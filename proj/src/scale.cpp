// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/scale.hpp"

#include <cmath>

namespace selftof::scale {

using ad::Var;

namespace {

// flat pixel indices of a zone footprint, row-major
std::vector<int> footprint_indices(const tofsim::ZoneRect& r, int width) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(r.height()) * r.width());
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) idx.push_back(y * width + x);
  return idx;
}

void check_pred(const Tensor& pred, const tofsim::ZoneGrid& grid) {
  if (pred.ndim() != 2) throw std::invalid_argument("scale recovery: pred must be [H,W]");
  for (int z = 0; z < grid.zone_count(); ++z)
    if (grid.valid[static_cast<std::size_t>(z)]) {
      const auto& r = grid.fov[static_cast<std::size_t>(z)];
      if (r.y1 > pred.dim(0) || r.x1 > pred.dim(1))
        throw std::invalid_argument("scale recovery: pred does not cover zone footprints");
    }
}

}  // namespace

Var zone_medians_ad(const Var& pred, const tofsim::ZoneGrid& grid) {
  check_pred(pred.val(), grid);
  const int W = pred.val().dim(1);
  std::vector<Var> meds;
  Var flat = ad::reshape(pred, {static_cast<int>(pred.val().size())});
  for (int z = 0; z < grid.zone_count(); ++z) {
    if (!grid.valid[static_cast<std::size_t>(z)]) continue;
    meds.push_back(ad::median(ad::gather_vec(flat, footprint_indices(grid.fov[static_cast<std::size_t>(z)], W))));
  }
  return ad::pack(meds, {static_cast<int>(meds.size())});
}

ScaledDepthAd median_scaling_ms_ad(const Var& pred, const tofsim::ZoneGrid& grid) {
  check_pred(pred.val(), grid);
  const int W = pred.val().dim(1);
  std::vector<double> zone_means;
  std::vector<int> union_idx;
  for (int z = 0; z < grid.zone_count(); ++z) {
    if (!grid.valid[static_cast<std::size_t>(z)]) continue;
    zone_means.push_back(grid.mean[static_cast<std::size_t>(z)]);
    auto idx = footprint_indices(grid.fov[static_cast<std::size_t>(z)], W);
    union_idx.insert(union_idx.end(), idx.begin(), idx.end());
  }
  if (zone_means.empty()) throw NoScaleAvailable();

  const double measured = median_of(zone_means);
  Var flat = ad::reshape(pred, {static_cast<int>(pred.val().size())});
  Var pred_median = ad::median(ad::gather_vec(flat, union_idx));
  ScaledDepthAd out;
  out.scale = ad::divide(Var::scalar(measured), pred_median);
  out.depth = ad::mul(pred, out.scale);
  return out;
}

ScaledDepthAd median_of_median_scaling_mms_ad(const Var& pred, const tofsim::ZoneGrid& grid) {
  check_pred(pred.val(), grid);
  Var meds = zone_medians_ad(pred, grid);
  const int K = meds.val().dim(0);
  if (K == 0) throw NoScaleAvailable();
  std::vector<double> zone_means;
  for (int z = 0; z < grid.zone_count(); ++z)
    if (grid.valid[static_cast<std::size_t>(z)]) zone_means.push_back(grid.mean[static_cast<std::size_t>(z)]);

  // skip zones whose footprint median is not positive
  std::vector<int> usable;
  std::vector<double> usable_means;
  for (int k = 0; k < K; ++k)
    if (meds.val()[static_cast<std::size_t>(k)] > 0.0) {
      usable.push_back(k);
      usable_means.push_back(zone_means[static_cast<std::size_t>(k)]);
    }
  if (usable.empty()) throw NoScaleAvailable();

  Var med_used = ad::gather_vec(meds, usable);
  Var zone_scales =
      ad::divide(Var::constant(Tensor::from({static_cast<int>(usable_means.size())}, usable_means)),
                 med_used);
  ScaledDepthAd out;
  out.scale = ad::median(zone_scales);
  out.depth = ad::mul(pred, out.scale);
  return out;
}

ScaledDepth median_scaling_ms(const Tensor& pred, const tofsim::ZoneGrid& grid) {
  ScaledDepthAd r = median_scaling_ms_ad(Var::constant(pred), grid);
  return {r.depth.val(), r.scale.item()};
}

ScaledDepth median_of_median_scaling_mms(const Tensor& pred, const tofsim::ZoneGrid& grid) {
  ScaledDepthAd r = median_of_median_scaling_mms_ad(Var::constant(pred), grid);
  return {r.depth.val(), r.scale.item()};
}

Tensor eval_median_scaling(const Tensor& pred, const Tensor& gt) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("eval_median_scaling: shape mismatch");
  std::vector<double> pv, gv;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool ok = std::isfinite(pred[i]) && pred[i] > 0.0 && std::isfinite(gt[i]) && gt[i] > 0.0;
    if (ok) {
      pv.push_back(pred[i]);
      gv.push_back(gt[i]);
    }
  }
  if (pv.empty()) throw std::invalid_argument("eval_median_scaling: empty valid overlap");
  const double s = median_of(gv) / median_of(pv);
  Tensor out(pred.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pred[i] * s;
  return out;
}

}  // namespace selftof::scale
