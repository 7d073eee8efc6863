// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <stdexcept>

#include "selftof/autodiff.hpp"
#include "selftof/tensor.hpp"
#include "selftof/tofsim.hpp"

namespace selftof::scale {

struct NoScaleAvailable : std::runtime_error {
  NoScaleAvailable() : std::runtime_error("scale recovery: no valid zones") {}
};

struct ScaledDepth {
  Tensor depth;
  double scale = 1.0;
};

struct ScaledDepthAd {
  ad::Var depth;
  ad::Var scale;
};

// Per-zone median of the prediction over each valid-zone footprint, in zone
// order; gradient routes to the selected pixels.
ad::Var zone_medians_ad(const ad::Var& pred, const tofsim::ZoneGrid& grid);

// Global median scaling: scale = median(valid zone means) / median(pred over
// the union of valid-zone footprints).
ScaledDepthAd median_scaling_ms_ad(const ad::Var& pred, const tofsim::ZoneGrid& grid);
ScaledDepth median_scaling_ms(const Tensor& pred, const tofsim::ZoneGrid& grid);

// Median-of-median scaling: per-zone scale C_i / median(pred over zone i),
// then the median of those. Zones whose footprint median is <= 0 are skipped.
ScaledDepthAd median_of_median_scaling_mms_ad(const ad::Var& pred, const tofsim::ZoneGrid& grid);
ScaledDepth median_of_median_scaling_mms(const Tensor& pred, const tofsim::ZoneGrid& grid);

// Evaluation-time alignment for scale-ambiguous methods:
// pred * median(gt) / median(pred) over jointly valid pixels.
Tensor eval_median_scaling(const Tensor& pred, const Tensor& gt);

}  // namespace selftof::scale
