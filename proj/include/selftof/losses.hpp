// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <vector>

#include "selftof/autodiff.hpp"
#include "selftof/tensor.hpp"
#include "selftof/tofsim.hpp"

namespace selftof::losses {

struct LossWeights {
  double w_ph = 1.0;
  double w_s = 0.1;
  double w_dc = 0.01;
  double alpha = 0.85;
};

enum class PhotometricReduce { kMin, kAverage };
enum class DcReduce { kSum, kMean };

// Local-window SSIM map (3x3 mean pooling, reflect padding, C1=0.01^2,
// C2=0.03^2). Inputs in [0,1]; output per pixel (and channel) in [-1,1].
ad::Var ssim(const ad::Var& a, const ad::Var& b);

struct Reconstruction {
  ad::Var image;  // [C,H,W]
  Tensor mask;    // [H,W], 1 = usable pixel
};

struct PhotometricLoss {
  ad::Var value;
  bool degenerate = false;  // no jointly valid pixel
};

// alpha * (1-SSIM)/2 + (1-alpha) * L1, per-pixel minimum over sources
// (or average), averaged over pixels valid in every reconstruction.
PhotometricLoss photometric_loss(const ad::Var& target, const std::vector<Reconstruction>& recons,
                                 double alpha = 0.85,
                                 PhotometricReduce reduce = PhotometricReduce::kMin);

// Edge-aware smoothness of mean-normalised disparity (forward differences).
ad::Var smoothness_loss(const ad::Var& disparity, const Tensor& image);

// Zone-wise squared distance between measured and predicted Gaussian moments,
// summed over valid zones (kSum) or averaged (kMean).
ad::Var depth_consistency_loss(const ad::Var& pred_depth, const tofsim::ZoneGrid& grid,
                               DcReduce reduce = DcReduce::kSum);

// Moments of the prediction over each valid zone footprint, in zone order.
// Shares the moment kernel with tofsim::fit_zones.
std::pair<ad::Var, ad::Var> zone_moments_ad(const ad::Var& pred_depth,
                                            const tofsim::ZoneGrid& grid);

struct TotalLoss {
  ad::Var value;
  double photometric = 0.0;
  double smoothness = 0.0;
  double depth_consistency = 0.0;
  bool finite = true;  // false signals the training step to abort
};

TotalLoss total_loss(const ad::Var& photometric, const ad::Var& smoothness,
                     const ad::Var& depth_consistency, const LossWeights& w);

}  // namespace selftof::losses
