// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "selftof/config.hpp"
#include "selftof/data.hpp"
#include "selftof/geometry.hpp"
#include "selftof/tensor.hpp"
#include "selftof/tofsim.hpp"

namespace selftof::eval {

struct MetricsReport {
  double abs_rel = 0.0, sq_rel = 0.0, rmse = 0.0, rmse_log = 0.0, log10 = 0.0;
  double a1 = 0.0, a2 = 0.0, a3 = 0.0;  // delta < 1.25, 1.25^2, 1.25^3
  std::optional<double> rot_deg, tr_deg;
  int sample_count = 0;

  void check_invariants() const;  // a1 <= a2 <= a3, errors >= 0
  std::string csv_row() const;    // paper column order
  static std::string csv_header();
};

// Standard depth metrics over gt in (0, cap], averaged per image.
MetricsReport depth_metrics(const Tensor& pred, const Tensor& gt, double cap);
MetricsReport average_reports(const std::vector<MetricsReport>& reports);

// (rotation geodesic error deg, translation angular error deg); the second is
// absent when the reference translation is zero.
std::pair<double, std::optional<double>> pose_metrics(const geom::RigidTransform& pred,
                                                      const geom::RigidTransform& gt);

// Nearest-neighbour zone upsampling; invalid zones take the nearest valid
// zone's mean (Euclidean zone-centre distance, ties to the smaller index).
Tensor baseline_nn(const tofsim::ZoneGrid& grid, int height, int width);

// Guided filter with an RGB guide (per-window linear model, count-normalised
// box windows).
Tensor baseline_guided_filter(const Tensor& depth, const Tensor& guide_rgb, int radius = 8,
                              double eps = 1e-3);

struct EvalSample {
  Tensor rgb;
  tofsim::ZoneGrid zones;
  Tensor gt_depth;
  std::string tag;
};

std::vector<EvalSample> samples_from_sequences(const std::vector<data::Sequence>& seqs);
std::vector<EvalSample> samples_from_triplets(const std::vector<data::FrameTriplet>& triplets);

struct EvalOptions {
  config::Protocol protocol = config::Protocol::kScaleAware;
  double cap = 10.0;
  double sparsity_ratio = 0.0;
  std::uint64_t seed = 0;
  std::string per_sample_csv;  // optional output path
  std::string dump_dir;        // optional: prediction + error maps as PFM
};

// Runs DepthNet (with the checkpoint's scale-recovery mode) per sample. Only
// DepthNet parameters are loaded; PoseNet weights are never touched.
MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const std::vector<EvalSample>& samples, const EvalOptions& opts);

// Same harness for the classical baselines of the comparison table.
enum class BaselineKind { kNearest, kGuidedFilter };
MetricsReport evaluate_baseline(BaselineKind kind, const std::vector<EvalSample>& samples,
                                const EvalOptions& opts);

}  // namespace selftof::eval
