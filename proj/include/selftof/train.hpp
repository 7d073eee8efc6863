// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "selftof/config.hpp"
#include "selftof/data.hpp"
#include "selftof/models.hpp"

namespace selftof::train {

struct StepResult {
  double photometric = 0.0;
  double smoothness = 0.0;
  double depth_consistency = 0.0;
  double total = 0.0;
  double scale = 1.0;           // mean recovered scale over the batch
  bool skipped = false;         // non-finite loss; no parameter update happened
  bool scale_fallback = false;  // no valid zones; identity scale used
};

// Owns both networks and the optimizer state; one logical owner mutates
// parameters. The evaluation path constructs DepthNet alone (see eval).
class Trainer {
 public:
  explicit Trainer(const config::Config& cfg);

  StepResult train_step(const std::vector<const data::FrameTriplet*>& batch);

  // Runs the fit loop (Adam, two-phase learning-rate schedule, per-epoch
  // checkpoints, CSV loss log). Returns checkpoint paths in epoch order.
  std::vector<std::string> fit(const std::vector<data::FrameTriplet>& dataset,
                               const std::string& run_dir, bool resume = false);

  double learning_rate(int epoch) const;
  std::int64_t step_count() const { return step_; }
  int epoch() const { return epoch_; }
  models::ParamStore& params() { return params_; }
  const models::DepthNet& depthnet() const { return depthnet_; }
  const config::Config& cfg() const { return cfg_; }

  // ZoneGrid seen by the networks for (epoch, triplet) under the train-time
  // sparsity augmentation policy; deterministic.
  tofsim::ZoneGrid augmented_grid(const tofsim::ZoneGrid& grid, std::int64_t epoch,
                                  std::int64_t triplet_index, int frame_slot) const;

  void load_checkpoint_state(const std::string& path);

 private:
  struct ItemLoss;
  ItemLoss item_loss(const data::FrameTriplet& t, std::int64_t epoch, std::int64_t triplet_index,
                     std::vector<Tensor>* grads, double grad_scale);
  void adam_update(const std::vector<Tensor>& grads, double lr);

  config::Config cfg_;
  models::ParamStore params_;
  models::DepthNet depthnet_;
  models::PoseNet posenet_;
  std::int64_t step_ = 0;
  int epoch_ = 0;
};

// ---- checkpoints ----
// Binary parameter/optimizer record plus a JSON manifest next to it listing
// parameter names and shapes for cross-implementation auditing.
void save_checkpoint(const std::string& path, const models::ParamStore& params,
                     const config::Config& cfg, std::int64_t step, std::int64_t epoch);

struct LoadedCheckpoint {
  config::Config cfg;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::map<std::string, Tensor> values;
  std::map<std::string, Tensor> adam_m, adam_v;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies matching entries into the store. require_all demands that every
// store entry be present in the checkpoint; with_moments restores Adam state.
void apply_checkpoint(const LoadedCheckpoint& ck, models::ParamStore& params, bool require_all,
                      bool with_moments);

void write_manifest(const std::string& path, const models::ParamStore& params,
                    const config::Config& cfg, std::int64_t step, std::int64_t epoch);

}  // namespace selftof::train
