// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "selftof/data.hpp"
#include "selftof/losses.hpp"
#include "selftof/models.hpp"

namespace selftof::config {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

enum class ScaleMode { kNone, kMS, kMMS };
enum class Protocol { kScaleAware, kMedianScaled };

// Flat key=value configuration covering simulation, training and evaluation.
// Parsing is strict: unknown keys and malformed values are ConfigErrors that
// name the offending key.
struct Config {
  // simulate
  int sim_scenes = 4;
  std::uint64_t sim_seed = 1;
  data::SceneConfig scene;

  // triplet sampling
  int data_stride = 2;
  std::vector<int> data_offsets{-2, 2};

  // model / losses / scale recovery
  models::ModelConfig model;
  losses::LossWeights weights;
  losses::PhotometricReduce photometric_reduce = losses::PhotometricReduce::kMin;
  losses::DcReduce dc_reduce = losses::DcReduce::kSum;
  ScaleMode scale_mode = ScaleMode::kMMS;
  bool scale_in_graph = true;

  // training
  std::uint64_t train_seed = 1;
  int batch = 4;
  int epochs = 100;
  double lr_initial = 1e-4;
  double lr_final = 1e-5;
  int lr_drop_epoch = 75;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;        // 0 disables clipping
  double sparsity_aug = 0.0;     // train-time SR drawn uniformly from [0, this]
  int checkpoint_every = 0;      // 0: only the final epoch; n: every n epochs
  int max_triplets = 0;          // 0: use every triplet

  // evaluation
  double eval_cap = 10.0;
  Protocol eval_protocol = Protocol::kScaleAware;
  double eval_sr = 0.0;
  std::uint64_t eval_seed = 0;

  // Desk profile: the defaults above (64x64 RGB, 8x8 zones, batch 4).
  static Config desk_profile();
  // Paper profile: 256x256 RGB, batch 8, 40 epochs, lr drop at 30.
  static Config paper_profile();
  static Config profile(const std::string& name);

  // Sorted key=value lines; parse(serialize()) is the identity.
  std::string serialize() const;
  static Config parse(const std::string& text);
  static Config parse_file(const std::string& path);
  void validate() const;  // throws ConfigError
};

}  // namespace selftof::config
