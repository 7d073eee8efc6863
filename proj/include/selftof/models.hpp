// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "selftof/autodiff.hpp"
#include "selftof/rng.hpp"
#include "selftof/tensor.hpp"

namespace selftof::models {

enum class FusionMode { kAddition, kGuided };
enum class DepthEncoderMode { kDense, kSubmanifold };

struct ModelConfig {
  FusionMode fusion_mode = FusionMode::kAddition;
  DepthEncoderMode depth_encoder_mode = DepthEncoderMode::kDense;
  double min_depth = 0.1;
  double max_depth = 10.0;
  double pose_scale = 0.01;
  bool use_tof_depthnet = true;   // TD: zone map into DepthNet
  bool use_tof_posenet = true;    // TP: zone maps into PoseNet
  bool normalize_affinity = true; // row softmax in guided fusion (ablation switch)
  int zone_rows = 8;
  int zone_cols = 8;

  void check() const;
  // SelfToF: addition fusion + dense encoder. SelfToF*: guided + submanifold.
  static ModelConfig selftof();
  static ModelConfig selftof_star();
  static ModelConfig rgb_baseline();
};

// Persistent named parameters plus Adam moment buffers.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m, v;  // Adam moments
  };

  int add(const std::string& name, Tensor init);
  Entry& entry(int id) { return entries_[static_cast<std::size_t>(id)]; }
  const Entry& entry(int id) const { return entries_[static_cast<std::size_t>(id)]; }
  int count() const { return static_cast<int>(entries_.size()); }
  std::size_t scalar_count() const;
  // "name shape..." lines, one per parameter, construction order
  std::vector<std::string> manifest() const;

 private:
  std::vector<Entry> entries_;
};

// Binds parameters to graph leaves; one per forward graph.
class LeafSet {
 public:
  explicit LeafSet(const ParamStore* store, bool requires_grad = true)
      : store_(store), requires_grad_(requires_grad),
        leaves_(static_cast<std::size_t>(store->count())) {}

  ad::Var operator[](int id) {
    auto& v = leaves_[static_cast<std::size_t>(id)];
    if (!v.defined())
      v = ad::Var::leaf(store_->entry(id).value, requires_grad_, id);
    return v;
  }
  // gradient of a parameter after backward (zero tensor if untouched)
  Tensor grad(int id) const;
  bool has_grad(int id) const {
    const auto& v = leaves_[static_cast<std::size_t>(id)];
    return v.defined() && v.has_grad();
  }

 private:
  const ParamStore* store_;
  bool requires_grad_;
  std::vector<ad::Var> leaves_;
};

struct Conv2d {
  int w = -1, b = -1;
  int stride = 1, pad = 0;
  Conv2d() = default;
  Conv2d(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout, int k, int stride,
         int pad, bool zero_init = false);
  ad::Var operator()(LeafSet& L, const ad::Var& x) const;
  ad::Var masked(LeafSet& L, const ad::Var& x, const std::vector<std::uint8_t>& valid) const;
};

struct Linear {
  int w = -1, b = -1;
  Linear() = default;
  Linear(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout);
  ad::Var operator()(LeafSet& L, const ad::Var& x) const;  // [n,cin] -> [n,cout]
};

// Spec-level masked convolution on an 8x8 zone feature map: valid outputs
// gather only from valid inputs, invalid outputs stay exactly zero.
Tensor submanifold_conv(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        const std::vector<std::uint8_t>& valid);

// Compact 18-layer residual encoder; returns features at strides 2..32 with
// channels {16, 32, 64, 128, 256}.
struct ResNetEncoder {
  static constexpr std::array<int, 5> kChannels{16, 32, 64, 128, 256};
  Conv2d conv1;
  struct Block {
    Conv2d c1, c2, proj;
    bool has_proj = false;
  };
  std::array<Block, 8> blocks;

  ResNetEncoder() = default;
  ResNetEncoder(ParamStore& ps, Rng& rng, const std::string& name, int in_channels);
  std::array<ad::Var, 5> forward(LeafSet& L, const ad::Var& x) const;
};

// Zone-map encoder: a 1x1 layer then 3x3 layers at 8x8 resolution, one output
// per RGB scale; submanifold mode keeps invalid zones at exactly zero.
struct ZoneEncoder {
  std::array<Conv2d, 5> layers;
  ZoneEncoder() = default;
  ZoneEncoder(ParamStore& ps, Rng& rng, const std::string& name, int in_channels);
  std::array<ad::Var, 5> forward(LeafSet& L, const ad::Var& zone_map,
                                 const std::vector<std::uint8_t>& valid,
                                 DepthEncoderMode mode) const;
};

// Affinity-guided propagation of zone features steered by pooled,
// position-encoded RGB tokens. Operates at the zone resolution.
struct GuidedFusion {
  Linear key, query, value;
  int channels = 0;
  Tensor pos_encoding;  // sinusoidal, [zones, channels]

  GuidedFusion() = default;
  GuidedFusion(ParamStore& ps, Rng& rng, const std::string& name, int channels, int zones);
  // exposes the affinity matrix for tests/visualisation
  ad::Var forward(LeafSet& L, const ad::Var& rgb_feat, const ad::Var& depth_feat,
                  const std::vector<std::uint8_t>& valid, bool normalize,
                  ad::Var* affinity_out = nullptr) const;
};

Tensor sinusoidal_position_encoding(int positions, int channels);

struct DepthNetOutput {
  ad::Var disparity;  // [H,W], sigmoid output scaled to inverse depth
  ad::Var depth;      // [H,W], in [min_depth, max_depth]
};

struct DepthNet {
  ModelConfig cfg;
  ResNetEncoder rgb_encoder;
  ZoneEncoder zone_encoder;
  std::array<GuidedFusion, 5> fusions;
  std::array<Conv2d, 5> upconv0;  // pre-upsample convs, scale 4..0
  std::array<Conv2d, 5> upconv1;  // post-skip convs, scale 4..0
  Conv2d disp_head;

  DepthNet() = default;
  DepthNet(ParamStore& ps, Rng& rng, const ModelConfig& cfg);
  DepthNetOutput forward(LeafSet& L, const Tensor& rgb, const Tensor& zone_map,
                         const std::vector<std::uint8_t>& zone_valid) const;
};

struct PoseNetOutput {
  ad::Var axis_angle;   // [3]
  ad::Var translation;  // [3]
};

struct PoseNet {
  ModelConfig cfg;
  ResNetEncoder rgb_encoder;  // on channel-concatenated frame pair
  ZoneEncoder zone_encoder;   // on stacked zone-map pair
  GuidedFusion fusion;        // lowest level only
  Conv2d squeeze, pconv1, pconv2, head;

  PoseNet() = default;
  PoseNet(ParamStore& ps, Rng& rng, const ModelConfig& cfg);
  PoseNetOutput forward(LeafSet& L, const Tensor& target_rgb, const Tensor& source_rgb,
                        const Tensor& target_zone_map, const Tensor& source_zone_map,
                        const std::vector<std::uint8_t>& target_valid,
                        const std::vector<std::uint8_t>& source_valid) const;
};

}  // namespace selftof::models
