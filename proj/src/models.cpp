// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/models.hpp"

#include <cmath>
#include <stdexcept>

namespace selftof::models {

using ad::Var;

void ModelConfig::check() const {
  if (!(min_depth > 0.0) || !(min_depth < max_depth))
    throw std::invalid_argument("ModelConfig: requires 0 < min_depth < max_depth");
  if (zone_rows <= 0 || zone_cols <= 0) throw std::invalid_argument("ModelConfig: bad zone grid");
}

ModelConfig ModelConfig::selftof() {
  ModelConfig c;
  c.fusion_mode = FusionMode::kAddition;
  c.depth_encoder_mode = DepthEncoderMode::kDense;
  return c;
}

ModelConfig ModelConfig::selftof_star() {
  ModelConfig c;
  c.fusion_mode = FusionMode::kGuided;
  c.depth_encoder_mode = DepthEncoderMode::kSubmanifold;
  return c;
}

ModelConfig ModelConfig::rgb_baseline() {
  ModelConfig c;
  c.use_tof_depthnet = false;
  c.use_tof_posenet = false;
  return c;
}

int ParamStore::add(const std::string& name, Tensor init) {
  Entry e;
  e.name = name;
  e.m = Tensor::zeros(init.shape());
  e.v = Tensor::zeros(init.shape());
  e.value = std::move(init);
  entries_.push_back(std::move(e));
  return static_cast<int>(entries_.size()) - 1;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::vector<std::string> ParamStore::manifest() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    std::string line = e.name;
    for (int d : e.value.shape()) line += " " + std::to_string(d);
    out.push_back(std::move(line));
  }
  return out;
}

Tensor LeafSet::grad(int id) const {
  const auto& v = leaves_[static_cast<std::size_t>(id)];
  if (v.defined() && v.has_grad()) return v.grad();
  return Tensor::zeros(store_->entry(id).value.shape());
}

namespace {

Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / fan_in);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * stddev;
  return t;
}

}  // namespace

Conv2d::Conv2d(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout, int k,
               int stride_, int pad_, bool zero_init)
    : stride(stride_), pad(pad_) {
  Tensor weight = zero_init ? Tensor::zeros({cout, cin, k, k})
                            : he_normal(rng, {cout, cin, k, k}, cin * k * k);
  w = ps.add(name + ".weight", std::move(weight));
  b = ps.add(name + ".bias", Tensor::zeros({cout}));
}

Var Conv2d::operator()(LeafSet& L, const Var& x) const {
  return ad::conv2d(x, L[w], L[b], stride, pad);
}

Var Conv2d::masked(LeafSet& L, const Var& x, const std::vector<std::uint8_t>& valid) const {
  return ad::submanifold_conv2d(x, L[w], L[b], valid, pad);
}

Linear::Linear(ParamStore& ps, Rng& rng, const std::string& name, int cin, int cout) {
  w = ps.add(name + ".weight", he_normal(rng, {cin, cout}, cin));
  b = ps.add(name + ".bias", Tensor::zeros({cout}));
}

Var Linear::operator()(LeafSet& L, const Var& x) const {
  return ad::add_rows(ad::matmul(x, L[w]), L[b]);
}

Tensor submanifold_conv(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        const std::vector<std::uint8_t>& valid) {
  const int k = kernel.dim(2);
  return ad::submanifold_conv2d(Var::constant(x), Var::constant(kernel), Var::constant(bias),
                                valid, (k - 1) / 2)
      .val();
}

// ---------------------------------------------------------------- encoders

ResNetEncoder::ResNetEncoder(ParamStore& ps, Rng& rng, const std::string& name, int in_channels) {
  conv1 = Conv2d(ps, rng, name + ".conv1", in_channels, kChannels[0], 7, 2, 3);
  int cin = kChannels[0];
  for (int stage = 0; stage < 4; ++stage) {
    const int cout = kChannels[static_cast<std::size_t>(stage) + 1];
    const int stride = stage == 0 ? 1 : 2;  // stage 0 follows the stride-2 maxpool
    for (int blk = 0; blk < 2; ++blk) {
      Block& b = blocks[static_cast<std::size_t>(stage * 2 + blk)];
      const std::string bn = name + ".stage" + std::to_string(stage + 1) + ".block" + std::to_string(blk);
      const int s = blk == 0 ? stride : 1;
      const int bin = blk == 0 ? cin : cout;
      b.c1 = Conv2d(ps, rng, bn + ".conv1", bin, cout, 3, s, 1);
      b.c2 = Conv2d(ps, rng, bn + ".conv2", cout, cout, 3, 1, 1);
      b.has_proj = (s != 1 || bin != cout);
      if (b.has_proj) b.proj = Conv2d(ps, rng, bn + ".proj", bin, cout, 1, s, 0);
    }
    cin = cout;
  }
}

std::array<Var, 5> ResNetEncoder::forward(LeafSet& L, const Var& x) const {
  std::array<Var, 5> feats;
  Var h = ad::elu(conv1(L, x));
  feats[0] = h;
  h = ad::maxpool2d(h, 3, 2, 1);
  for (int stage = 0; stage < 4; ++stage) {
    for (int blk = 0; blk < 2; ++blk) {
      const Block& b = blocks[static_cast<std::size_t>(stage * 2 + blk)];
      Var main = b.c2(L, ad::elu(b.c1(L, h)));
      Var shortcut = b.has_proj ? b.proj(L, h) : h;
      h = ad::elu(ad::add(main, shortcut));
    }
    feats[static_cast<std::size_t>(stage) + 1] = h;
  }
  return feats;
}

ZoneEncoder::ZoneEncoder(ParamStore& ps, Rng& rng, const std::string& name, int in_channels) {
  const auto& ch = ResNetEncoder::kChannels;
  layers[0] = Conv2d(ps, rng, name + ".conv1x1", in_channels, ch[0], 1, 1, 0);
  for (int i = 1; i < 5; ++i)
    layers[static_cast<std::size_t>(i)] =
        Conv2d(ps, rng, name + ".conv3x3_" + std::to_string(i), ch[static_cast<std::size_t>(i) - 1],
               ch[static_cast<std::size_t>(i)], 3, 1, 1);
}

std::array<Var, 5> ZoneEncoder::forward(LeafSet& L, const Var& zone_map,
                                        const std::vector<std::uint8_t>& valid,
                                        DepthEncoderMode mode) const {
  std::array<Var, 5> feats;
  Var h = zone_map;
  for (int i = 0; i < 5; ++i) {
    const Conv2d& c = layers[static_cast<std::size_t>(i)];
    h = mode == DepthEncoderMode::kSubmanifold ? c.masked(L, h, valid) : c(L, h);
    h = ad::elu(h);  // elu(0) = 0 keeps invalid zones at zero
    feats[static_cast<std::size_t>(i)] = h;
  }
  return feats;
}

// ---------------------------------------------------------------- fusion

Tensor sinusoidal_position_encoding(int positions, int channels) {
  Tensor pe({positions, channels});
  for (int p = 0; p < positions; ++p)
    for (int i = 0; i < channels / 2; ++i) {
      const double freq = std::exp(-std::log(10000.0) * (2.0 * i / channels));
      pe.at(p, 2 * i) = std::sin(p * freq);
      pe.at(p, 2 * i + 1) = std::cos(p * freq);
    }
  return pe;
}

GuidedFusion::GuidedFusion(ParamStore& ps, Rng& rng, const std::string& name, int channels_,
                           int zones)
    : channels(channels_) {
  key = Linear(ps, rng, name + ".key", channels_, channels_);
  query = Linear(ps, rng, name + ".query", channels_, channels_);
  value = Linear(ps, rng, name + ".value", channels_, channels_);
  pos_encoding = sinusoidal_position_encoding(zones, channels_);
}

Var GuidedFusion::forward(LeafSet& L, const Var& rgb_feat, const Var& depth_feat,
                          const std::vector<std::uint8_t>& valid, bool normalize,
                          Var* affinity_out) const {
  const int C = depth_feat.val().dim(0);
  const int zr = depth_feat.val().dim(1), zc = depth_feat.val().dim(2);
  const int z = zr * zc;
  if (C != channels) throw std::invalid_argument("GuidedFusion: channel mismatch");
  const int h = rgb_feat.val().dim(1), w = rgb_feat.val().dim(2);

  Var pooled = ad::avgpool_adaptive(rgb_feat, zr, zc);
  Var tokens = ad::transpose2d(ad::reshape(pooled, {C, z}));             // [z,C]
  Var tokens_pe = ad::add(tokens, Var::constant(pos_encoding));
  Var k = key(L, tokens_pe);
  Var q = query(L, tokens_pe);
  Var logits = ad::mul(ad::matmul(q, ad::transpose2d(k)), 1.0 / std::sqrt(double(C)));

  Var affinity;
  if (normalize) {
    affinity = ad::softmax_rows_masked(logits, valid);
  } else {
    Tensor colmask({z, z});
    for (int r = 0; r < z; ++r)
      for (int c2 = 0; c2 < z; ++c2) colmask.at(r, c2) = valid[static_cast<std::size_t>(c2)] ? 1.0 : 0.0;
    affinity = ad::mul_mask(logits, colmask);
  }
  if (affinity_out) *affinity_out = affinity;

  Var depth_tokens = ad::transpose2d(ad::reshape(depth_feat, {C, z}));   // [z,C]
  Var propagated = ad::matmul(affinity, value(L, depth_tokens));         // [z,C]
  Var prop_chw = ad::reshape(ad::transpose2d(propagated), {C, zr, zc});

  Var out8 = ad::add(ad::add(pooled, depth_feat), prop_chw);
  return ad::add(rgb_feat, ad::resize_nearest(out8, h, w));
}

// ---------------------------------------------------------------- DepthNet

namespace {
constexpr std::array<int, 5> kDecoderChannels{16, 16, 32, 64, 128};
}

DepthNet::DepthNet(ParamStore& ps, Rng& rng, const ModelConfig& cfg_) : cfg(cfg_) {
  cfg.check();
  const auto& enc = ResNetEncoder::kChannels;
  rgb_encoder = ResNetEncoder(ps, rng, "depthnet.rgb_encoder", 3);
  if (cfg.use_tof_depthnet) {
    zone_encoder = ZoneEncoder(ps, rng, "depthnet.zone_encoder", 1);
    if (cfg.fusion_mode == FusionMode::kGuided)
      for (int i = 0; i < 5; ++i)
        fusions[static_cast<std::size_t>(i)] =
            GuidedFusion(ps, rng, "depthnet.fusion" + std::to_string(i), enc[static_cast<std::size_t>(i)],
                         cfg.zone_rows * cfg.zone_cols);
  }
  for (int i = 4; i >= 0; --i) {
    const int cin0 = i == 4 ? enc[4] : kDecoderChannels[static_cast<std::size_t>(i) + 1];
    const int cout = kDecoderChannels[static_cast<std::size_t>(i)];
    upconv0[static_cast<std::size_t>(i)] =
        Conv2d(ps, rng, "depthnet.decoder.up" + std::to_string(i) + "_0", cin0, cout, 3, 1, 1);
    const int cin1 = cout + (i > 0 ? enc[static_cast<std::size_t>(i) - 1] : 0);
    upconv1[static_cast<std::size_t>(i)] =
        Conv2d(ps, rng, "depthnet.decoder.up" + std::to_string(i) + "_1", cin1, cout, 3, 1, 1);
  }
  disp_head = Conv2d(ps, rng, "depthnet.disp_head", kDecoderChannels[0], 1, 3, 1, 1);
}

DepthNetOutput DepthNet::forward(LeafSet& L, const Tensor& rgb, const Tensor& zone_map,
                                 const std::vector<std::uint8_t>& zone_valid) const {
  if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw std::invalid_argument("DepthNet: rgb must be [3,H,W]");
  const int H = rgb.dim(1), W = rgb.dim(2);

  auto feats = rgb_encoder.forward(L, Var::constant(rgb));

  if (cfg.use_tof_depthnet) {
    if (zone_map.ndim() != 2 || zone_map.dim(0) != cfg.zone_rows || zone_map.dim(1) != cfg.zone_cols)
      throw std::invalid_argument("DepthNet: zone map shape mismatch");
    Var zmap = Var::constant(zone_map.reshaped({1, cfg.zone_rows, cfg.zone_cols}));
    auto zfeats = zone_encoder.forward(L, zmap, zone_valid, cfg.depth_encoder_mode);
    for (int i = 0; i < 5; ++i) {
      const int h = feats[static_cast<std::size_t>(i)].val().dim(1);
      const int w = feats[static_cast<std::size_t>(i)].val().dim(2);
      if (cfg.fusion_mode == FusionMode::kAddition) {
        feats[static_cast<std::size_t>(i)] = ad::add(
            feats[static_cast<std::size_t>(i)],
            ad::resize_nearest(zfeats[static_cast<std::size_t>(i)], h, w));
      } else {
        feats[static_cast<std::size_t>(i)] = fusions[static_cast<std::size_t>(i)].forward(
            L, feats[static_cast<std::size_t>(i)], zfeats[static_cast<std::size_t>(i)], zone_valid,
            cfg.normalize_affinity);
      }
    }
  }

  Var x = feats[4];
  for (int i = 4; i >= 0; --i) {
    x = ad::elu(upconv0[static_cast<std::size_t>(i)](L, x));
    const int th = i > 0 ? feats[static_cast<std::size_t>(i) - 1].val().dim(1) : H;
    const int tw = i > 0 ? feats[static_cast<std::size_t>(i) - 1].val().dim(2) : W;
    x = ad::resize_nearest(x, th, tw);
    if (i > 0) x = ad::concat_c(x, feats[static_cast<std::size_t>(i) - 1]);
    x = ad::elu(upconv1[static_cast<std::size_t>(i)](L, x));
  }
  Var raw = ad::sigmoid(disp_head(L, x));  // [1,H,W]
  // sigmoid -> inverse depth in [1/max_depth, 1/min_depth]
  const double a = 1.0 / cfg.min_depth - 1.0 / cfg.max_depth;
  const double b = 1.0 / cfg.max_depth;
  DepthNetOutput out;
  out.disparity = ad::add(ad::mul(ad::reshape(raw, {H, W}), a), b);
  out.depth = ad::divide(Var::scalar(1.0), out.disparity);
  return out;
}

// ---------------------------------------------------------------- PoseNet

PoseNet::PoseNet(ParamStore& ps, Rng& rng, const ModelConfig& cfg_) : cfg(cfg_) {
  cfg.check();
  const int c5 = ResNetEncoder::kChannels[4];
  rgb_encoder = ResNetEncoder(ps, rng, "posenet.rgb_encoder", 6);
  if (cfg.use_tof_posenet) {
    zone_encoder = ZoneEncoder(ps, rng, "posenet.zone_encoder", 2);
    if (cfg.fusion_mode == FusionMode::kGuided)
      fusion = GuidedFusion(ps, rng, "posenet.fusion", c5, cfg.zone_rows * cfg.zone_cols);
  }
  squeeze = Conv2d(ps, rng, "posenet.decoder.squeeze", c5, 256, 1, 1, 0);
  pconv1 = Conv2d(ps, rng, "posenet.decoder.conv1", 256, 256, 3, 1, 1);
  pconv2 = Conv2d(ps, rng, "posenet.decoder.conv2", 256, 256, 3, 1, 1);
  head = Conv2d(ps, rng, "posenet.decoder.head", 256, 6, 1, 1, 0, /*zero_init=*/true);
}

PoseNetOutput PoseNet::forward(LeafSet& L, const Tensor& target_rgb, const Tensor& source_rgb,
                               const Tensor& target_zone_map, const Tensor& source_zone_map,
                               const std::vector<std::uint8_t>& target_valid,
                               const std::vector<std::uint8_t>& source_valid) const {
  if (!target_rgb.same_shape(source_rgb))
    throw std::invalid_argument("PoseNet: frame pair shape mismatch");
  Var pair = ad::concat_c(Var::constant(target_rgb), Var::constant(source_rgb));
  auto feats = rgb_encoder.forward(L, pair);
  Var lowest = feats[4];

  if (cfg.use_tof_posenet) {
    if (!target_zone_map.same_shape(source_zone_map))
      throw std::invalid_argument("PoseNet: zone map pair shape mismatch");
    const int zr = cfg.zone_rows, zc = cfg.zone_cols;
    Var zpair = ad::concat_c(Var::constant(target_zone_map.reshaped({1, zr, zc})),
                             Var::constant(source_zone_map.reshaped({1, zr, zc})));
    // union mask: a zone participates when either frame observed it; the
    // missing frame contributes an exact zero by the grid contract
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(zr) * zc);
    for (std::size_t i = 0; i < valid.size(); ++i)
      valid[i] = static_cast<std::uint8_t>(target_valid[i] || source_valid[i]);
    auto zfeats = zone_encoder.forward(L, zpair, valid, cfg.depth_encoder_mode);
    const int h = lowest.val().dim(1), w = lowest.val().dim(2);
    if (cfg.fusion_mode == FusionMode::kAddition)
      lowest = ad::add(lowest, ad::resize_nearest(zfeats[4], h, w));
    else
      lowest = fusion.forward(L, lowest, zfeats[4], valid, cfg.normalize_affinity);
  }

  Var x = ad::elu(squeeze(L, lowest));
  x = ad::elu(pconv1(L, x));
  x = ad::elu(pconv2(L, x));
  Var pose6 = ad::mul(ad::mean_spatial(head(L, x)), cfg.pose_scale);
  PoseNetOutput out;
  out.axis_angle = ad::slice_vec(pose6, 0, 3);
  out.translation = ad::slice_vec(pose6, 3, 6);
  return out;
}

}  // namespace selftof::models
