// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "selftof/geometry.hpp"
#include "selftof/losses.hpp"
#include "selftof/rng.hpp"
#include "selftof/scale.hpp"

namespace fs = std::filesystem;

namespace selftof::train {

using ad::Var;

Trainer::Trainer(const config::Config& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.train_seed);
  depthnet_ = models::DepthNet(params_, rng, cfg_.model);
  posenet_ = models::PoseNet(params_, rng, cfg_.model);
}

double Trainer::learning_rate(int epoch) const {
  return epoch < cfg_.lr_drop_epoch ? cfg_.lr_initial : cfg_.lr_final;
}

tofsim::ZoneGrid Trainer::augmented_grid(const tofsim::ZoneGrid& grid, std::int64_t epoch,
                                         std::int64_t triplet_index, int frame_slot) const {
  if (cfg_.sparsity_aug <= 0.0) return grid;
  Rng r = Rng(cfg_.train_seed)
              .fork(0x5eedu + static_cast<std::uint64_t>(epoch))
              .fork(static_cast<std::uint64_t>(triplet_index) * 31 + static_cast<std::uint64_t>(frame_slot));
  const double ratio = r.uniform(0.0, cfg_.sparsity_aug);
  return tofsim::inject_sparsity(grid, ratio, r.next_u64());
}

struct Trainer::ItemLoss {
  double photometric = 0.0;
  double smoothness = 0.0;
  double depth_consistency = 0.0;
  double total = 0.0;
  bool finite = true;
  double scale = 1.0;
  bool scale_fallback = false;
  bool degenerate_photometric = false;
};

// Builds the per-triplet loss graph; when grads is non-null and the loss is
// finite, runs backward and accumulates grad * grad_scale per parameter.
Trainer::ItemLoss Trainer::item_loss(const data::FrameTriplet& t, std::int64_t epoch,
                                     std::int64_t triplet_index, std::vector<Tensor>* grads,
                                     double grad_scale) {
  models::LeafSet L(&params_, /*requires_grad=*/grads != nullptr);
  const geom::Intrinsics& K = t.intrinsics;

  tofsim::ZoneGrid tgt_zones = augmented_grid(t.target_zones, epoch, triplet_index, 0);
  Tensor tgt_map = tofsim::zones_to_lowres_map(tgt_zones);

  models::DepthNetOutput dn = depthnet_.forward(L, t.target_rgb, tgt_map, tgt_zones.valid);

  ItemLoss out;
  Var metric_depth = dn.depth;
  if (cfg_.scale_mode != config::ScaleMode::kNone) {
    try {
      scale::ScaledDepthAd sd = cfg_.scale_mode == config::ScaleMode::kMS
                                    ? scale::median_scaling_ms_ad(dn.depth, tgt_zones)
                                    : scale::median_of_median_scaling_mms_ad(dn.depth, tgt_zones);
      out.scale = sd.scale.item();
      metric_depth = cfg_.scale_in_graph ? sd.depth : ad::mul(dn.depth, out.scale);
    } catch (const scale::NoScaleAvailable&) {
      out.scale_fallback = true;  // keep scale = 1
    }
  }

  std::vector<losses::Reconstruction> recons;
  for (std::size_t s = 0; s < t.source_rgbs.size(); ++s) {
    tofsim::ZoneGrid src_zones =
        augmented_grid(t.source_zones[s], epoch, triplet_index, static_cast<int>(s) + 1);
    Tensor src_map = tofsim::zones_to_lowres_map(src_zones);
    models::PoseNetOutput pn =
        posenet_.forward(L, t.target_rgb, t.source_rgbs[s], tgt_map, src_map, tgt_zones.valid,
                         src_zones.valid);
    geom::SynthesisAd sy = geom::synthesize_ad(Var::constant(t.source_rgbs[s]), metric_depth, K,
                                               pn.axis_angle, pn.translation);
    recons.push_back({sy.image, sy.mask});
  }

  losses::PhotometricLoss ph =
      losses::photometric_loss(Var::constant(t.target_rgb), recons, cfg_.weights.alpha,
                               cfg_.photometric_reduce);
  out.degenerate_photometric = ph.degenerate;
  Var smooth = losses::smoothness_loss(dn.disparity, t.target_rgb);
  Var dc = cfg_.weights.w_dc > 0.0
               ? losses::depth_consistency_loss(metric_depth, tgt_zones, cfg_.dc_reduce)
               : Var::scalar(0.0);
  losses::TotalLoss total = losses::total_loss(ph.value, smooth, dc, cfg_.weights);
  out.photometric = total.photometric;
  out.smoothness = total.smoothness;
  out.depth_consistency = total.depth_consistency;
  out.total = total.value.item();
  out.finite = total.finite && std::isfinite(out.total);

  if (grads && out.finite) {
    ad::backward(total.value);
    for (int id = 0; id < params_.count(); ++id) {
      if (!L.has_grad(id)) continue;
      const Tensor g = L.grad(id);
      Tensor& acc = (*grads)[static_cast<std::size_t>(id)];
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * grad_scale;
    }
  }
  return out;
}

void Trainer::adam_update(const std::vector<Tensor>& grads, double lr) {
  const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2, eps = cfg_.adam_eps;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (int id = 0; id < params_.count(); ++id) {
    auto& e = params_.entry(id);
    const Tensor& g = grads[static_cast<std::size_t>(id)];
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double gi = g[i];
      e.m[i] = b1 * e.m[i] + (1.0 - b1) * gi;
      e.v[i] = b2 * e.v[i] + (1.0 - b2) * gi * gi;
      const double mhat = e.m[i] / c1;
      const double vhat = e.v[i] / c2;
      e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

StepResult Trainer::train_step(const std::vector<const data::FrameTriplet*>& batch) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  StepResult res;
  std::vector<Tensor> grads(static_cast<std::size_t>(params_.count()));
  for (int id = 0; id < params_.count(); ++id)
    grads[static_cast<std::size_t>(id)] = Tensor::zeros(params_.entry(id).value.shape());

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double scale_sum = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    // per-item graph; gradients accumulate in batch order for determinism
    ItemLoss il = item_loss(*batch[k], epoch_,
                            static_cast<std::int64_t>(step_) * 131 + static_cast<std::int64_t>(k),
                            &grads, inv_n);
    res.photometric += il.photometric * inv_n;
    res.smoothness += il.smoothness * inv_n;
    res.depth_consistency += il.depth_consistency * inv_n;
    scale_sum += il.scale;
    res.scale_fallback |= il.scale_fallback;
    if (!il.finite) {
      res.skipped = true;
      return res;
    }
    res.total += il.total * inv_n;
  }
  res.scale = scale_sum * inv_n;

  if (cfg_.grad_clip > 0.0) {
    double norm2 = 0.0;
    for (const auto& g : grads)
      for (std::size_t i = 0; i < g.size(); ++i) norm2 += g[i] * g[i];
    const double norm = std::sqrt(norm2);
    if (norm > cfg_.grad_clip) {
      const double f = cfg_.grad_clip / norm;
      for (auto& g : grads)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= f;
    }
  }

  ++step_;
  adam_update(grads, learning_rate(epoch_));
  return res;
}

std::vector<std::string> Trainer::fit(const std::vector<data::FrameTriplet>& dataset,
                                      const std::string& run_dir, bool resume) {
  if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");
  fs::create_directories(run_dir);

  int start_epoch = 0;
  if (resume) {
    // resume from the newest checkpoint in the run directory
    std::string latest;
    for (int e = cfg_.epochs - 1; e >= 0; --e) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "/epoch_%04d.ckpt", e);
      if (fs::exists(run_dir + buf)) {
        latest = run_dir + buf;
        break;
      }
    }
    if (!latest.empty()) {
      load_checkpoint_state(latest);
      start_epoch = epoch_ + 1;
    }
  }

  {
    std::ofstream echo(run_dir + "/config.txt");
    echo << cfg_.serialize();
  }
  std::ofstream log(run_dir + "/loss_log.csv", resume ? std::ios::app : std::ios::out);
  if (start_epoch == 0) log << "step,L_ph,L_s,L_dc,total\n";

  std::vector<std::string> ckpts;
  for (int e = start_epoch; e < cfg_.epochs; ++e) {
    epoch_ = e;
    std::vector<int> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng = Rng(cfg_.train_seed).fork(0xdadau + static_cast<std::uint64_t>(e));
    shuffle_rng.shuffle(order);

    for (std::size_t pos = 0; pos < order.size(); pos += static_cast<std::size_t>(cfg_.batch)) {
      std::vector<const data::FrameTriplet*> batch;
      for (std::size_t k = pos; k < std::min(order.size(), pos + static_cast<std::size_t>(cfg_.batch)); ++k)
        batch.push_back(&dataset[static_cast<std::size_t>(order[k])]);
      StepResult r = train_step(batch);
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g,%.12g,%.12g\n",
                    static_cast<long long>(step_), r.photometric, r.smoothness,
                    r.depth_consistency, r.total);
      log << buf;
    }

    const bool last = e + 1 == cfg_.epochs;
    if (last || (cfg_.checkpoint_every > 0 && (e + 1) % cfg_.checkpoint_every == 0)) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "/epoch_%04d.ckpt", e);
      const std::string path = run_dir + buf;
      save_checkpoint(path, params_, cfg_, step_, e);
      write_manifest(run_dir + "/manifest.json", params_, cfg_, step_, e);
      ckpts.push_back(path);
    }
  }
  return ckpts;
}

void Trainer::load_checkpoint_state(const std::string& path) {
  LoadedCheckpoint ck = load_checkpoint(path);
  apply_checkpoint(ck, params_, /*require_all=*/true, /*with_moments=*/true);
  step_ = ck.step;
  epoch_ = static_cast<int>(ck.epoch);
}

// ---------------------------------------------------------------- checkpoint

namespace {
constexpr char kMagic[] = "SELFTOF_CKPT v1\n";

void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), 8);
}
std::uint64_t read_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
void write_tensor(std::ofstream& f, const Tensor& t) {
  write_u64(f, static_cast<std::uint64_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_u64(f, static_cast<std::uint64_t>(t.dim(i)));
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
}
Tensor read_tensor(std::ifstream& f) {
  const auto nd = read_u64(f);
  std::vector<int> shape;
  for (std::uint64_t i = 0; i < nd; ++i) shape.push_back(static_cast<int>(read_u64(f)));
  Tensor t(shape);
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
  return t;
}
}  // namespace

void save_checkpoint(const std::string& path, const models::ParamStore& params,
                     const config::Config& cfg, std::int64_t step, std::int64_t epoch) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kMagic, sizeof(kMagic) - 1);
  const std::string cfg_text = cfg.serialize();
  write_u64(f, cfg_text.size());
  f.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  write_u64(f, static_cast<std::uint64_t>(step));
  write_u64(f, static_cast<std::uint64_t>(epoch));
  write_u64(f, static_cast<std::uint64_t>(params.count()));
  for (int id = 0; id < params.count(); ++id) {
    const auto& e = params.entry(id);
    write_u64(f, e.name.size());
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_tensor(f, e.value);
    write_tensor(f, e.m);
    write_tensor(f, e.v);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[sizeof(kMagic)] = {};
  f.read(magic, sizeof(kMagic) - 1);
  if (std::string(magic, sizeof(kMagic) - 1) != kMagic)
    throw std::runtime_error("bad checkpoint magic in " + path);
  LoadedCheckpoint ck;
  const auto cfg_len = read_u64(f);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
  ck.cfg = config::Config::parse(cfg_text);
  ck.step = static_cast<std::int64_t>(read_u64(f));
  ck.epoch = static_cast<std::int64_t>(read_u64(f));
  const auto n = read_u64(f);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto len = read_u64(f);
    std::string name(len, '\0');
    f.read(name.data(), static_cast<std::streamsize>(len));
    ck.values[name] = read_tensor(f);
    ck.adam_m[name] = read_tensor(f);
    ck.adam_v[name] = read_tensor(f);
  }
  if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  return ck;
}

void apply_checkpoint(const LoadedCheckpoint& ck, models::ParamStore& params, bool require_all,
                      bool with_moments) {
  for (int id = 0; id < params.count(); ++id) {
    auto& e = params.entry(id);
    auto it = ck.values.find(e.name);
    if (it == ck.values.end()) {
      if (require_all) throw std::runtime_error("checkpoint missing parameter: " + e.name);
      continue;
    }
    if (!it->second.same_shape(e.value))
      throw std::runtime_error("checkpoint shape mismatch for parameter: " + e.name);
    std::memcpy(e.value.data(), it->second.data(), it->second.size() * 8);
    if (with_moments) {
      std::memcpy(e.m.data(), ck.adam_m.at(e.name).data(), it->second.size() * 8);
      std::memcpy(e.v.data(), ck.adam_v.at(e.name).data(), it->second.size() * 8);
    }
  }
}

void write_manifest(const std::string& path, const models::ParamStore& params,
                    const config::Config& cfg, std::int64_t step, std::int64_t epoch) {
  nlohmann::ordered_json j;
  j["format"] = "selftof-checkpoint-manifest-v1";
  j["step"] = step;
  j["epoch"] = epoch;
  j["parameter_scalars"] = params.scalar_count();
  auto arr = nlohmann::ordered_json::array();
  for (int id = 0; id < params.count(); ++id) {
    const auto& e = params.entry(id);
    nlohmann::ordered_json p;
    p["name"] = e.name;
    p["shape"] = e.value.shape();
    arr.push_back(p);
  }
  j["parameters"] = arr;
  nlohmann::ordered_json cj;
  std::stringstream ss(cfg.serialize());
  std::string line;
  while (std::getline(ss, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) cj[line.substr(0, eq)] = line.substr(eq + 3);
  }
  j["config"] = cj;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
}

}  // namespace selftof::train
