// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace selftof::config {

namespace {

std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Field {
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

template <typename T>
T parse_number(const std::string& key, const std::string& raw);

template <>
double parse_number<double>(const std::string& key, const std::string& raw) {
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(raw, &pos);
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + raw + "'");
  }
  if (pos != raw.size())
    throw ConfigError("config key '" + key + "': trailing characters in '" + raw + "'");
  return v;
}

template <>
int parse_number<int>(const std::string& key, const std::string& raw) {
  std::size_t pos = 0;
  long v;
  try {
    v = std::stol(raw, &pos);
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + raw + "'");
  }
  if (pos != raw.size())
    throw ConfigError("config key '" + key + "': trailing characters in '" + raw + "'");
  return static_cast<int>(v);
}

template <>
std::uint64_t parse_number<std::uint64_t>(const std::string& key, const std::string& raw) {
  std::size_t pos = 0;
  unsigned long long v;
  try {
    v = std::stoull(raw, &pos);
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + raw + "'");
  }
  if (pos != raw.size())
    throw ConfigError("config key '" + key + "': trailing characters in '" + raw + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  if (raw == "true" || raw == "1") return true;
  if (raw == "false" || raw == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + raw + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& raw) {
  std::vector<int> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

const std::map<std::string, Field>& schema() {
  static const std::map<std::string, Field> s = [] {
    std::map<std::string, Field> m;
    auto num = [](auto getter, auto setter) { return Field{getter, setter}; };

#define NUM_FIELD(key, expr, type)                                                      \
  m[key] = num([](const Config& c) { return fmt_double(static_cast<double>(c.expr)); }, \
               [](Config& c, const std::string& r) { c.expr = parse_number<type>(key, r); })
#define INT_FIELD(key, expr)                                                   \
  m[key] = num([](const Config& c) { return std::to_string(c.expr); },         \
               [](Config& c, const std::string& r) { c.expr = parse_number<int>(key, r); })
#define U64_FIELD(key, expr)                                                   \
  m[key] = num([](const Config& c) { return std::to_string(c.expr); },         \
               [](Config& c, const std::string& r) { c.expr = parse_number<std::uint64_t>(key, r); })
#define BOOL_FIELD(key, expr)                                                   \
  m[key] = num([](const Config& c) { return c.expr ? std::string("true") : std::string("false"); }, \
               [](Config& c, const std::string& r) { c.expr = parse_bool(key, r); })

    INT_FIELD("sim.scenes", sim_scenes);
    U64_FIELD("sim.seed", sim_seed);
    INT_FIELD("sim.width", scene.width);
    INT_FIELD("sim.height", scene.height);
    INT_FIELD("sim.frames", scene.frames);
    INT_FIELD("sim.rects", scene.rect_count);
    NUM_FIELD("sim.depth_min", scene.depth_min, double);
    NUM_FIELD("sim.depth_max", scene.depth_max, double);
    NUM_FIELD("sim.background_depth", scene.background_depth, double);
    NUM_FIELD("sim.traj_amplitude", scene.traj_amplitude, double);
    NUM_FIELD("sim.rot_amplitude_deg", scene.rot_amplitude_deg, double);
    NUM_FIELD("sim.fov_deg", scene.fov_deg, double);
    INT_FIELD("sim.zone_rows", scene.zone_rows);
    INT_FIELD("sim.zone_cols", scene.zone_cols);
    BOOL_FIELD("sim.zone_align", scene.zone_align);
    BOOL_FIELD("sim.depth_snap", scene.depth_snap);

    INT_FIELD("data.stride", data_stride);
    m["data.offsets"] = num(
        [](const Config& c) {
          std::string out;
          for (std::size_t i = 0; i < c.data_offsets.size(); ++i)
            out += (i ? "," : "") + std::to_string(c.data_offsets[i]);
          return out;
        },
        [](Config& c, const std::string& r) { c.data_offsets = parse_int_list("data.offsets", r); });

    m["model.fusion"] = Field{
        [](const Config& c) {
          return c.model.fusion_mode == models::FusionMode::kAddition ? std::string("addition")
                                                                      : std::string("guided");
        },
        [](Config& c, const std::string& r) {
          if (r == "addition")
            c.model.fusion_mode = models::FusionMode::kAddition;
          else if (r == "guided")
            c.model.fusion_mode = models::FusionMode::kGuided;
          else
            throw ConfigError("config key 'model.fusion': expected addition|guided, got '" + r + "'");
        }};
    m["model.depth_encoder"] = Field{
        [](const Config& c) {
          return c.model.depth_encoder_mode == models::DepthEncoderMode::kDense
                     ? std::string("dense")
                     : std::string("submanifold");
        },
        [](Config& c, const std::string& r) {
          if (r == "dense")
            c.model.depth_encoder_mode = models::DepthEncoderMode::kDense;
          else if (r == "submanifold")
            c.model.depth_encoder_mode = models::DepthEncoderMode::kSubmanifold;
          else
            throw ConfigError("config key 'model.depth_encoder': expected dense|submanifold, got '" +
                              r + "'");
        }};
    BOOL_FIELD("model.use_tof_depthnet", model.use_tof_depthnet);
    BOOL_FIELD("model.use_tof_posenet", model.use_tof_posenet);
    BOOL_FIELD("model.normalize_affinity", model.normalize_affinity);
    NUM_FIELD("model.min_depth", model.min_depth, double);
    NUM_FIELD("model.max_depth", model.max_depth, double);
    NUM_FIELD("model.pose_scale", model.pose_scale, double);
    INT_FIELD("model.zone_rows", model.zone_rows);
    INT_FIELD("model.zone_cols", model.zone_cols);

    NUM_FIELD("loss.w_ph", weights.w_ph, double);
    NUM_FIELD("loss.w_s", weights.w_s, double);
    NUM_FIELD("loss.w_dc", weights.w_dc, double);
    NUM_FIELD("loss.alpha", weights.alpha, double);
    m["loss.photometric_reduce"] = Field{
        [](const Config& c) {
          return c.photometric_reduce == losses::PhotometricReduce::kMin ? std::string("min")
                                                                         : std::string("average");
        },
        [](Config& c, const std::string& r) {
          if (r == "min")
            c.photometric_reduce = losses::PhotometricReduce::kMin;
          else if (r == "average")
            c.photometric_reduce = losses::PhotometricReduce::kAverage;
          else
            throw ConfigError("config key 'loss.photometric_reduce': expected min|average, got '" +
                              r + "'");
        }};
    m["loss.dc_reduce"] = Field{
        [](const Config& c) {
          return c.dc_reduce == losses::DcReduce::kSum ? std::string("sum") : std::string("mean");
        },
        [](Config& c, const std::string& r) {
          if (r == "sum")
            c.dc_reduce = losses::DcReduce::kSum;
          else if (r == "mean")
            c.dc_reduce = losses::DcReduce::kMean;
          else
            throw ConfigError("config key 'loss.dc_reduce': expected sum|mean, got '" + r + "'");
        }};

    m["scale.mode"] = Field{
        [](const Config& c) {
          switch (c.scale_mode) {
            case ScaleMode::kNone: return std::string("none");
            case ScaleMode::kMS: return std::string("ms");
            default: return std::string("mms");
          }
        },
        [](Config& c, const std::string& r) {
          if (r == "none")
            c.scale_mode = ScaleMode::kNone;
          else if (r == "ms")
            c.scale_mode = ScaleMode::kMS;
          else if (r == "mms")
            c.scale_mode = ScaleMode::kMMS;
          else
            throw ConfigError("config key 'scale.mode': expected none|ms|mms, got '" + r + "'");
        }};
    BOOL_FIELD("scale.in_graph", scale_in_graph);

    U64_FIELD("train.seed", train_seed);
    INT_FIELD("train.batch", batch);
    INT_FIELD("train.epochs", epochs);
    NUM_FIELD("train.lr_initial", lr_initial, double);
    NUM_FIELD("train.lr_final", lr_final, double);
    INT_FIELD("train.lr_drop_epoch", lr_drop_epoch);
    NUM_FIELD("train.adam_beta1", adam_beta1, double);
    NUM_FIELD("train.adam_beta2", adam_beta2, double);
    NUM_FIELD("train.adam_eps", adam_eps, double);
    NUM_FIELD("train.grad_clip", grad_clip, double);
    NUM_FIELD("train.sparsity_aug", sparsity_aug, double);
    INT_FIELD("train.checkpoint_every", checkpoint_every);
    INT_FIELD("train.max_triplets", max_triplets);

    NUM_FIELD("eval.cap", eval_cap, double);
    m["eval.protocol"] = Field{
        [](const Config& c) {
          return c.eval_protocol == Protocol::kScaleAware ? std::string("scale_aware")
                                                          : std::string("median_scaled");
        },
        [](Config& c, const std::string& r) {
          if (r == "scale_aware")
            c.eval_protocol = Protocol::kScaleAware;
          else if (r == "median_scaled")
            c.eval_protocol = Protocol::kMedianScaled;
          else
            throw ConfigError("config key 'eval.protocol': expected scale_aware|median_scaled, got '" +
                              r + "'");
        }};
    NUM_FIELD("eval.sr", eval_sr, double);
    U64_FIELD("eval.seed", eval_seed);

#undef NUM_FIELD
#undef INT_FIELD
#undef U64_FIELD
#undef BOOL_FIELD
    return m;
  }();
  return s;
}

}  // namespace

Config Config::desk_profile() { return Config{}; }

Config Config::paper_profile() {
  Config c;
  c.scene.width = 256;
  c.scene.height = 256;
  c.data_stride = 5;
  c.data_offsets = {-10, 10};
  c.batch = 8;
  c.epochs = 40;
  c.lr_drop_epoch = 30;
  return c;
}

Config Config::profile(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw ConfigError("unknown profile '" + name + "' (expected desk|paper)");
}

std::string Config::serialize() const {
  std::string out;
  for (const auto& [key, field] : schema()) out += key + " = " + field.get(*this) + "\n";
  return out;
}

Config Config::parse(const std::string& text) {
  Config c;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = schema().find(key);
    if (it == schema().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second.set(c, value);
  }
  c.validate();
  return c;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void Config::validate() const {
  scene.check();
  model.check();
  if (!(weights.w_ph >= 0.0 && weights.w_s >= 0.0 && weights.w_dc >= 0.0))
    throw ConfigError("config: loss weights must be non-negative");
  if (!(weights.alpha >= 0.0 && weights.alpha <= 1.0))
    throw ConfigError("config key 'loss.alpha': must lie in [0,1]");
  if (batch <= 0) throw ConfigError("config key 'train.batch': must be positive");
  if (epochs <= 0) throw ConfigError("config key 'train.epochs': must be positive");
  if (data_stride <= 0) throw ConfigError("config key 'data.stride': must be positive");
  if (!(sparsity_aug >= 0.0 && sparsity_aug <= 1.0))
    throw ConfigError("config key 'train.sparsity_aug': must lie in [0,1]");
  if (!(eval_sr >= 0.0 && eval_sr <= 1.0))
    throw ConfigError("config key 'eval.sr': must lie in [0,1]");
  if (!(eval_cap > 0.0)) throw ConfigError("config key 'eval.cap': must be positive");
  if (model.zone_rows != scene.zone_rows || model.zone_cols != scene.zone_cols)
    throw ConfigError("config: model zone grid must match sim zone grid");
}

}  // namespace selftof::config
