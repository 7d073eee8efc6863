// License: Apache 2.0. See LICENSE file in root directory.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "selftof/config.hpp"
#include "selftof/data.hpp"
#include "selftof/eval.hpp"
#include "selftof/scale.hpp"
#include "selftof/train.hpp"

namespace fs = std::filesystem;
using namespace selftof;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

config::Config resolve_config(const std::string& profile, const std::string& config_path) {
  config::Config cfg = config::Config::profile(profile);
  if (!config_path.empty()) {
    // overlay the file on profile defaults: parse against the profile base
    std::ifstream f(config_path);
    if (!f) throw config::ConfigError("cannot open config file: " + config_path);
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = config::Config::parse(cfg.serialize() + ss.str());
  }
  return cfg;
}

void echo_config(const config::Config& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir + "/config.txt");
  f << cfg.serialize();
}

int cmd_simulate(const config::Config& cfg, const std::string& out_dir) {
  echo_config(cfg, out_dir);
  std::ofstream split(out_dir + "/split_all.txt");
  std::ofstream manifest(out_dir + "/manifest.txt");
  manifest << "selftof fixture v1\nscenes " << cfg.sim_scenes << "\n";
  for (int i = 0; i < cfg.sim_scenes; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%03d", i);
    data::Sequence seq = data::generate_synthetic_scene(cfg.sim_seed + static_cast<std::uint64_t>(i),
                                                        cfg.scene);
    seq.name = name;
    data::write_scene_dir(seq, out_dir + "/" + name);
    split << name << "\n";
    manifest << name << " frames " << seq.frames.size() << "\n";
  }
  std::cout << "wrote " << cfg.sim_scenes << " scenes to " << out_dir << "\n";
  return 0;
}

std::vector<data::FrameTriplet> load_triplets(const config::Config& cfg, const std::string& data_dir) {
  const std::string split = data_dir + "/split_all.txt";
  auto sequences = data::load_fixture(data_dir, split);
  std::vector<data::FrameTriplet> triplets;
  for (const auto& seq : sequences) {
    auto t = data::sample_triplets(seq, cfg.data_stride, cfg.data_offsets);
    triplets.insert(triplets.end(), t.begin(), t.end());
  }
  if (cfg.max_triplets > 0 && static_cast<int>(triplets.size()) > cfg.max_triplets)
    triplets.resize(static_cast<std::size_t>(cfg.max_triplets));
  return triplets;
}

int cmd_train(const config::Config& cfg, const std::string& data_dir, const std::string& out_dir,
              bool resume) {
  auto triplets = load_triplets(cfg, data_dir);
  if (triplets.empty()) throw std::runtime_error("no triplets available under " + data_dir);
  train::Trainer trainer(cfg);
  auto ckpts = trainer.fit(triplets, out_dir, resume);
  std::cout << "trained " << trainer.step_count() << " steps; checkpoints: " << ckpts.size()
            << "; last: " << (ckpts.empty() ? "-" : ckpts.back()) << "\n";
  return 0;
}

int cmd_eval(const config::Config& cfg, const std::string& checkpoint, const std::string& data_dir,
             const std::string& out_dir, const std::string& baseline, bool dump) {
  echo_config(cfg, out_dir);
  auto triplets = load_triplets(cfg, data_dir);
  auto samples = eval::samples_from_triplets(triplets);
  if (samples.empty()) throw std::runtime_error("no evaluation samples under " + data_dir);

  eval::EvalOptions opts;
  opts.protocol = cfg.eval_protocol;
  opts.cap = cfg.eval_cap;
  opts.sparsity_ratio = cfg.eval_sr;
  opts.seed = cfg.eval_seed;
  opts.per_sample_csv = out_dir + "/per_sample.csv";
  if (dump) opts.dump_dir = out_dir + "/dumps";

  eval::MetricsReport report;
  if (baseline == "nn")
    report = eval::evaluate_baseline(eval::BaselineKind::kNearest, samples, opts);
  else if (baseline == "gf")
    report = eval::evaluate_baseline(eval::BaselineKind::kGuidedFilter, samples, opts);
  else
    report = eval::evaluate_checkpoint(checkpoint, samples, opts);

  std::ofstream csv(out_dir + "/metrics.csv");
  csv << eval::MetricsReport::csv_header() << "\n" << report.csv_row() << "\n";

  std::printf("samples: %d\n", report.sample_count);
  std::printf("%-9s %-9s %-9s %-9s %-9s %-7s %-7s %-7s\n", "abs_rel", "sq_rel", "rmse", "rmse_log",
              "log10", "a1", "a2", "a3");
  std::printf("%-9.4f %-9.4f %-9.4f %-9.4f %-9.4f %-7.4f %-7.4f %-7.4f\n", report.abs_rel,
              report.sq_rel, report.rmse, report.rmse_log, report.log10, report.a1, report.a2,
              report.a3);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selftof: self-supervised ToF depth enhancement laboratory"};
  app.require_subcommand(1);

  std::string profile = "desk", config_path, data_dir, out_dir, checkpoint, baseline = "none";
  bool resume = false, dump = false;
  double sr = -1.0;
  std::string protocol;
  std::int64_t seed = -1;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic scene fixture");
  sim->add_option("--profile", profile, "desk|paper");
  sim->add_option("--config", config_path, "config file overriding profile defaults");
  sim->add_option("--out", out_dir, "output fixture directory")->required();

  auto* tr = app.add_subcommand("train", "train on a fixture directory");
  tr->add_option("--profile", profile, "desk|paper");
  tr->add_option("--config", config_path, "config file overriding profile defaults");
  tr->add_option("--data", data_dir, "fixture directory")->required();
  tr->add_option("--out", out_dir, "run directory")->required();
  tr->add_flag("--resume", resume, "continue from the last checkpoint in --out");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint or baseline");
  ev->add_option("--profile", profile, "desk|paper");
  ev->add_option("--config", config_path, "config file overriding profile defaults");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file (unused with --baseline)");
  ev->add_option("--data", data_dir, "fixture directory")->required();
  ev->add_option("--out", out_dir, "output directory")->required();
  ev->add_option("--sr", sr, "zone sparsity ratio injected before inference");
  ev->add_option("--protocol", protocol, "scale_aware|median_scaled");
  ev->add_option("--seed", seed, "sparsity seed");
  ev->add_option("--baseline", baseline, "nn|gf|none")->check(CLI::IsMember({"nn", "gf", "none"}));
  ev->add_flag("--dump", dump, "write prediction and error maps");

  CLI11_PARSE(app, argc, argv);

  try {
    config::Config cfg = resolve_config(profile, config_path);
    if (sr >= 0.0) cfg.eval_sr = sr;
    if (seed >= 0) cfg.eval_seed = static_cast<std::uint64_t>(seed);
    if (!protocol.empty()) {
      if (protocol == "scale_aware")
        cfg.eval_protocol = config::Protocol::kScaleAware;
      else if (protocol == "median_scaled")
        cfg.eval_protocol = config::Protocol::kMedianScaled;
      else
        throw config::ConfigError("--protocol: expected scale_aware|median_scaled");
    }
    cfg.validate();

    if (sim->parsed()) return cmd_simulate(cfg, out_dir);
    if (tr->parsed()) return cmd_train(cfg, data_dir, out_dir, resume);
    if (ev->parsed()) {
      if (baseline == "none" && checkpoint.empty())
        throw config::ConfigError("eval: --checkpoint required unless --baseline is given");
      return cmd_eval(cfg, checkpoint, data_dir, out_dir, baseline, dump);
    }
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const scale::NoScaleAvailable& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::runtime_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
