// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/eval.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "selftof/models.hpp"
#include "selftof/rng.hpp"
#include "selftof/scale.hpp"
#include "selftof/train.hpp"

namespace fs = std::filesystem;

namespace selftof::eval {

void MetricsReport::check_invariants() const {
  if (!(a1 <= a2 + 1e-12 && a2 <= a3 + 1e-12)) throw std::logic_error("MetricsReport: a1<=a2<=a3 violated");
  if (abs_rel < 0 || sq_rel < 0 || rmse < 0 || rmse_log < 0 || log10 < 0)
    throw std::logic_error("MetricsReport: negative error metric");
}

std::string MetricsReport::csv_header() { return "abs_rel,sq_rel,rmse,rmse_log,log10,a1,a2,a3"; }

std::string MetricsReport::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", abs_rel, sq_rel, rmse,
                rmse_log, log10, a1, a2, a3);
  return buf;
}

MetricsReport depth_metrics(const Tensor& pred, const Tensor& gt, double cap) {
  if (!pred.same_shape(gt)) throw std::invalid_argument("depth_metrics: shape mismatch");
  double abs_rel = 0, sq_rel = 0, mse = 0, mse_log = 0, l10 = 0;
  int a1 = 0, a2 = 0, a3 = 0, n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double g = gt[i], p = pred[i];
    if (!(std::isfinite(g) && g > 0.0 && g <= cap)) continue;
    if (!(std::isfinite(p) && p > 0.0)) continue;
    const double d = p - g;
    abs_rel += std::fabs(d) / g;
    sq_rel += d * d / g;
    mse += d * d;
    const double dl = std::log(p) - std::log(g);
    mse_log += dl * dl;
    l10 += std::fabs(std::log10(p) - std::log10(g));
    const double ratio = std::max(p / g, g / p);
    a1 += ratio < 1.25;
    a2 += ratio < 1.25 * 1.25;
    a3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("depth_metrics: empty valid overlap");
  MetricsReport r;
  r.abs_rel = abs_rel / n;
  r.sq_rel = sq_rel / n;
  r.rmse = std::sqrt(mse / n);
  r.rmse_log = std::sqrt(mse_log / n);
  r.log10 = l10 / n;
  r.a1 = static_cast<double>(a1) / n;
  r.a2 = static_cast<double>(a2) / n;
  r.a3 = static_cast<double>(a3) / n;
  r.sample_count = 1;
  return r;
}

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("average_reports: empty input");
  MetricsReport avg;
  double rot = 0, tr = 0;
  int rot_n = 0, tr_n = 0;
  for (const auto& r : reports) {
    avg.abs_rel += r.abs_rel;
    avg.sq_rel += r.sq_rel;
    avg.rmse += r.rmse;
    avg.rmse_log += r.rmse_log;
    avg.log10 += r.log10;
    avg.a1 += r.a1;
    avg.a2 += r.a2;
    avg.a3 += r.a3;
    avg.sample_count += r.sample_count;
    if (r.rot_deg) {
      rot += *r.rot_deg;
      ++rot_n;
    }
    if (r.tr_deg) {
      tr += *r.tr_deg;
      ++tr_n;
    }
  }
  const double inv = 1.0 / static_cast<double>(reports.size());
  avg.abs_rel *= inv;
  avg.sq_rel *= inv;
  avg.rmse *= inv;
  avg.rmse_log *= inv;
  avg.log10 *= inv;
  avg.a1 *= inv;
  avg.a2 *= inv;
  avg.a3 *= inv;
  if (rot_n) avg.rot_deg = rot / rot_n;
  if (tr_n) avg.tr_deg = tr / tr_n;
  return avg;
}

std::pair<double, std::optional<double>> pose_metrics(const geom::RigidTransform& pred,
                                                      const geom::RigidTransform& gt) {
  const double rot =
      geom::rotation_geodesic_deg(pred.rotation_matrix(), gt.rotation_matrix());
  const auto& tp = pred.translation;
  const auto& tg = gt.translation;
  const double np = std::sqrt(tp[0] * tp[0] + tp[1] * tp[1] + tp[2] * tp[2]);
  const double ng = std::sqrt(tg[0] * tg[0] + tg[1] * tg[1] + tg[2] * tg[2]);
  if (ng == 0.0) return {rot, std::nullopt};
  const double denom = np > 0.0 ? np * ng : 1.0;
  double c = (tp[0] * tg[0] + tp[1] * tg[1] + tp[2] * tg[2]) / denom;
  if (np == 0.0) c = 0.0;  // undefined direction: report 90 degrees
  c = std::min(1.0, std::max(-1.0, c));
  return {rot, std::acos(c) * 180.0 / 3.14159265358979323846};
}

Tensor baseline_nn(const tofsim::ZoneGrid& grid, int height, int width) {
  if (grid.valid_count() == 0) throw std::invalid_argument("baseline_nn: all zones invalid");
  const auto fov = tofsim::zone_footprints(height, width, grid.rows, grid.cols);
  // nearest valid zone per zone (ties to the smaller zone index)
  std::vector<int> source(static_cast<std::size_t>(grid.zone_count()));
  for (int z = 0; z < grid.zone_count(); ++z) {
    if (grid.valid[static_cast<std::size_t>(z)]) {
      source[static_cast<std::size_t>(z)] = z;
      continue;
    }
    double best = 1e300;
    int best_z = -1;
    for (int w = 0; w < grid.zone_count(); ++w) {
      if (!grid.valid[static_cast<std::size_t>(w)]) continue;
      const double dy = fov[static_cast<std::size_t>(w)].center_y() - fov[static_cast<std::size_t>(z)].center_y();
      const double dx = fov[static_cast<std::size_t>(w)].center_x() - fov[static_cast<std::size_t>(z)].center_x();
      const double d = dy * dy + dx * dx;
      if (d < best) {
        best = d;
        best_z = w;
      }
    }
    source[static_cast<std::size_t>(z)] = best_z;
  }
  Tensor out({height, width});
  for (int z = 0; z < grid.zone_count(); ++z) {
    const auto& r = fov[static_cast<std::size_t>(z)];
    const double v = grid.mean[static_cast<std::size_t>(source[static_cast<std::size_t>(z)])];
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) out.at(y, x) = v;
  }
  return out;
}

namespace {

// count-normalised box mean over a (2r+1)^2 window clipped to the image
Tensor box_mean(const Tensor& x, int radius) {
  const int H = x.dim(0), W = x.dim(1);
  // integral image with one row/col of zero padding
  std::vector<double> integral(static_cast<std::size_t>(H + 1) * (W + 1), 0.0);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      integral[static_cast<std::size_t>(i + 1) * (W + 1) + j + 1] =
          x.at(i, j) + integral[static_cast<std::size_t>(i) * (W + 1) + j + 1] +
          integral[static_cast<std::size_t>(i + 1) * (W + 1) + j] -
          integral[static_cast<std::size_t>(i) * (W + 1) + j];
  Tensor out({H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      const int y0 = std::max(0, i - radius), y1 = std::min(H - 1, i + radius);
      const int x0 = std::max(0, j - radius), x1 = std::min(W - 1, j + radius);
      const double s = integral[static_cast<std::size_t>(y1 + 1) * (W + 1) + x1 + 1] -
                       integral[static_cast<std::size_t>(y0) * (W + 1) + x1 + 1] -
                       integral[static_cast<std::size_t>(y1 + 1) * (W + 1) + x0] +
                       integral[static_cast<std::size_t>(y0) * (W + 1) + x0];
      out.at(i, j) = s / ((y1 - y0 + 1) * (x1 - x0 + 1));
    }
  return out;
}

}  // namespace

Tensor baseline_guided_filter(const Tensor& depth, const Tensor& guide_rgb, int radius,
                              double eps) {
  if (depth.ndim() != 2 || guide_rgb.ndim() != 3 || guide_rgb.dim(0) != 3 ||
      guide_rgb.dim(1) != depth.dim(0) || guide_rgb.dim(2) != depth.dim(1))
    throw std::invalid_argument("baseline_guided_filter: shape mismatch");
  const int H = depth.dim(0), W = depth.dim(1);

  std::array<Tensor, 3> I;
  for (int c = 0; c < 3; ++c) {
    I[static_cast<std::size_t>(c)] = Tensor({H, W});
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) I[static_cast<std::size_t>(c)].at(i, j) = guide_rgb.at(c, i, j);
  }

  std::array<Tensor, 3> mean_I;
  for (int c = 0; c < 3; ++c) mean_I[static_cast<std::size_t>(c)] = box_mean(I[static_cast<std::size_t>(c)], radius);
  Tensor mean_p = box_mean(depth, radius);

  // covariances of the guide (6 unique terms) and guide-depth covariance
  Tensor var[3][3], cov_Ip[3];
  for (int a = 0; a < 3; ++a) {
    for (int b = a; b < 3; ++b) {
      Tensor prod({H, W});
      for (std::size_t i = 0; i < prod.size(); ++i)
        prod[i] = I[static_cast<std::size_t>(a)][i] * I[static_cast<std::size_t>(b)][i];
      Tensor m = box_mean(prod, radius);
      var[a][b] = Tensor({H, W});
      for (std::size_t i = 0; i < m.size(); ++i)
        var[a][b][i] = m[i] - mean_I[static_cast<std::size_t>(a)][i] * mean_I[static_cast<std::size_t>(b)][i];
    }
    Tensor prod({H, W});
    for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = I[static_cast<std::size_t>(a)][i] * depth[i];
    Tensor m = box_mean(prod, radius);
    cov_Ip[a] = Tensor({H, W});
    for (std::size_t i = 0; i < m.size(); ++i)
      cov_Ip[a][i] = m[i] - mean_I[static_cast<std::size_t>(a)][i] * mean_p[i];
  }

  std::array<Tensor, 3> A;
  for (int c = 0; c < 3; ++c) A[static_cast<std::size_t>(c)] = Tensor({H, W});
  Tensor B({H, W});
  for (std::size_t i = 0; i < B.size(); ++i) {
    Eigen::Matrix3d S;
    S << var[0][0][i] + eps, var[0][1][i], var[0][2][i],
         var[0][1][i], var[1][1][i] + eps, var[1][2][i],
         var[0][2][i], var[1][2][i], var[2][2][i] + eps;
    const Eigen::Vector3d rhs(cov_Ip[0][i], cov_Ip[1][i], cov_Ip[2][i]);
    const Eigen::Vector3d a = S.ldlt().solve(rhs);
    for (int c = 0; c < 3; ++c) A[static_cast<std::size_t>(c)][i] = a[c];
    B[i] = mean_p[i] - a[0] * mean_I[0][i] - a[1] * mean_I[1][i] - a[2] * mean_I[2][i];
  }

  std::array<Tensor, 3> mean_A;
  for (int c = 0; c < 3; ++c) mean_A[static_cast<std::size_t>(c)] = box_mean(A[static_cast<std::size_t>(c)], radius);
  Tensor mean_B = box_mean(B, radius);
  Tensor out({H, W});
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = mean_A[0][i] * I[0][i] + mean_A[1][i] * I[1][i] + mean_A[2][i] * I[2][i] + mean_B[i];
  return out;
}

// ---------------------------------------------------------------- harness

std::vector<EvalSample> samples_from_sequences(const std::vector<data::Sequence>& seqs) {
  std::vector<EvalSample> out;
  for (const auto& seq : seqs)
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
      const auto& fr = seq.frames[i];
      if (!fr.depth.defined() || !fr.has_zones) continue;
      out.push_back({fr.rgb, fr.zones, fr.depth, seq.name + "#" + std::to_string(i)});
    }
  return out;
}

std::vector<EvalSample> samples_from_triplets(const std::vector<data::FrameTriplet>& triplets) {
  std::vector<EvalSample> out;
  for (const auto& t : triplets) {
    if (!t.gt_depth.defined()) continue;
    out.push_back({t.target_rgb, t.target_zones, t.gt_depth,
                   t.scene + "#" + std::to_string(t.target_index)});
  }
  return out;
}

namespace {

struct SampleEval {
  MetricsReport report;
  double scale = 1.0;
  Tensor pred;
};

void dump_maps(const std::string& dir, const std::string& tag, const Tensor& pred,
               const Tensor& gt) {
  fs::create_directories(dir);
  std::string safe = tag;
  for (auto& ch : safe)
    if (ch == '/' || ch == '#') ch = '_';
  data::save_pfm(pred, dir + "/" + safe + "_pred.pfm");
  Tensor err(pred.shape());
  for (std::size_t i = 0; i < err.size(); ++i)
    err[i] = (std::isfinite(gt[i]) && gt[i] > 0.0) ? std::fabs(pred[i] - gt[i]) : 0.0;
  data::save_pfm(err, dir + "/" + safe + "_error.pfm");
}

MetricsReport run_harness(const std::vector<EvalSample>& samples, const EvalOptions& opts,
                          const std::function<SampleEval(const EvalSample&, const tofsim::ZoneGrid&)>& model) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  std::ofstream csv;
  if (!opts.per_sample_csv.empty()) {
    csv.open(opts.per_sample_csv);
    csv << "sample," << MetricsReport::csv_header() << ",scale\n";
  }
  std::vector<MetricsReport> reports;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const EvalSample& s = samples[i];
    const tofsim::ZoneGrid zones =
        opts.sparsity_ratio > 0.0
            ? tofsim::inject_sparsity(s.zones, opts.sparsity_ratio, opts.seed + i)
            : s.zones;
    SampleEval ev = model(s, zones);
    reports.push_back(ev.report);
    if (csv.is_open()) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), ",%.9g", ev.scale);
      csv << s.tag << "," << ev.report.csv_row() << buf << "\n";
    }
    if (!opts.dump_dir.empty()) dump_maps(opts.dump_dir, s.tag, ev.pred, s.gt_depth);
  }
  MetricsReport avg = average_reports(reports);
  avg.check_invariants();
  return avg;
}

}  // namespace

MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const std::vector<EvalSample>& samples,
                                  const EvalOptions& opts) {
  train::LoadedCheckpoint ck = train::load_checkpoint(checkpoint_path);
  // testing needs DepthNet only: its parameters are the only ones bound
  models::ParamStore store;
  Rng rng(ck.cfg.train_seed);
  models::DepthNet net(store, rng, ck.cfg.model);
  train::apply_checkpoint(ck, store, /*require_all=*/true, /*with_moments=*/false);

  const bool scale_aware = ck.cfg.scale_mode != config::ScaleMode::kNone;
  if (scale_aware && opts.protocol == config::Protocol::kMedianScaled)
    std::fprintf(stderr,
                 "warning: median-scaled protocol applied to a scale-aware checkpoint\n");

  auto model = [&](const EvalSample& s, const tofsim::ZoneGrid& zones) {
    models::LeafSet L(&store, /*requires_grad=*/false);
    Tensor map = tofsim::zones_to_lowres_map(zones);
    models::DepthNetOutput out = net.forward(L, s.rgb, map, zones.valid);
    Tensor pred = out.depth.val();
    SampleEval ev;
    if (scale_aware) {
      try {
        scale::ScaledDepth sd = ck.cfg.scale_mode == config::ScaleMode::kMS
                                    ? scale::median_scaling_ms(pred, zones)
                                    : scale::median_of_median_scaling_mms(pred, zones);
        pred = sd.depth;
        ev.scale = sd.scale;
      } catch (const scale::NoScaleAvailable&) {
        // fall back to the raw prediction with unit scale
      }
    }
    if (opts.protocol == config::Protocol::kMedianScaled)
      pred = scale::eval_median_scaling(pred, s.gt_depth);
    ev.pred = pred;
    ev.report = depth_metrics(pred, s.gt_depth, opts.cap);
    return ev;
  };
  return run_harness(samples, opts, model);
}

MetricsReport evaluate_baseline(BaselineKind kind, const std::vector<EvalSample>& samples,
                                const EvalOptions& opts) {
  auto model = [&](const EvalSample& s, const tofsim::ZoneGrid& zones) {
    const int H = s.rgb.dim(1), W = s.rgb.dim(2);
    Tensor pred = baseline_nn(zones, H, W);
    if (kind == BaselineKind::kGuidedFilter) pred = baseline_guided_filter(pred, s.rgb);
    SampleEval ev;
    if (opts.protocol == config::Protocol::kMedianScaled)
      pred = scale::eval_median_scaling(pred, s.gt_depth);
    ev.pred = pred;
    ev.report = depth_metrics(pred, s.gt_depth, opts.cap);
    return ev;
  };
  return run_harness(samples, opts, model);
}

}  // namespace selftof::eval
