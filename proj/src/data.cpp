// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "selftof/rng.hpp"

namespace fs = std::filesystem;

namespace selftof::data {

// ---------------------------------------------------------------- image io

void save_ppm(const Tensor& rgb, const std::string& path) {
  if (rgb.ndim() != 3 || rgb.dim(0) != 3) throw std::invalid_argument("save_ppm: expects [3,H,W]");
  const int H = rgb.dim(1), W = rgb.dim(2);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P6\n" << W << " " << H << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(W) * 3);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j)
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(1.0, std::max(0.0, rgb.at(c, i, j)));
        row[static_cast<std::size_t>(j) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

namespace {

void read_pnm_header(std::ifstream& f, const std::string& magic, const std::string& path, int& w,
                     int& h, int& maxval) {
  std::string m;
  f >> m;
  if (m != magic) throw std::runtime_error("bad magic in " + path);
  auto next_token = [&]() {
    std::string t;
    for (;;) {
      if (!(f >> t)) throw std::runtime_error("truncated header in " + path);
      if (t[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return t;
    }
  };
  w = std::stoi(next_token());
  h = std::stoi(next_token());
  maxval = std::stoi(next_token());
  f.get();  // single whitespace after maxval
}

}  // namespace

Tensor load_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open image: " + path);
  int w, h, maxval;
  read_pnm_header(f, "P6", path, w, h, maxval);
  if (maxval != 255) throw std::runtime_error("unsupported maxval in " + path);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("truncated image data in " + path);
  Tensor rgb({3, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)
        rgb.at(c, i, j) = buf[(static_cast<std::size_t>(i) * w + j) * 3 + c] / 255.0;
  return rgb;
}

void save_pfm(const Tensor& gray, const std::string& path) {
  if (gray.ndim() != 2) throw std::invalid_argument("save_pfm: expects [H,W]");
  const int H = gray.dim(0), W = gray.dim(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "Pf\n" << W << " " << H << "\n-1.0\n";  // negative scale: little-endian
  std::vector<float> row(static_cast<std::size_t>(W));
  for (int i = H - 1; i >= 0; --i) {  // bottom-up rows
    for (int j = 0; j < W; ++j) row[static_cast<std::size_t>(j)] = static_cast<float>(gray.at(i, j));
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(W) * 4);
  }
}

Tensor load_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open depth map: " + path);
  std::string magic;
  f >> magic;
  if (magic != "Pf") throw std::runtime_error("bad magic in " + path);
  int w, h;
  double scale;
  f >> w >> h >> scale;
  f.get();
  if (scale >= 0.0) throw std::runtime_error("big-endian PFM unsupported: " + path);
  Tensor out({h, w});
  std::vector<float> row(static_cast<std::size_t>(w));
  for (int i = h - 1; i >= 0; --i) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w) * 4);
    if (!f) throw std::runtime_error("truncated depth data in " + path);
    for (int j = 0; j < w; ++j) out.at(i, j) = row[static_cast<std::size_t>(j)];
  }
  return out;
}

void save_pgm16(const Tensor& depth_m, const std::string& path) {
  if (depth_m.ndim() != 2) throw std::invalid_argument("save_pgm16: expects [H,W]");
  const int H = depth_m.dim(0), W = depth_m.dim(1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << "P5\n" << W << " " << H << "\n65535\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(W) * 2);
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      const double d = depth_m.at(i, j);
      const long mm = std::isfinite(d) && d > 0.0 ? std::lround(d * 1000.0) : 0;
      const unsigned v = static_cast<unsigned>(std::min(65535L, std::max(0L, mm)));
      row[static_cast<std::size_t>(j) * 2] = static_cast<unsigned char>(v >> 8);  // big-endian per PGM
      row[static_cast<std::size_t>(j) * 2 + 1] = static_cast<unsigned char>(v & 0xff);
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

Tensor load_pgm16(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open depth map: " + path);
  int w, h, maxval;
  read_pnm_header(f, "P5", path, w, h, maxval);
  if (maxval != 65535) throw std::runtime_error("expected 16-bit PGM: " + path);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 2);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("truncated depth data in " + path);
  Tensor out({h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const std::size_t p = (static_cast<std::size_t>(i) * w + j) * 2;
      const unsigned v = (static_cast<unsigned>(buf[p]) << 8) | buf[p + 1];
      out.at(i, j) = v / 1000.0;  // millimeter integers -> meters
    }
  return out;
}

// ---------------------------------------------------------------- triplets

std::vector<TripletIndices> plan_triplets(int frame_count, int stride,
                                          const std::vector<int>& offsets) {
  if (stride <= 0) throw std::invalid_argument("plan_triplets: stride must be positive");
  if (offsets.empty()) throw std::invalid_argument("plan_triplets: needs >= 1 source offset");
  std::vector<TripletIndices> out;
  for (int t = 0; t < frame_count; t += stride) {
    TripletIndices ti;
    ti.target = t;
    bool ok = true;
    for (int off : offsets) {
      const int s = t + off;
      if (s < 0 || s >= frame_count) {
        ok = false;
        break;
      }
      ti.sources.push_back(s);
    }
    if (ok) out.push_back(std::move(ti));
  }
  return out;
}

std::vector<FrameTriplet> sample_triplets(const Sequence& seq, int stride,
                                          const std::vector<int>& offsets) {
  std::vector<FrameTriplet> out;
  for (const auto& plan : plan_triplets(static_cast<int>(seq.frames.size()), stride, offsets)) {
    const Frame& tgt = seq.frames[static_cast<std::size_t>(plan.target)];
    FrameTriplet tr;
    tr.scene = seq.name;
    tr.target_index = plan.target;
    tr.intrinsics = seq.intrinsics;
    tr.target_rgb = tgt.rgb;
    if (!tgt.has_zones) throw std::runtime_error("sample_triplets: frame lacks a zone grid");
    tr.target_zones = tgt.zones;
    tr.gt_depth = tgt.depth;
    bool have_poses = tgt.has_pose;
    for (int s : plan.sources) {
      const Frame& src = seq.frames[static_cast<std::size_t>(s)];
      tr.source_rgbs.push_back(src.rgb);
      tr.source_zones.push_back(src.zones);
      have_poses = have_poses && src.has_pose;
    }
    if (have_poses) {
      for (int s : plan.sources) {
        const Frame& src = seq.frames[static_cast<std::size_t>(s)];
        tr.gt_poses.push_back(geom::compose(src.pose, tgt.pose.inverse()));
      }
    }
    out.push_back(std::move(tr));
  }
  return out;
}

// ---------------------------------------------------------------- scenes

void SceneConfig::check() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("scene config: bad image size");
  if (frames <= 0) throw std::invalid_argument("scene config: needs >= 1 frame");
  if (rect_count <= 0) throw std::invalid_argument("scene config: needs >= 1 rectangle");
  if (!(depth_min > 0.0 && depth_min < depth_max && depth_max <= background_depth))
    throw std::invalid_argument("scene config: bad depth range");
  if (zone_rows <= 0 || zone_cols <= 0) throw std::invalid_argument("scene config: bad zone grid");
}

geom::Intrinsics SceneConfig::intrinsics() const {
  geom::Intrinsics k;
  const double half_fov = fov_deg * 3.14159265358979323846 / 360.0;
  k.fx = k.fy = 0.5 * width / std::tan(half_fov);
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  k.width = width;
  k.height = height;
  return k;
}

namespace {

double lattice_hash(std::int64_t ix, std::int64_t iy, std::uint64_t seed) {
  std::uint64_t h = seed;
  h ^= static_cast<std::uint64_t>(ix) * 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h ^= static_cast<std::uint64_t>(iy) * 0xd6e8feb86659fd93ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  h ^= h >> 31;
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(double x, double y, std::uint64_t seed) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx);
  const auto iy = static_cast<std::int64_t>(fy);
  double u = x - fx, v = y - fy;
  u = u * u * (3.0 - 2.0 * u);  // smoothstep keeps photometric gradients C1
  v = v * v * (3.0 - 2.0 * v);
  const double a = lattice_hash(ix, iy, seed), b = lattice_hash(ix + 1, iy, seed);
  const double c = lattice_hash(ix, iy + 1, seed), d = lattice_hash(ix + 1, iy + 1, seed);
  return (a * (1 - u) + b * u) * (1 - v) + (c * (1 - u) + d * u) * v;
}

double texture_value(double xw, double yw, std::uint64_t seed) {
  const double n = 0.5 * value_noise(xw * 8.0, yw * 8.0, seed) +
                   0.3 * value_noise(xw * 16.0 + 13.7, yw * 16.0 + 5.1, seed ^ 0x5bf0) +
                   0.2 * value_noise(xw * 32.0 + 71.3, yw * 32.0 + 47.9, seed ^ 0xa273);
  return 0.1 + 0.85 * n;
}

struct ScenePlane {
  double z;                    // world depth of the fronto-parallel plane
  double x0, x1, y0, y1;       // world extent; background covers everything
  bool background;
  std::uint64_t texture_seed;
};

}  // namespace

Sequence generate_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg) {
  cfg.check();
  Rng rng(seed);
  const geom::Intrinsics K = cfg.intrinsics();

  // plane depths, far to near, distinct after snapping
  std::vector<double> depths;
  for (int k = 0; k < cfg.rect_count; ++k) {
    for (;;) {
      double z = rng.uniform(cfg.depth_min, cfg.depth_max);
      if (cfg.depth_snap) z = std::max(cfg.depth_min, std::round(z * 64.0) / 64.0);
      if (std::find(depths.begin(), depths.end(), z) == depths.end()) {
        depths.push_back(z);
        break;
      }
    }
  }
  std::sort(depths.begin(), depths.end(), std::greater<>());

  std::vector<ScenePlane> planes;
  {
    ScenePlane bg;
    bg.z = cfg.background_depth;
    bg.background = true;
    bg.x0 = bg.x1 = bg.y0 = bg.y1 = 0.0;
    bg.texture_seed = rng.next_u64();
    planes.push_back(bg);
  }
  const int zone_w = cfg.width / cfg.zone_cols, zone_h = cfg.height / cfg.zone_rows;
  for (double z : depths) {
    // choose the footprint in identity-pose pixel coordinates
    double px0, px1, py0, py1;
    if (cfg.zone_align) {
      const int c0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.zone_cols)));
      const int c1 = c0 + 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.zone_cols - c0)));
      const int r0 = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.zone_rows)));
      const int r1 = r0 + 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(cfg.zone_rows - r0)));
      px0 = c0 * zone_w;
      px1 = c1 * zone_w;
      py0 = r0 * zone_h;
      py1 = r1 * zone_h;
    } else {
      const double wmin = 0.2 * cfg.width, hmin = 0.2 * cfg.height;
      px0 = rng.uniform(0.0, cfg.width - wmin);
      px1 = px0 + rng.uniform(wmin, cfg.width - px0);
      py0 = rng.uniform(0.0, cfg.height - hmin);
      py1 = py0 + rng.uniform(hmin, cfg.height - py0);
    }
    ScenePlane p;
    p.z = z;
    p.background = false;
    // pixel footprint -> world extent at this depth (pixel centers map to
    // half-open [px0 - 0.5, px1 - 0.5) so integer pixels land exactly)
    p.x0 = (px0 - 0.5 - K.cx) / K.fx * z;
    p.x1 = (px1 - 0.5 - K.cx) / K.fx * z;
    p.y0 = (py0 - 0.5 - K.cy) / K.fy * z;
    p.y1 = (py1 - 0.5 - K.cy) / K.fy * z;
    p.texture_seed = rng.next_u64();
    planes.push_back(p);
  }

  // smooth trajectory, zero at frame 0
  double phase[6], omega[6], amp[6];
  for (int i = 0; i < 6; ++i) {
    phase[i] = rng.uniform(0.0, 6.283185307179586);
    omega[i] = rng.uniform(0.15, 0.45);
    const double a = i < 3 ? cfg.traj_amplitude
                           : cfg.rot_amplitude_deg * 3.14159265358979323846 / 180.0;
    amp[i] = a * rng.uniform(0.6, 1.0);
  }
  auto pose_at = [&](int t) {
    geom::RigidTransform T;
    for (int i = 0; i < 3; ++i)
      T.translation[static_cast<std::size_t>(i)] =
          amp[i] * (std::sin(omega[i] * t + phase[i]) - std::sin(phase[i]));
    for (int i = 0; i < 3; ++i)
      T.axis_angle[static_cast<std::size_t>(i)] =
          amp[i + 3] * (std::sin(omega[i + 3] * t + phase[i + 3]) - std::sin(phase[i + 3]));
    return T;
  };

  Sequence seq;
  seq.name = "scene_" + std::to_string(seed);
  seq.intrinsics = K;
  for (int t = 0; t < cfg.frames; ++t) {
    Frame fr;
    fr.pose = pose_at(t);
    fr.has_pose = true;
    const geom::Mat3 R = fr.pose.rotation_matrix();
    const geom::Mat3 Rt = {R[0], R[3], R[6], R[1], R[4], R[7], R[2], R[5], R[8]};
    const geom::Vec3 cam_center = geom::rotate_point(Rt, {-fr.pose.translation[0],
                                                          -fr.pose.translation[1],
                                                          -fr.pose.translation[2]});
    fr.rgb = Tensor({3, cfg.height, cfg.width});
    fr.depth = Tensor({cfg.height, cfg.width});
    for (int i = 0; i < cfg.height; ++i)
      for (int j = 0; j < cfg.width; ++j) {
        const geom::Vec3 dir_cam = {(j - K.cx) / K.fx, (i - K.cy) / K.fy, 1.0};
        const geom::Vec3 dir_w = geom::rotate_point(Rt, dir_cam);
        double depth = 0.0;
        double color[3] = {0.0, 0.0, 0.0};
        for (const auto& p : planes) {  // painter's order: far to near
          if (dir_w[2] <= 1e-9) continue;
          const double lambda = (p.z - cam_center[2]) / dir_w[2];
          if (lambda <= 0.0) continue;
          const double xw = cam_center[0] + lambda * dir_w[0];
          const double yw = cam_center[1] + lambda * dir_w[1];
          if (!p.background && (xw < p.x0 || xw >= p.x1 || yw < p.y0 || yw >= p.y1)) continue;
          depth = lambda;
          for (int c = 0; c < 3; ++c)
            color[c] = texture_value(xw, yw, p.texture_seed + static_cast<std::uint64_t>(c) * 0x9e37);
        }
        fr.depth.at(i, j) = depth;
        for (int c = 0; c < 3; ++c) fr.rgb.at(c, i, j) = color[c];
      }
    fr.zones = tofsim::fit_zones(fr.depth, cfg.zone_rows, cfg.zone_cols);
    fr.has_zones = true;
    seq.frames.push_back(std::move(fr));
  }
  return seq;
}

// ---------------------------------------------------------------- fixtures

namespace {
std::string frame_name(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%06d%s", prefix, i, ext);
  return buf;
}
}  // namespace

void write_scene_dir(const Sequence& seq, const std::string& dir) {
  fs::create_directories(dir);
  seq.intrinsics.save(dir + "/intrinsics.txt");
  std::ofstream poses(dir + "/poses.txt");
  if (!poses) throw std::runtime_error("cannot open for writing: " + dir + "/poses.txt");
  char buf[256];
  for (const auto& fr : seq.frames) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g\n", fr.pose.axis_angle[0],
                  fr.pose.axis_angle[1], fr.pose.axis_angle[2], fr.pose.translation[0],
                  fr.pose.translation[1], fr.pose.translation[2]);
    poses << buf;
  }
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& fr = seq.frames[i];
    const int t = static_cast<int>(i);
    save_ppm(fr.rgb, dir + "/" + frame_name("rgb", t, ".ppm"));
    if (fr.depth.defined()) save_pfm(fr.depth, dir + "/" + frame_name("depth", t, ".pfm"));
    if (fr.has_zones) tofsim::save_zone_grid(fr.zones, dir + "/" + frame_name("zones", t, ".txt"));
  }
}

Sequence load_scene_dir(const std::string& dir) {
  Sequence seq;
  seq.name = fs::path(dir).filename().string();
  const std::string kpath = dir + "/intrinsics.txt";
  if (!fs::exists(kpath)) throw std::runtime_error("missing intrinsics file: " + kpath);
  seq.intrinsics = geom::Intrinsics::load(kpath);

  std::vector<geom::RigidTransform> poses;
  if (std::ifstream pf(dir + "/poses.txt"); pf) {
    geom::RigidTransform p;
    while (pf >> p.axis_angle[0] >> p.axis_angle[1] >> p.axis_angle[2] >> p.translation[0] >>
           p.translation[1] >> p.translation[2])
      poses.push_back(p);
  }

  for (int t = 0;; ++t) {
    const std::string rgb_path = dir + "/" + frame_name("rgb", t, ".ppm");
    if (!fs::exists(rgb_path)) break;
    Frame fr;
    fr.rgb = load_ppm(rgb_path);
    const std::string dpath = dir + "/" + frame_name("depth", t, ".pfm");
    if (fs::exists(dpath)) {
      try {
        fr.depth = load_pfm(dpath);
      } catch (const std::exception& e) {
        throw std::runtime_error("frame " + std::to_string(t) + ": " + e.what());
      }
    }
    const std::string zpath = dir + "/" + frame_name("zones", t, ".txt");
    if (fs::exists(zpath)) {
      fr.zones = tofsim::load_zone_grid(zpath);
      fr.has_zones = true;
    }
    if (static_cast<std::size_t>(t) < poses.size()) {
      fr.pose = poses[static_cast<std::size_t>(t)];
      fr.has_pose = true;
    }
    seq.frames.push_back(std::move(fr));
  }
  if (seq.frames.empty()) throw std::runtime_error("no frames found under " + dir);
  return seq;
}

std::vector<std::string> read_split_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open split file: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<Sequence> load_fixture(const std::string& root, const std::string& split_file) {
  std::vector<Sequence> out;
  for (const auto& rel : read_split_file(split_file)) out.push_back(load_scene_dir(root + "/" + rel));
  return out;
}

std::vector<Sequence> load_nyu_layout(const std::string& root, const std::string& split_file,
                                      int zone_rows, int zone_cols) {
  std::vector<Sequence> out;
  for (const auto& rel : read_split_file(split_file)) {
    const std::string dir = root + "/" + rel;
    Sequence seq;
    seq.name = rel;
    const std::string kpath = dir + "/intrinsics.txt";
    if (!fs::exists(kpath)) throw std::runtime_error("missing intrinsics file: " + kpath);
    seq.intrinsics = geom::Intrinsics::load(kpath);
    for (int t = 0;; ++t) {
      const std::string rgb_path = dir + "/" + frame_name("rgb", t, ".ppm");
      if (!fs::exists(rgb_path)) break;
      Frame fr;
      fr.rgb = load_ppm(rgb_path);
      const std::string dpath = dir + "/" + frame_name("depth", t, ".pgm");
      if (fs::exists(dpath)) {
        try {
          fr.depth = load_pgm16(dpath);
        } catch (const std::exception& e) {
          throw std::runtime_error("frame " + std::to_string(t) + ": " + e.what());
        }
        fr.zones = tofsim::fit_zones(fr.depth, zone_rows, zone_cols);
        fr.has_zones = true;
      }
      seq.frames.push_back(std::move(fr));
    }
    if (seq.frames.empty()) throw std::runtime_error("no frames found under " + dir);
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace selftof::data
