// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "selftof/geometry.hpp"
#include "selftof/tensor.hpp"
#include "selftof/tofsim.hpp"

namespace selftof::data {

// ---- image files ----
void save_ppm(const Tensor& rgb, const std::string& path);   // [3,H,W] in [0,1], 8-bit
Tensor load_ppm(const std::string& path);
void save_pfm(const Tensor& gray, const std::string& path);  // [H,W], float32
Tensor load_pfm(const std::string& path);
void save_pgm16(const Tensor& depth_m, const std::string& path);  // millimeters, 16-bit
Tensor load_pgm16(const std::string& path);                       // -> meters

struct Frame {
  Tensor rgb;                 // [3,H,W] in [0,1]
  Tensor depth;               // [H,W] meters; empty when absent
  tofsim::ZoneGrid zones;
  bool has_zones = false;
  geom::RigidTransform pose;  // world -> camera
  bool has_pose = false;
};

struct Sequence {
  std::string name;
  geom::Intrinsics intrinsics;
  std::vector<Frame> frames;
};

struct FrameTriplet {
  std::string scene;
  int target_index = 0;
  geom::Intrinsics intrinsics;
  Tensor target_rgb;
  tofsim::ZoneGrid target_zones;
  std::vector<Tensor> source_rgbs;
  std::vector<tofsim::ZoneGrid> source_zones;
  Tensor gt_depth;                              // empty when absent
  std::vector<geom::RigidTransform> gt_poses;   // target -> source, when known
};

// Index plan: targets at 0, stride, 2*stride, ...; sources at target+offset;
// triplets whose sources fall outside the sequence are dropped.
struct TripletIndices {
  int target = 0;
  std::vector<int> sources;
};
std::vector<TripletIndices> plan_triplets(int frame_count, int stride,
                                          const std::vector<int>& offsets);

std::vector<FrameTriplet> sample_triplets(const Sequence& seq, int stride,
                                          const std::vector<int>& offsets);

// ---- synthetic desk-scale scenes ----
struct SceneConfig {
  int width = 64, height = 64;
  int frames = 16;
  int rect_count = 6;
  double depth_min = 1.5, depth_max = 5.0;
  double background_depth = 6.0;
  double traj_amplitude = 0.08;     // meters
  double rot_amplitude_deg = 0.8;
  double fov_deg = 53.0;
  int zone_rows = 8, zone_cols = 8;
  bool zone_align = false;          // snap rectangles to zone footprints
  bool depth_snap = true;           // snap plane depths to multiples of 1/64

  void check() const;
  geom::Intrinsics intrinsics() const;
};

// Layered textured fronto-parallel rectangles under a smooth trajectory,
// rendered by ray casting with the project geometry; depth is pixel-exact and
// poses are ground truth. Frame 0 is at the identity pose.
Sequence generate_synthetic_scene(std::uint64_t seed, const SceneConfig& cfg);

// ---- fixture directories ----
// scene_dir/{intrinsics.txt, poses.txt, rgb_%06d.ppm, depth_%06d.pfm,
// zones_%06d.txt}; split files are newline-separated scene dir names.
void write_scene_dir(const Sequence& seq, const std::string& dir);
Sequence load_scene_dir(const std::string& dir);
std::vector<std::string> read_split_file(const std::string& path);
std::vector<Sequence> load_fixture(const std::string& root, const std::string& split_file);

// ---- NYU-style layout adapter ----
// Per-scene folders of rgb_%06d.ppm + depth_%06d.pgm (16-bit millimeter
// integers) + intrinsics.txt; depth converted to meters. Zone grids are
// fitted from the converted depth on load.
std::vector<Sequence> load_nyu_layout(const std::string& root, const std::string& split_file,
                                      int zone_rows = 8, int zone_cols = 8);

}  // namespace selftof::data
