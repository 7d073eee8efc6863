// License: Apache 2.0. See LICENSE file in root directory.
#pragma once

#include <array>
#include <string>

#include "selftof/autodiff.hpp"
#include "selftof/tensor.hpp"

namespace selftof::geom {

struct Intrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  void check() const;
  static Intrinsics load(const std::string& path);
  void save(const std::string& path) const;
};

using Mat3 = std::array<double, 9>;  // row-major
using Vec3 = std::array<double, 3>;

// Relative pose as axis-angle rotation (radians * unit axis) plus translation
// in meters: p_dst = R * p_src + t.
struct RigidTransform {
  Vec3 axis_angle{0.0, 0.0, 0.0};
  Vec3 translation{0.0, 0.0, 0.0};

  Mat3 rotation_matrix() const;
  RigidTransform inverse() const;
  static RigidTransform identity() { return {}; }
};

Mat3 axis_angle_to_matrix(const Vec3& aa);
Vec3 matrix_to_axis_angle(const Mat3& R);  // via quaternion, stable on (0, pi)
Mat3 matmul3(const Mat3& a, const Mat3& b);
Vec3 rotate_point(const Mat3& R, const Vec3& p);
// first T2, then T1 (composition of maps)
RigidTransform compose(const RigidTransform& t1, const RigidTransform& t2);
double rotation_geodesic_deg(const Mat3& a, const Mat3& b);

// ---- plain (non-differentiable) warping API ----

struct ProjectedCoords {
  Tensor u, v;   // [H,W] source-frame pixel coordinates
  Tensor mask;   // 1 where input depth valid, projected depth > 0 and in-bounds
};

ProjectedCoords project_coords(const Tensor& depth, const Intrinsics& K, const RigidTransform& T);

struct Synthesis {
  Tensor image;  // [C,H,W], zeros where masked
  Tensor mask;   // [H,W]
};

Synthesis synthesize(const Tensor& source, const Tensor& depth, const Intrinsics& K,
                     const RigidTransform& T);

// ---- differentiable warping (drives training) ----

// Rodrigues rotation as a [3,3] graph node; series expansion near zero keeps
// the gradient finite at the zero-initialised pose.
ad::Var rotation_matrix_ad(const ad::Var& axis_angle);

struct ProjectedCoordsAd {
  ad::Var u, v;      // [H,W]
  Tensor depth_pos;  // 1 where input depth valid and projected depth > 0
};

ProjectedCoordsAd project_coords_ad(const ad::Var& depth, const Intrinsics& K,
                                    const ad::Var& axis_angle, const ad::Var& translation);

struct SynthesisAd {
  ad::Var image;  // [C,H,W]
  Tensor mask;    // [H,W]
};

SynthesisAd synthesize_ad(const ad::Var& source, const ad::Var& depth, const Intrinsics& K,
                          const ad::Var& axis_angle, const ad::Var& translation);

}  // namespace selftof::geom
