// License: Apache 2.0. See LICENSE file in root directory.
#include "selftof/geometry.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace selftof::geom {

using ad::Var;

void Intrinsics::check() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("Intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("Intrinsics: bad image size");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
    throw std::invalid_argument("Intrinsics: principal point outside image");
}

Intrinsics Intrinsics::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open intrinsics: " + path);
  Intrinsics k;
  f >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height;
  if (!f) throw std::runtime_error("malformed intrinsics record: " + path);
  k.check();
  return k;
}

void Intrinsics::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %d %d\n", fx, fy, cx, cy, width,
                height);
  f << buf;
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
  const double x = aa[0], y = aa[1], z = aa[2];
  const double t2 = x * x + y * y + z * z;
  double A, B;
  if (t2 < 1e-16) {
    A = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    B = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    const double t = std::sqrt(t2);
    A = std::sin(t) / t;
    B = (1.0 - std::cos(t)) / t2;
  }
  return {1.0 + B * (-y * y - z * z), A * (-z) + B * x * y,       A * y + B * x * z,
          A * z + B * x * y,          1.0 + B * (-x * x - z * z), A * (-x) + B * y * z,
          A * (-y) + B * x * z,       A * x + B * y * z,          1.0 + B * (-x * x - y * y)};
}

Vec3 matrix_to_axis_angle(const Mat3& R) {
  // rotation matrix -> quaternion (largest-pivot branch) -> axis-angle
  double w, x, y, z;
  const double tr = R[0] + R[4] + R[8];
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    w = 0.25 * s;
    x = (R[7] - R[5]) / s;
    y = (R[2] - R[6]) / s;
    z = (R[3] - R[1]) / s;
  } else if (R[0] > R[4] && R[0] > R[8]) {
    double s = std::sqrt(1.0 + R[0] - R[4] - R[8]) * 2.0;
    w = (R[7] - R[5]) / s;
    x = 0.25 * s;
    y = (R[1] + R[3]) / s;
    z = (R[2] + R[6]) / s;
  } else if (R[4] > R[8]) {
    double s = std::sqrt(1.0 + R[4] - R[0] - R[8]) * 2.0;
    w = (R[2] - R[6]) / s;
    x = (R[1] + R[3]) / s;
    y = 0.25 * s;
    z = (R[5] + R[7]) / s;
  } else {
    double s = std::sqrt(1.0 + R[8] - R[0] - R[4]) * 2.0;
    w = (R[3] - R[1]) / s;
    x = (R[2] + R[6]) / s;
    y = (R[5] + R[7]) / s;
    z = 0.25 * s;
  }
  if (w < 0.0) {
    w = -w;
    x = -x;
    y = -y;
    z = -z;
  }
  const double vn = std::sqrt(x * x + y * y + z * z);
  if (vn < 1e-300) return {0.0, 0.0, 0.0};
  const double angle = 2.0 * std::atan2(vn, w);
  return {angle * x / vn, angle * y / vn, angle * z / vn};
}

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[static_cast<std::size_t>(3 * i + k)] * b[static_cast<std::size_t>(3 * k + j)];
      c[static_cast<std::size_t>(3 * i + j)] = s;
    }
  return c;
}

Vec3 rotate_point(const Mat3& R, const Vec3& p) {
  return {R[0] * p[0] + R[1] * p[1] + R[2] * p[2], R[3] * p[0] + R[4] * p[1] + R[5] * p[2],
          R[6] * p[0] + R[7] * p[1] + R[8] * p[2]};
}

Mat3 RigidTransform::rotation_matrix() const { return axis_angle_to_matrix(axis_angle); }

RigidTransform RigidTransform::inverse() const {
  const Mat3 R = rotation_matrix();
  Mat3 Rt = {R[0], R[3], R[6], R[1], R[4], R[7], R[2], R[5], R[8]};
  const Vec3 nt = rotate_point(Rt, translation);
  return {matrix_to_axis_angle(Rt), {-nt[0], -nt[1], -nt[2]}};
}

RigidTransform compose(const RigidTransform& t1, const RigidTransform& t2) {
  const Mat3 R1 = t1.rotation_matrix();
  const Mat3 R2 = t2.rotation_matrix();
  const Vec3 rt = rotate_point(R1, t2.translation);
  return {matrix_to_axis_angle(matmul3(R1, R2)),
          {rt[0] + t1.translation[0], rt[1] + t1.translation[1], rt[2] + t1.translation[2]}};
}

double rotation_geodesic_deg(const Mat3& a, const Mat3& b) {
  Mat3 bt = {b[0], b[3], b[6], b[1], b[4], b[7], b[2], b[5], b[8]};
  const Mat3 rel = matmul3(a, bt);
  const double c = std::min(1.0, std::max(-1.0, (rel[0] + rel[4] + rel[8] - 1.0) * 0.5));
  return std::acos(c) * 180.0 / 3.14159265358979323846;
}

// ---------------------------------------------------------------- autodiff

Var rotation_matrix_ad(const Var& aa) {
  if (aa.val().size() != 3) throw std::invalid_argument("rotation_matrix_ad: expects [3]");
  Var x = ad::slice_vec(aa, 0, 1);
  Var y = ad::slice_vec(aa, 1, 2);
  Var z = ad::slice_vec(aa, 2, 3);
  Var t2 = ad::add(ad::add(ad::square(x), ad::square(y)), ad::square(z));
  Var A, B;
  if (t2.item() < 1e-16) {
    Var t4 = ad::square(t2);
    A = ad::add(ad::add(ad::mul(t2, -1.0 / 6.0), ad::mul(t4, 1.0 / 120.0)), 1.0);
    B = ad::add(ad::add(ad::mul(t2, -1.0 / 24.0), ad::mul(t4, 1.0 / 720.0)), 0.5);
  } else {
    Var t = ad::vsqrt(t2);
    A = ad::divide(ad::vsin(t), t);
    B = ad::divide(ad::add(ad::neg(ad::vcos(t)), 1.0), t2);
  }
  Var xx = ad::square(x), yy = ad::square(y), zz = ad::square(z);
  Var xy = ad::mul(x, y), xz = ad::mul(x, z), yz = ad::mul(y, z);
  auto fuse = [&](const Var& lin, const Var& quad) { return ad::add(ad::mul(A, lin), ad::mul(B, quad)); };
  std::vector<Var> r(9);
  r[0] = ad::add(ad::mul(B, ad::neg(ad::add(yy, zz))), 1.0);
  r[1] = fuse(ad::neg(z), xy);
  r[2] = fuse(y, xz);
  r[3] = fuse(z, xy);
  r[4] = ad::add(ad::mul(B, ad::neg(ad::add(xx, zz))), 1.0);
  r[5] = fuse(ad::neg(x), yz);
  r[6] = fuse(ad::neg(y), xz);
  r[7] = fuse(x, yz);
  r[8] = ad::add(ad::mul(B, ad::neg(ad::add(xx, yy))), 1.0);
  return ad::pack(r, {3, 3});
}

ProjectedCoordsAd project_coords_ad(const Var& depth, const Intrinsics& K, const Var& axis_angle,
                                    const Var& translation) {
  K.check();
  const Tensor& d = depth.val();
  if (d.ndim() != 2) throw std::invalid_argument("project_coords_ad: depth must be [H,W]");
  const int H = d.dim(0), W = d.dim(1);
  if (H != K.height || W != K.width)
    throw std::invalid_argument("project_coords_ad: depth size does not match intrinsics");

  // constant per-pixel ray factors
  Tensor xfac({H, W}), yfac({H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      xfac.at(i, j) = (j - K.cx) / K.fx;
      yfac.at(i, j) = (i - K.cy) / K.fy;
    }

  Var R = rotation_matrix_ad(axis_angle);
  Var Rflat = ad::reshape(R, {9});
  auto rentry = [&](int i) { return ad::slice_vec(Rflat, i, i + 1); };
  Var t0 = ad::slice_vec(translation, 0, 1);
  Var t1 = ad::slice_vec(translation, 1, 2);
  Var t2 = ad::slice_vec(translation, 2, 3);

  Var X = ad::mul_mask(depth, xfac);
  Var Y = ad::mul_mask(depth, yfac);
  const Var& Z = depth;

  Var Xp = ad::add(ad::add(ad::mul(X, rentry(0)), ad::mul(Y, rentry(1))),
                   ad::add(ad::mul(Z, rentry(2)), t0));
  Var Yp = ad::add(ad::add(ad::mul(X, rentry(3)), ad::mul(Y, rentry(4))),
                   ad::add(ad::mul(Z, rentry(5)), t1));
  Var Zp = ad::add(ad::add(ad::mul(X, rentry(6)), ad::mul(Y, rentry(7))),
                   ad::add(ad::mul(Z, rentry(8)), t2));

  // valid input depth and strictly positive projected depth
  Tensor pos({H, W});
  for (std::size_t i = 0; i < pos.size(); ++i) {
    const double din = d[i];
    pos[i] = (std::isfinite(din) && din > 0.0 && Zp.val()[i] > 1e-9) ? 1.0 : 0.0;
  }
  Var Zsafe = ad::select(pos, Zp, Var::scalar(1.0));

  ProjectedCoordsAd out;
  out.u = ad::add(ad::mul(ad::divide(Xp, Zsafe), K.fx), K.cx);
  out.v = ad::add(ad::mul(ad::divide(Yp, Zsafe), K.fy), K.cy);
  out.depth_pos = pos;
  return out;
}

SynthesisAd synthesize_ad(const Var& source, const Var& depth, const Intrinsics& K,
                          const Var& axis_angle, const Var& translation) {
  const Tensor& s = source.val();
  if (s.ndim() != 3 || s.dim(1) != K.height || s.dim(2) != K.width)
    throw std::invalid_argument("synthesize_ad: source image size mismatch");
  ProjectedCoordsAd pc = project_coords_ad(depth, K, axis_angle, translation);
  Tensor sample_valid;
  Var img = ad::bilinear_sample(source, pc.u, pc.v, sample_valid);
  SynthesisAd out;
  out.mask = Tensor({K.height, K.width});
  for (std::size_t i = 0; i < out.mask.size(); ++i)
    out.mask[i] = pc.depth_pos[i] * sample_valid[i];
  // zero out samples that survived bounds checks but had invalid depth
  const int C = s.dim(0);
  Tensor m3({C, K.height, K.width});
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < out.mask.size(); ++i)
      m3[static_cast<std::size_t>(c) * out.mask.size() + i] = out.mask[i];
  out.image = ad::mul_mask(img, m3);
  return out;
}

ProjectedCoords project_coords(const Tensor& depth, const Intrinsics& K,
                               const RigidTransform& T) {
  Var d = Var::constant(depth);
  Var aa = Var::constant(Tensor::from({3}, {T.axis_angle[0], T.axis_angle[1], T.axis_angle[2]}));
  Var t = Var::constant(
      Tensor::from({3}, {T.translation[0], T.translation[1], T.translation[2]}));
  ProjectedCoordsAd pc = project_coords_ad(d, K, aa, t);
  // in-bounds test mirrors bilinear sampling
  Tensor mask({depth.dim(0), depth.dim(1)});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double u = pc.u.val()[i], v = pc.v.val()[i];
    const bool in = u >= 0.0 && u <= K.width - 1 && v >= 0.0 && v <= K.height - 1;
    mask[i] = (pc.depth_pos[i] != 0.0 && in) ? 1.0 : 0.0;
  }
  return {pc.u.val(), pc.v.val(), mask};
}

Synthesis synthesize(const Tensor& source, const Tensor& depth, const Intrinsics& K,
                     const RigidTransform& T) {
  Var s = Var::constant(source);
  Var d = Var::constant(depth);
  Var aa = Var::constant(Tensor::from({3}, {T.axis_angle[0], T.axis_angle[1], T.axis_angle[2]}));
  Var t = Var::constant(
      Tensor::from({3}, {T.translation[0], T.translation[1], T.translation[2]}));
  SynthesisAd sa = synthesize_ad(s, d, K, aa, t);
  return {sa.image.val(), sa.mask};
}

}  // namespace selftof::geom
