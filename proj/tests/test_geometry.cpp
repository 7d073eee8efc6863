// License: Apache 2.0. See LICENSE file in root directory.
#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "selftof/geometry.hpp"
#include "selftof/rng.hpp"

using namespace selftof;
using namespace selftof::geom;

TEST_SUITE_BEGIN("geometry");

namespace {

Intrinsics test_intrinsics(int w = 16, int h = 12) {
  Intrinsics k;
  k.fx = 20.0;
  k.fy = 22.0;
  k.cx = 0.5 * (w - 1);
  k.cy = 0.5 * (h - 1);
  k.width = w;
  k.height = h;
  return k;
}

// smooth analytic image for warp oracles
double smooth_image(double u, double v) {
  return 0.5 + 0.25 * std::sin(0.4 * u) + 0.2 * std::cos(0.3 * v + 0.7) +
         0.05 * std::sin(0.15 * u * 0.5 + 0.2 * v);
}

}  // namespace

TEST_CASE("identity transform keeps the pixel grid") {
  Intrinsics K = test_intrinsics();
  Tensor depth = Tensor::full({K.height, K.width}, 2.5);
  ProjectedCoords pc = project_coords(depth, K, RigidTransform::identity());
  for (int i = 0; i < K.height; ++i)
    for (int j = 0; j < K.width; ++j) {
      CHECK(pc.u.at(i, j) == doctest::Approx(j).epsilon(1e-12));
      CHECK(pc.v.at(i, j) == doctest::Approx(i).epsilon(1e-12));
      CHECK(pc.mask.at(i, j) == 1.0);
    }
}

TEST_CASE("pure translation on a fronto-parallel plane: uniform pinhole shift") {
  Intrinsics K = test_intrinsics();
  const double Z = 2.0, tx = 0.1;
  Tensor depth = Tensor::full({K.height, K.width}, Z);
  RigidTransform T;
  T.translation = {tx, 0.0, 0.0};
  ProjectedCoords pc = project_coords(depth, K, T);
  const double shift = K.fx * tx / Z;
  for (int i = 0; i < K.height; ++i)
    for (int j = 0; j < K.width; ++j) {
      CHECK(pc.u.at(i, j) == doctest::Approx(j + shift).epsilon(1e-9));
      CHECK(pc.v.at(i, j) == doctest::Approx(i).epsilon(1e-9));
    }
}

TEST_CASE("rotation about the optical axis matches a per-pixel matrix oracle") {
  Intrinsics K = test_intrinsics();
  Rng rng(5);
  Tensor depth({K.height, K.width});
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = rng.uniform(1.0, 4.0);
  RigidTransform T;
  T.axis_angle = {0.0, 0.0, 1.5707963267948966};  // 90 degrees about z
  T.translation = {0.02, -0.01, 0.03};
  ProjectedCoords pc = project_coords(depth, K, T);
  const Mat3 R = T.rotation_matrix();
  for (int i = 0; i < K.height; ++i)
    for (int j = 0; j < K.width; ++j) {
      const double Z = depth.at(i, j);
      const Vec3 p = {(j - K.cx) / K.fx * Z, (i - K.cy) / K.fy * Z, Z};
      Vec3 q = rotate_point(R, p);
      for (int a = 0; a < 3; ++a) q[static_cast<size_t>(a)] += T.translation[static_cast<size_t>(a)];
      CHECK(pc.u.at(i, j) == doctest::Approx(K.fx * q[0] / q[2] + K.cx).epsilon(1e-6));
      CHECK(pc.v.at(i, j) == doctest::Approx(K.fy * q[1] / q[2] + K.cy).epsilon(1e-6));
    }
}

TEST_CASE("synthesize with identity pose reproduces the source exactly") {
  Intrinsics K = test_intrinsics();
  Rng rng(9);
  Tensor img({3, K.height, K.width});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.next_double();
  Tensor depth = Tensor::full({K.height, K.width}, 3.0);
  Synthesis sy = synthesize(img, depth, K, RigidTransform::identity());
  for (std::size_t i = 0; i < sy.mask.size(); ++i) CHECK(sy.mask[i] == 1.0);
  for (std::size_t i = 0; i < img.size(); ++i)
    CHECK(sy.image[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("all-zero depth: fully masked synthesis") {
  Intrinsics K = test_intrinsics();
  Tensor img = Tensor::full({3, K.height, K.width}, 0.5);
  Tensor depth = Tensor::zeros({K.height, K.width});
  RigidTransform T;
  T.translation = {0.0, 0.0, 0.1};
  Synthesis sy = synthesize(img, depth, K, T);
  for (std::size_t i = 0; i < sy.mask.size(); ++i) CHECK(sy.mask[i] == 0.0);
  for (std::size_t i = 0; i < sy.image.size(); ++i) CHECK(sy.image[i] == 0.0);
}

TEST_CASE("known plane + translation: reconstruction PSNR above 40 dB") {
  Intrinsics K = test_intrinsics(48, 36);
  const double Z = 2.0, tx = 0.08;
  Tensor depth = Tensor::full({K.height, K.width}, Z);
  const double shift = K.fx * tx / Z;  // source coordinate of each target pixel

  Tensor source({1, K.height, K.width});
  for (int i = 0; i < K.height; ++i)
    for (int j = 0; j < K.width; ++j) source.at(0, i, j) = smooth_image(j, i);

  RigidTransform T;
  T.translation = {tx, 0.0, 0.0};
  Synthesis sy = synthesize(source, depth, K, T);

  double mse = 0.0;
  int n = 0;
  for (int i = 0; i < K.height; ++i)
    for (int j = 0; j < K.width; ++j) {
      if (sy.mask.at(i, j) == 0.0) continue;
      const double expect = smooth_image(j + shift, i);  // analytic shift oracle
      const double d = sy.image.at(0, i, j) - expect;
      mse += d * d;
      ++n;
    }
  REQUIRE(n > 0);
  const double psnr = 10.0 * std::log10(1.0 / (mse / n));
  CHECK(psnr > 40.0);
}

TEST_CASE("axis-angle -> matrix -> axis-angle round trip on (0, pi)") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    Vec3 axis = {rng.normal(), rng.normal(), rng.normal()};
    const double norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    const double angle = rng.uniform(1e-4, 3.14159);
    Vec3 aa = {axis[0] / norm * angle, axis[1] / norm * angle, axis[2] / norm * angle};
    Vec3 back = matrix_to_axis_angle(axis_angle_to_matrix(aa));
    for (int i = 0; i < 3; ++i)
      CHECK(back[static_cast<size_t>(i)] == doctest::Approx(aa[static_cast<size_t>(i)]).epsilon(1e-9));
  }
}

TEST_CASE("compose/inverse: T * T^-1 = identity within 1e-9") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    RigidTransform T;
    for (int i = 0; i < 3; ++i) {
      T.axis_angle[static_cast<size_t>(i)] = rng.uniform(-1.0, 1.0);
      T.translation[static_cast<size_t>(i)] = rng.uniform(-0.5, 0.5);
    }
    RigidTransform I = compose(T, T.inverse());
    for (int i = 0; i < 3; ++i) {
      CHECK(std::fabs(I.axis_angle[static_cast<size_t>(i)]) < 1e-9);
      CHECK(std::fabs(I.translation[static_cast<size_t>(i)]) < 1e-9);
    }
    // rotation matrix orthonormality
    const Mat3 R = T.rotation_matrix();
    const Mat3 Rt = {R[0], R[3], R[6], R[1], R[4], R[7], R[2], R[5], R[8]};
    const Mat3 RR = matmul3(R, Rt);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(RR[static_cast<size_t>(3 * i + j)] == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-9));
  }
}

TEST_CASE("two-step projection agrees with the composed transform on a plane") {
  Intrinsics K = test_intrinsics();
  Rng rng(21);
  RigidTransform T1, T2;
  for (int i = 0; i < 3; ++i) {
    T1.axis_angle[static_cast<size_t>(i)] = rng.uniform(-0.1, 0.1);
    T1.translation[static_cast<size_t>(i)] = rng.uniform(-0.05, 0.05);
    T2.axis_angle[static_cast<size_t>(i)] = rng.uniform(-0.1, 0.1);
    T2.translation[static_cast<size_t>(i)] = rng.uniform(-0.05, 0.05);
  }
  const double Z = 3.0;
  const Mat3 R1 = T1.rotation_matrix(), R2 = T2.rotation_matrix();
  const RigidTransform T12 = compose(T1, T2);
  const Mat3 R12 = T12.rotation_matrix();
  for (int i = 0; i < K.height; i += 3)
    for (int j = 0; j < K.width; j += 3) {
      const Vec3 p = {(j - K.cx) / K.fx * Z, (i - K.cy) / K.fy * Z, Z};
      // step 1: through T2, keeping the transported 3-D point (depth carried)
      Vec3 q = rotate_point(R2, p);
      for (int a = 0; a < 3; ++a) q[static_cast<size_t>(a)] += T2.translation[static_cast<size_t>(a)];
      // step 2: through T1
      Vec3 r = rotate_point(R1, q);
      for (int a = 0; a < 3; ++a) r[static_cast<size_t>(a)] += T1.translation[static_cast<size_t>(a)];
      // direct: composed transform
      Vec3 d = rotate_point(R12, p);
      for (int a = 0; a < 3; ++a) d[static_cast<size_t>(a)] += T12.translation[static_cast<size_t>(a)];
      CHECK(K.fx * r[0] / r[2] == doctest::Approx(K.fx * d[0] / d[2]).epsilon(1e-5));
      CHECK(K.fy * r[1] / r[2] == doctest::Approx(K.fy * d[1] / d[2]).epsilon(1e-5));
    }
}

TEST_CASE("gradcheck: synthesize w.r.t. depth, pose and translation") {
  Intrinsics K = test_intrinsics(10, 8);
  Rng rng(25);
  Tensor img({1, K.height, K.width});
  for (int i = 0; i < K.height; ++i)
    for (int j = 0; j < K.width; ++j) img.at(0, i, j) = smooth_image(j * 2.1, i * 1.7);
  Tensor depth({K.height, K.width});
  for (std::size_t i = 0; i < depth.size(); ++i) depth[i] = rng.uniform(1.8, 2.6);
  Tensor aa = Tensor::from({3}, {0.02, -0.03, 0.01});
  Tensor tr = Tensor::from({3}, {0.03, 0.01, -0.02});

  testutil::GradCheck gc;
  gc.inputs = {depth, aa, tr};
  gc.builder = [&](std::vector<ad::Var>& v) {
    geom::SynthesisAd sy = synthesize_ad(ad::Var::constant(img), v[0], K, v[1], v[2]);
    return ad::sum(ad::square(sy.image));
  };
  std::vector<std::pair<int, std::size_t>> probes;
  for (int t = 0; t < 24; ++t) probes.emplace_back(0, rng.next_below(depth.size()));
  for (int i = 0; i < 3; ++i) {
    probes.emplace_back(1, static_cast<std::size_t>(i));
    probes.emplace_back(2, static_cast<std::size_t>(i));
  }
  CHECK(gc.max_rel_error(probes) < 1e-4);
}

TEST_CASE("intrinsics text record round trip and validation") {
  Intrinsics K = test_intrinsics();
  K.save("/tmp/selftof_test_intrinsics.txt");
  Intrinsics L = Intrinsics::load("/tmp/selftof_test_intrinsics.txt");
  CHECK(L.fx == K.fx);
  CHECK(L.fy == K.fy);
  CHECK(L.cx == K.cx);
  CHECK(L.cy == K.cy);
  CHECK(L.width == K.width);
  CHECK(L.height == K.height);

  Intrinsics bad = K;
  bad.fx = -1.0;
  CHECK_THROWS_AS(bad.check(), std::invalid_argument);
  CHECK_THROWS_AS(Intrinsics::load("/tmp/selftof_no_such_file.txt"), std::runtime_error);
}

TEST_SUITE_END();
