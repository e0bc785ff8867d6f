#pragma once

#include "motion_forge/kinematics.hpp"
#include "motion_forge/scene.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

namespace testing {

using mforge::JointConfig;
using mforge::Vec3;

/// Published Panda table: alpha_{i-1}, a_{i-1}, d_i.
inline constexpr double kPandaDh[7][3] = {{0.0, 0.0, 0.333},
                                          {-M_PI / 2, 0.0, 0.0},
                                          {M_PI / 2, 0.0, 0.316},
                                          {M_PI / 2, 0.0825, 0.0},
                                          {-M_PI / 2, -0.0825, 0.384},
                                          {M_PI / 2, 0.0, 0.0},
                                          {M_PI / 2, 0.088, 0.0}};

/// Craig's modified DH link transform, written out entry by entry.
inline Eigen::Matrix4d craig_link(double alpha, double a, double d, double theta) {
  const double ct = std::cos(theta), st = std::sin(theta), ca = std::cos(alpha), sa = std::sin(alpha);
  Eigen::Matrix4d t;
  t << ct, -st, 0, a,
       st * ca, ct * ca, -sa, -sa * d,
       st * sa, ct * sa, ca, ca * d,
       0, 0, 0, 1;
  return t;
}

/// Flange 0.107 along z, hand rotated -45 degrees, fingertip center 0.1034 further.
inline Eigen::Matrix4d oracle_tool() {
  Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
  const double c = std::cos(-M_PI / 4), s = std::sin(-M_PI / 4);
  t.block<2, 2>(0, 0) << c, -s, s, c;
  t(2, 3) = 0.107 + 0.1034;
  return t;
}

/// Link frames 0..8 by chained homogeneous matrices.
inline std::array<Eigen::Matrix4d, 9> oracle_fk(const JointConfig& q) {
  std::array<Eigen::Matrix4d, 9> out;
  out[0].setIdentity();
  for (int j = 0; j < 7; ++j) out[j + 1] = out[j] * craig_link(kPandaDh[j][0], kPandaDh[j][1], kPandaDh[j][2], q[j]);
  out[8] = out[7] * oracle_tool();
  return out;
}

inline JointConfig random_config(const mforge::RobotModel& robot, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  JointConfig q;
  for (int j = 0; j < 7; ++j) q[j] = robot.joints[j].lower + u(gen) * (robot.joints[j].upper - robot.joints[j].lower);
  return q;
}

inline Vec3 random_point(std::mt19937_64& gen, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(gen), u(gen), u(gen)};
}

inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max(floor, std::max(std::abs(a), std::abs(b)));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mforge_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Scene with a single floor far below the workspace.
inline mforge::Scene empty_scene() {
  mforge::Scene s;
  s.primitives.push_back(mforge::Primitive::floor(-5.0, 0.5));
  return s;
}

}  // namespace testing
