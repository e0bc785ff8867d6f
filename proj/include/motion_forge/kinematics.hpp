#pragma once

#include "motion_forge/geometry.hpp"
#include "motion_forge/random.hpp"

#include <Eigen/Core>

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mforge {

class Scene;

/// Frame 0 is the fixed base, frames 1..7 follow the actuated joints and frame
/// 8 is the end effector (tool center point).
inline constexpr int kLinkCount = kDof + 2;
inline constexpr int kEndEffectorLink = kLinkCount - 1;
inline constexpr int kSurfaceAnchorCount = 1024;

using JointConfig = Joints;
using NormalizedConfig = Joints;
using LinkPoses = std::array<Pose, kLinkCount>;
using Jacobian = Eigen::Matrix<double, 6, kDof>;
using PointJacobian = Eigen::Matrix<double, 3, kDof>;

struct JointSpec {
  Mat4 fixed = Mat4::Identity();  ///< parent frame -> joint frame before rotation
  Vec3 axis = Vec3::UnitZ();
  double lower = -1.0;
  double upper = 1.0;
};

struct CollisionSphere {
  int link = 0;
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

struct SurfaceAnchor {
  int link = 0;
  Vec3 offset = Vec3::Zero();
};

class RobotModel {
 public:
  std::string name;
  std::array<JointSpec, kDof> joints;
  Mat4 ee_fixed = Mat4::Identity();  ///< frame 7 -> end effector
  std::vector<CollisionSphere> spheres;
  std::vector<SurfaceAnchor> anchors;
  /// Link pairs tested for self collision; links closer along the chain are
  /// treated as adjacent.
  std::vector<std::pair<int, int>> self_collision_pairs;
  JointConfig neutral = JointConfig::Zero();

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;

  JointConfig lower() const;
  JointConfig upper() const;
  bool within_limits(const JointConfig& q, double tol = 0.0) const;
  JointConfig clamp(const JointConfig& q) const;
  JointConfig sample_uniform(Rng& rng) const;

  /// Spheres of the end-effector link, in end-effector coordinates.
  std::vector<CollisionSphere> gripper_spheres() const;

  /// The 7-DOF Panda-like arm bundled with the library.
  static RobotModel panda_like();
};

LinkPoses forward_kinematics(const RobotModel& robot, const JointConfig& q);
inline Pose end_effector_pose(const RobotModel& robot, const JointConfig& q) {
  return forward_kinematics(robot, q)[kEndEffectorLink];
}

std::vector<Vec3> surface_points(const RobotModel& robot, const JointConfig& q);
std::vector<Vec3> surface_points(const RobotModel& robot, const LinkPoses& poses);

NormalizedConfig normalize_config(const RobotModel& robot, const JointConfig& q);
/// Clamps each entry to [-1, 1] before mapping back to radians.
JointConfig unnormalize_config(const RobotModel& robot, const NormalizedConfig& qn);

/// Geometric Jacobian of the end effector (rows: linear, angular).
Jacobian jacobian(const RobotModel& robot, const JointConfig& q);

/// d(world point rigidly attached to `link`)/dq given precomputed poses.
PointJacobian point_jacobian(const RobotModel& robot, const LinkPoses& poses, int link,
                             const Vec3& world_point);

struct IkOptions {
  int max_attempts = 1000;
  int iterations = 200;
  double damping = 1e-2;
  double position_tolerance = 1e-3;
  double orientation_tolerance = 1e-2;
  /// Used as the first restart when set.
  std::optional<JointConfig> seed;
};

/// Damped least squares with uniform restarts. nullopt means unreachable.
std::optional<JointConfig> ik_solve(const RobotModel& robot, const Pose& target, const Scene& scene,
                                    Rng& rng, const IkOptions& options = {});

/// Robot description file (JSON text, format_version 1).
void write_robot_file(const std::filesystem::path& path, const RobotModel& robot);
RobotModel read_robot_file(const std::filesystem::path& path);

}  // namespace mforge
