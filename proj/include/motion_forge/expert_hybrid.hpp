#pragma once

#include "motion_forge/expert_global.hpp"
#include "motion_forge/kinematics.hpp"
#include "motion_forge/scenegen.hpp"
#include "motion_forge/trajectory.hpp"

#include <optional>
#include <vector>

namespace mforge {

/// Dense end-effector waypoints; neighbors at most `kEePathSpacing` apart.
struct EePath {
  std::vector<Pose> poses;
};

inline constexpr double kEePathSpacing = 0.02;

struct EePathOptions {
  double timeout = 2.0;
  double goal_bias = 0.1;
  double extend_step = 0.08;          ///< m of translation per extension
  double rotation_weight = 0.15;      ///< m per rad in the pose metric
  double check_translation = 0.01;
  double check_rotation = 0.05;
  Vec3 bounds_lo = Vec3(-0.6, -1.0, 0.0);
  Vec3 bounds_hi = Vec3(1.2, 1.0, 1.3);
};

/// True when the floating gripper (end-effector spheres) at `pose` clears the scene.
bool gripper_free(const RobotModel& robot, const Scene& scene, const Pose& pose);

/// Interpolates translation linearly and rotation geodesically.
Pose interpolate_pose(const Pose& a, const Pose& b, double s);

/// Floating-gripper search from `start` to `goal` in SE(3); nullopt on timeout.
std::optional<EePath> plan_ee_path(const RobotModel& robot, const Scene& scene, const Pose& start,
                                   const Pose& goal, Rng& rng, const EePathOptions& options = {});
std::optional<EePath> plan_ee_path(const PlanningProblem& problem, const RobotModel& robot, Rng& rng,
                                   const EePathOptions& options = {});

struct ControllerState {
  JointConfig q = JointConfig::Zero();
  Joints q_dot = Joints::Zero();
  int waypoint_index = 0;
};

struct FabricGains {
  double stiffness = 60.0;          ///< s^-2
  double damping = 2.0 * 7.745966692414834;  ///< 2 sqrt(stiffness)
  double repulsion_gain = 10.0;     ///< m/s^2 at contact
  /// The floating-gripper search already clears the gripper, so by default
  /// only the arm spheres are repelled.
  bool repel_gripper = false;
  double repulsion_range = 0.10;    ///< m
  double limit_gain = 20.0;
  double limit_margin = 0.15;       ///< rad
  double pinv_damping = 0.05;
  double orientation_weight = 1.0;  ///< relative pull of the rotation error
};

/// Acceleration terms, exposed separately for inspection.
struct FabricTerms {
  Joints attractor = Joints::Zero();
  Joints repulsion = Joints::Zero();
  Joints barrier = Joints::Zero();
  Joints damping = Joints::Zero();
  Joints total() const { return attractor + repulsion + barrier + damping; }
};

FabricTerms fabric_terms(const ControllerState& state, const Pose& target, const Scene& scene,
                         const RobotModel& robot, const FabricGains& gains = {});

/// One semi-implicit Euler step of the attractor/repulsor/barrier/damping controller.
ControllerState fabric_step(const ControllerState& state, const Pose& target, const Scene& scene,
                            const RobotModel& robot, double dt, const FabricGains& gains = {});

struct FollowOptions {
  double controller_dt = 0.01;
  double reach_radius = 0.03;
  int stall_steps = 300;
  int settle_steps = 200;
  double settle_tolerance = 0.002;
  double dt = 0.08;
  double joint_speed = 0.6;
  double knot_spacing = 0.01;  ///< rad between spline knots taken from the visited configs
  FabricGains gains;
  ValidationOptions validation;
};

struct FollowResult {
  PlanStatus status = PlanStatus::stuck;
  std::optional<Trajectory> trajectory;
  std::vector<JointConfig> visited;  ///< controller configs before retiming, thinned to knots
  std::vector<JointConfig> controller;  ///< every controller step, at controller_dt
};

/// Tracks the waypoints with the controller, then retimes to constant joint speed.
FollowResult follow_and_retime(const EePath& path, const JointConfig& start, const Scene& scene,
                               const RobotModel& robot, const FollowOptions& options = {});

/// Problem whose target is the end-effector pose of the final config.
PlanningProblem hindsight_goal_revision(const Trajectory& traj, const PlanningProblem& problem,
                                        const RobotModel& robot);

struct HybridPlannerOptions {
  EePathOptions search;
  FollowOptions follow;
  /// Final end effector must lie in the target's goal volume.
  bool require_target_volume = true;
  /// At the first config within approach_radius of the revised target the
  /// gripper must already be within approach_orientation of its final rotation.
  double approach_radius = 0.01;
  double approach_orientation = 15.0 * 3.14159265358979323846 / 180.0;
};

struct HybridOutcome {
  PlanOutcome plan;
  std::optional<PlanningProblem> revised;
  double pre_revision_divergence = 0.0;
};

HybridOutcome plan_hybrid(const PlanningProblem& problem, const RobotModel& robot, Rng& rng,
                          const HybridPlannerOptions& options = {});

}  // namespace mforge
