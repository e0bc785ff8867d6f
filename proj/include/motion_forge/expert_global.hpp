#pragma once

#include "motion_forge/kinematics.hpp"
#include "motion_forge/random.hpp"
#include "motion_forge/scenegen.hpp"
#include "motion_forge/trajectory.hpp"

#include <optional>
#include <string_view>

namespace mforge {

struct ValidationReport {
  bool collision_free = false;
  bool within_limits = false;
  double max_jerk = 0.0;    ///< rad/s^3
  double divergence = 0.0;  ///< m
  bool verdict = false;
};

struct ValidationOptions {
  double jerk_limit = 8500.0;
  double divergence_limit = 0.05;
  /// When false the divergence clause is left out of the verdict.
  bool check_divergence = true;
};

ValidationReport validate_trajectory(const Trajectory& traj, const PlanningProblem& problem,
                                     const RobotModel& robot, const ValidationOptions& options = {});

enum class PlanStatus { success, ik_failed, search_timeout, validation_failed, stuck };
std::string_view to_string(PlanStatus s);

struct PlanOutcome {
  PlanStatus status = PlanStatus::search_timeout;
  std::optional<Trajectory> trajectory;
  ValidationReport report;

  bool ok() const { return status == PlanStatus::success; }
};

struct SmoothingOptions {
  int iterations = 100;
  double check_spacing = 0.01;  ///< rad of joint-space arc between collision checks
};

struct GlobalPlannerOptions {
  double timeout = 20.0;  ///< s, covers IK + search + refinement
  int ik_attempts = 1000;
  double goal_bias = 0.1;
  double extend_step = 0.2;
  double check_spacing = 0.01;
  int refine_samples = 64;  ///< informed-set samples after the first solution
  SmoothingOptions smoothing;
  double dt = 0.08;
  double joint_speed = 0.6;  ///< rad/s along the retimed path
  ValidationOptions validation;
  /// Skips IK when provided.
  std::optional<JointConfig> goal_config;
};

/// True when every point of the straight segment is collision free.
bool segment_valid(const RobotModel& robot, const Scene& scene, const JointConfig& a, const JointConfig& b,
                   double spacing);

/// Bidirectional tree search (with goal bias) in configuration space.
/// Returns a waypoint path from start to goal, or nullopt on timeout.
std::optional<std::vector<JointConfig>> rrt_connect(const RobotModel& robot, const Scene& scene,
                                                    const JointConfig& start, const JointConfig& goal,
                                                    Rng& rng, double timeout_s, double goal_bias,
                                                    double extend_step, double check_spacing);

/// Random cubic-segment shortcutting with discrete collision checks.
/// Endpoints are preserved exactly; path length never increases.
Trajectory smooth_trajectory(const Trajectory& traj, const Scene& scene, const RobotModel& robot, Rng& rng,
                             const SmoothingOptions& options = {});

PlanOutcome plan_global(const PlanningProblem& problem, const RobotModel& robot, Rng& rng,
                        const GlobalPlannerOptions& options = {});

}  // namespace mforge
