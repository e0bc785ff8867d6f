#pragma once

#include "motion_forge/policy.hpp"
#include "motion_forge/scenegen.hpp"
#include "motion_forge/trajectory.hpp"

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mforge {

enum class Termination { target_reached, step_budget };
std::string_view to_string(Termination t);

struct RolloutResult {
  Trajectory trajectory;
  Termination terminated_by = Termination::step_budget;
  double final_pos_err = 0.0;
  double final_ori_err = 0.0;
  bool env_collision = false;
  bool self_collision = false;
  bool joint_violation = false;
  bool in_correct_volume = false;
  double sparc_joint = 0.0;  ///< NaN when the profile is too short or motionless
  double sparc_ee = 0.0;
  double wall_time = 0.0;
  double mean_step_time = 0.0;
};

using SceneFn = std::function<Scene(double t)>;

/// Decides q_{t+1} from the observed scene and q_t.
using Controller = std::function<JointConfig(int step, const Scene& scene, const JointConfig& q, Rng& rng)>;

enum class DynamicSpeed { off, slow, medium, fast };
std::string_view to_string(DynamicSpeed s);
DynamicSpeed dynamic_speed_from_string(std::string_view s);
/// Peak block speed in m/s.
double dynamic_speed_value(DynamicSpeed s);

struct RolloutConfig {
  double dt = 0.08;
  double horizon = 20.0;  ///< s
  double reach_tolerance = 0.01;
  CloudBudget budget;
  /// Renders obstacle points from this camera instead of sampling all surfaces.
  std::optional<CameraConfig> partial_view;
  double cloud_noise = 0.0;  ///< m, Gaussian on every cloud point
  /// Re-observes the scene every step; otherwise the first observation is reused.
  bool dynamic = false;
  std::uint64_t seed = 0;
  int workers = 1;

  int step_budget() const;
};

/// Observation for the neural policy at q.
PolicyInput observe(const Scene& scene, const RobotModel& robot, const JointConfig& q, const Pose& target,
                    const RolloutConfig& config, const std::vector<Vec3>* cached_obstacles, Rng& rng);

RolloutResult rollout(const Controller& controller, const PlanningProblem& problem, const RobotModel& robot,
                      const RolloutConfig& config, const SceneFn& scene_fn);
RolloutResult rollout(const PolicyParams& params, const PlanningProblem& problem, const RobotModel& robot,
                      const RolloutConfig& config, const SceneFn& scene_fn);

Controller neural_controller(const PolicyParams& params, const RobotModel& robot, const Pose& target,
                             const RolloutConfig& config);
/// Steps through a stored trajectory, then holds its final config.
Controller replay_controller(const Trajectory& traj);
/// Moves straight toward `goal` in configuration space at `joint_speed`.
Controller straight_line_controller(const JointConfig& goal, double joint_speed, double dt);
Controller zero_controller();
/// Straight line toward a collision-free IK solution of the target (seeded
/// from the start); holds still when IK fails.
Controller straight_line_baseline(const PlanningProblem& problem, const RobotModel& robot, std::uint64_t seed,
                                  double joint_speed = 0.6, double dt = 0.08);

struct SuccessThresholds {
  double position = 0.01;
  double orientation = 15.0 * 3.14159265358979323846 / 180.0;
};

bool success_check(const RolloutResult& result, const SuccessThresholds& thresholds = {});

/// Geodesic angle between rotations.
double orientation_error(const Mat3& r_final, const Mat3& r_target);

class DegenerateProfile : public std::runtime_error {
 public:
  DegenerateProfile() : std::runtime_error("sparc: speed profile is identically zero") {}
};

struct SparcOptions {
  double max_cutoff = 10.0;  ///< Hz
  double amplitude_threshold = 0.05;
  int pad_level = 4;  ///< FFT length = 2^(ceil(log2 N) + pad_level)
};

/// Spectral arc length of a speed profile sampled at `fs`.
double sparc(const std::vector<double>& speed, double fs, const SparcOptions& options = {});

std::vector<double> joint_speed_profile(const Trajectory& traj);
std::vector<double> ee_speed_profile(const Trajectory& traj, const RobotModel& robot);

/// 64 points per link on its collision-sphere surfaces.
std::vector<SurfaceAnchor> dense_link_points(const RobotModel& robot, int per_link = 64);

struct CollisionFlags {
  bool env = false;
  bool self = false;
};

/// A configuration counts only when both checkers agree.
CollisionFlags collision_ensemble(const Trajectory& traj, const PlanningProblem& problem, const RobotModel& robot,
                                  const SceneFn& scene_fn = {});

/// Periodic block moving in x and y with incommensurate periods near the
/// problem's path; speed off returns the static scene.
SceneFn dynamic_block_scene(const PlanningProblem& problem, const RobotModel& robot, DynamicSpeed speed);

struct MetricsReport {
  int problems = 0;
  int successes = 0;
  double success_rate = 0.0;
  double env_collision_rate = 0.0;
  double self_collision_rate = 0.0;
  double smooth_rate = 0.0;  ///< over attempted rollouts with a defined SPARC
  int smooth_evaluated = 0;
  double pos_err_p50 = 0.0;
  double pos_err_p90 = 0.0;
  double ori_err_p50 = 0.0;
  double ori_err_p90 = 0.0;
  double time_mean = 0.0;  ///< over successful rollouts
  double time_std = 0.0;
  int target_reached = 0;

  std::string to_json() const;
  std::string to_table(const std::string& title = "policy") const;
};

MetricsReport summarize(const std::vector<RolloutResult>& results);

using ControllerFactory = std::function<Controller(const PlanningProblem& problem)>;

/// Rollouts across `config.workers` threads; results are returned in problem order.
std::vector<RolloutResult> run_rollouts(const ControllerFactory& factory, const std::vector<PlanningProblem>& problems,
                                        const RobotModel& robot, const RolloutConfig& config,
                                        DynamicSpeed dynamic = DynamicSpeed::off);

MetricsReport evaluate_dataset(const PolicyParams& params, const std::vector<PlanningProblem>& problems,
                               const RobotModel& robot, const RolloutConfig& config,
                               DynamicSpeed dynamic = DynamicSpeed::off,
                               std::vector<RolloutResult>* results = nullptr);

}  // namespace mforge
