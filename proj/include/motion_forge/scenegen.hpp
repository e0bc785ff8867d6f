#pragma once

#include "motion_forge/kinematics.hpp"
#include "motion_forge/random.hpp"
#include "motion_forge/scene.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace mforge {

struct PlanningProblem {
  Scene scene;
  JointConfig start = JointConfig::Zero();
  Pose target;
  std::string target_volume;  ///< label of the goal volume holding the target
  std::uint64_t problem_id = 0;
};

class GenerationExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SceneGenOptions {
  int max_rounds = 100;
  double dresser_split_decay = 0.8;
  double min_drawer_extent = 0.12;
  double cubby_merge_probability = 0.5;
};

struct DrawerSplitRecord {
  int depth = 0;
  bool split = false;
};

/// Side information about a generated scene, for distribution checks.
struct GenerationInfo {
  int rounds = 0;
  int object_count = 0;               ///< tabletop
  double table_height = 0.0;          ///< tabletop
  double wall_thickness = 0.0;        ///< cubby
  double yaw = 0.0;                   ///< cubby, dresser
  bool merged = false;                ///< cubby
  std::vector<DrawerSplitRecord> drawer_splits;  ///< dresser, every cell visited
  int drawer_count = 0;
};

/// Pure function of (kind, rng state). Throws GenerationExhausted.
Scene generate_scene(EnvKind kind, Rng& rng, const SceneGenOptions& options = {},
                     GenerationInfo* info = nullptr);

struct ProblemSamplingOptions {
  int max_attempts = 60;
  int ik_attempts = 60;
  double neutral_probability = 0.5;
  double neutral_noise = 0.3;       ///< half-width of the uniform perturbation, rad
  double min_separation = 0.15;     ///< start/target end-effector distance, m
  double cone_half_angle = 0.5235987755982988;  ///< 30 degrees
  double max_reach = 0.82;          ///< from the shoulder, m
};

/// Nominal approach direction (end-effector z-axis) for targets in `scene`'s
/// volume at `label`.
Vec3 nominal_target_axis(const Scene& scene, const std::string& label);

/// nullopt when the attempt budget is exhausted (no valid pair).
std::optional<PlanningProblem> sample_problem(const Scene& scene, const RobotModel& robot, Rng& rng,
                                              const ProblemSamplingOptions& options = {});

}  // namespace mforge
