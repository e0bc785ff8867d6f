#include "motion_forge/expert_global.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace mforge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Tree {
  std::vector<JointConfig> nodes;
  std::vector<int> parent;

  int nearest(const JointConfig& q) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
      double d = (nodes[i] - q).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  int add(const JointConfig& q, int par) {
    nodes.push_back(q);
    parent.push_back(par);
    return static_cast<int>(nodes.size()) - 1;
  }

  std::vector<JointConfig> branch(int idx) const {
    std::vector<JointConfig> out;
    for (int i = idx; i >= 0; i = parent[i]) out.push_back(nodes[i]);
    return out;  // leaf -> root
  }
};

enum class Extend { trapped, advanced, reached };

Extend extend(Tree& tree, const JointConfig& target, const RobotModel& robot, const Scene& scene, double step,
              double spacing, int& new_index) {
  int near = tree.nearest(target);
  const JointConfig& from = tree.nodes[near];
  JointConfig delta = target - from;
  double d = delta.norm();
  JointConfig to = d <= step ? target : JointConfig(from + delta * (step / d));
  if (!segment_valid(robot, scene, from, to, spacing)) return Extend::trapped;
  new_index = tree.add(to, near);
  return d <= step ? Extend::reached : Extend::advanced;
}

double subpath_length(const std::vector<JointConfig>& p, std::size_t i, std::size_t j) {
  double total = 0.0;
  for (std::size_t k = i + 1; k <= j; ++k) total += (p[k] - p[k - 1]).norm();
  return total;
}

/// Greedy pruning: from each vertex jump to the farthest directly visible one.
std::vector<JointConfig> prune(const std::vector<JointConfig>& path, const RobotModel& robot, const Scene& scene,
                               double spacing) {
  std::vector<JointConfig> out{path.front()};
  std::size_t i = 0;
  while (i + 1 < path.size()) {
    std::size_t j = path.size() - 1;
    while (j > i + 1 && !segment_valid(robot, scene, path[i], path[j], spacing)) --j;
    out.push_back(path[j]);
    i = j;
  }
  return out;
}

/// Rejection-samples the informed set {q : |q-s| + |q-g| < best} and splices a
/// sample in when it shortens the path.
void informed_refine(std::vector<JointConfig>& path, const RobotModel& robot, const Scene& scene, Rng& rng,
                     int samples, double spacing, Clock::time_point t0, double timeout) {
  if (path.size() < 3) return;
  const JointConfig s = path.front(), g = path.back();
  for (int n = 0; n < samples && seconds_since(t0) < timeout; ++n) {
    const double best = path_length(path);
    std::optional<JointConfig> q;
    for (int tries = 0; tries < 200 && !q; ++tries) {
      JointConfig c = robot.sample_uniform(rng);
      if ((c - s).norm() + (c - g).norm() < best) q = c;
    }
    if (!q) return;  // informed set vanishingly small
    if (config_in_collision(robot, *q, scene)) continue;
    std::size_t i = 0;
    while (i < path.size() && !segment_valid(robot, scene, path[i], *q, spacing)) ++i;
    if (i >= path.size() - 1) continue;
    std::size_t j = path.size() - 1;
    while (j > i && !segment_valid(robot, scene, *q, path[j], spacing)) --j;
    if (j <= i) continue;
    double replaced = subpath_length(path, i, j);
    double candidate = (path[i] - *q).norm() + (*q - path[j]).norm();
    if (candidate + 1e-12 >= replaced) continue;
    std::vector<JointConfig> next(path.begin(), path.begin() + i + 1);
    next.push_back(*q);
    next.insert(next.end(), path.begin() + j, path.end());
    path = std::move(next);
  }
}

std::vector<JointConfig> densify(const std::vector<JointConfig>& path, double spacing) {
  std::vector<JointConfig> out{path.front()};
  for (std::size_t i = 1; i < path.size(); ++i) {
    auto seg = interpolate_segment(path[i - 1], path[i], spacing);
    out.insert(out.end(), seg.begin(), seg.end());
  }
  return out;
}

JointConfig tangent_at(const std::vector<JointConfig>& p, std::size_t i) {
  std::size_t a = i == 0 ? 0 : i - 1;
  std::size_t b = std::min(i + 1, p.size() - 1);
  JointConfig t = p[b] - p[a];
  double n = t.norm();
  return n > 1e-12 ? JointConfig(t / n) : JointConfig::Zero();
}

}  // namespace

std::string_view to_string(PlanStatus s) {
  switch (s) {
    case PlanStatus::success: return "success";
    case PlanStatus::ik_failed: return "ik_failed";
    case PlanStatus::search_timeout: return "search_timeout";
    case PlanStatus::validation_failed: return "validation_failed";
    case PlanStatus::stuck: return "stuck";
  }
  return "unknown";
}

ValidationReport validate_trajectory(const Trajectory& traj, const PlanningProblem& problem,
                                     const RobotModel& robot, const ValidationOptions& options) {
  ValidationReport r;
  r.collision_free = true;
  r.within_limits = true;
  for (const auto& q : traj.configs) {
    if (!robot.within_limits(q)) r.within_limits = false;
    if (r.collision_free && config_in_collision(robot, q, problem.scene)) r.collision_free = false;
  }
  r.max_jerk = max_jerk(traj.configs, traj.dt);
  if (!traj.configs.empty())
    r.divergence = (end_effector_pose(robot, traj.configs.back()).translation - problem.target.translation).norm();
  r.verdict = r.collision_free && r.within_limits && r.max_jerk <= options.jerk_limit &&
              (!options.check_divergence || r.divergence <= options.divergence_limit);
  return r;
}

bool segment_valid(const RobotModel& robot, const Scene& scene, const JointConfig& a, const JointConfig& b,
                   double spacing) {
  if (config_in_collision(robot, a, scene)) return false;
  for (const auto& q : interpolate_segment(a, b, spacing))
    if (config_in_collision(robot, q, scene)) return false;
  return true;
}

std::optional<std::vector<JointConfig>> rrt_connect(const RobotModel& robot, const Scene& scene,
                                                    const JointConfig& start, const JointConfig& goal,
                                                    Rng& rng, double timeout_s, double goal_bias,
                                                    double extend_step, double check_spacing) {
  const auto t0 = Clock::now();
  if (segment_valid(robot, scene, start, goal, check_spacing)) return std::vector<JointConfig>{start, goal};
  Tree a, b;
  a.add(start, -1);
  b.add(goal, -1);
  bool a_is_start = true;
  while (seconds_since(t0) < timeout_s) {
    // Goal bias: aim at the other tree's root.
    JointConfig sample = rng.bernoulli(goal_bias) ? b.nodes.front() : robot.sample_uniform(rng);
    int added = -1;
    if (extend(a, sample, robot, scene, extend_step, check_spacing, added) != Extend::trapped) {
      const JointConfig target = a.nodes[added];
      int reached = -1;
      Extend e = Extend::advanced;
      while (e == Extend::advanced) e = extend(b, target, robot, scene, extend_step, check_spacing, reached);
      if (e == Extend::reached) {
        auto from_a = a.branch(added);    // leaf -> root(a)
        auto from_b = b.branch(reached);  // leaf -> root(b)
        std::reverse(from_a.begin(), from_a.end());
        std::vector<JointConfig> path = from_a;
        path.insert(path.end(), from_b.begin() + 1, from_b.end());
        if (!a_is_start) std::reverse(path.begin(), path.end());
        return path;
      }
    }
    std::swap(a, b);
    a_is_start = !a_is_start;
  }
  return std::nullopt;
}

Trajectory smooth_trajectory(const Trajectory& traj, const Scene& scene, const RobotModel& robot, Rng& rng,
                             const SmoothingOptions& options) {
  Trajectory out = traj;
  if (traj.configs.size() < 2) return out;
  std::vector<JointConfig> path = densify(traj.configs, options.check_spacing);
  const JointConfig first = traj.configs.front(), last = traj.configs.back();
  for (int it = 0; it < options.iterations && path.size() > 2; ++it) {
    std::size_t i = rng.below(path.size());
    std::size_t j = rng.below(path.size());
    if (i > j) std::swap(i, j);
    if (j < i + 2) continue;
    const JointConfig& qa = path[i];
    const JointConfig& qb = path[j];
    const double chord = (qb - qa).norm();
    const double old_len = subpath_length(path, i, j);
    if (chord < 1e-12) continue;
    // Cubic Hermite segment with tangents following the path at both ends.
    const JointConfig ma = tangent_at(path, i) * (chord / 3.0);
    const JointConfig mb = tangent_at(path, j) * (chord / 3.0);
    const int fine = std::max(8, static_cast<int>(std::ceil(4.0 * chord / options.check_spacing)));
    std::vector<JointConfig> curve;
    curve.reserve(fine + 1);
    for (int k = 0; k <= fine; ++k) {
      double s = static_cast<double>(k) / fine, s2 = s * s, s3 = s2 * s;
      curve.push_back((2 * s3 - 3 * s2 + 1) * qa + (s3 - 2 * s2 + s) * ma + (-2 * s3 + 3 * s2) * qb +
                      (s3 - s2) * mb);
    }
    curve.front() = qa;
    curve.back() = qb;
    std::vector<JointConfig> segment = resample_uniform(curve, options.check_spacing, false);
    if (path_length(segment) + 1e-12 >= old_len) continue;
    bool free = true;
    for (std::size_t k = 1; k + 1 < segment.size() && free; ++k)
      free = !config_in_collision(robot, segment[k], scene);
    if (!free) continue;
    std::vector<JointConfig> next(path.begin(), path.begin() + i);
    next.insert(next.end(), segment.begin(), segment.end());
    next.insert(next.end(), path.begin() + j + 1, path.end());
    path = std::move(next);
  }
  path.front() = first;
  path.back() = last;
  out.configs = std::move(path);
  return out;
}

PlanOutcome plan_global(const PlanningProblem& problem, const RobotModel& robot, Rng& rng,
                        const GlobalPlannerOptions& options) {
  if (!(options.timeout > 0.0)) throw std::invalid_argument("plan_global: timeout must be positive");
  const auto t0 = Clock::now();
  PlanOutcome outcome;
  const Scene& scene = problem.scene;

  std::optional<JointConfig> goal = options.goal_config;
  if (!goal) {
    IkOptions ik;
    ik.max_attempts = options.ik_attempts;
    ik.seed = problem.start;
    goal = ik_solve(robot, problem.target, scene, rng, ik);
  }
  if (!goal) {
    outcome.status = PlanStatus::ik_failed;
    return outcome;
  }

  auto path = rrt_connect(robot, scene, problem.start, *goal, rng, options.timeout - seconds_since(t0),
                          options.goal_bias, options.extend_step, options.check_spacing);
  if (!path) {
    outcome.status = PlanStatus::search_timeout;
    return outcome;
  }
  *path = prune(*path, robot, scene, options.check_spacing);
  informed_refine(*path, robot, scene, rng, options.refine_samples, options.check_spacing, t0, options.timeout);

  Trajectory traj;
  traj.configs = *path;
  traj.dt = options.dt;
  traj.provenance = Provenance::global;
  traj = smooth_trajectory(traj, scene, robot, rng, options.smoothing);
  traj.configs = resample_uniform(traj.configs, options.joint_speed * options.dt, false);
  if (traj.configs.size() < 2) traj.configs.push_back(traj.configs.back());
  traj.planning_time = seconds_since(t0);

  outcome.report = validate_trajectory(traj, problem, robot, options.validation);
  outcome.status = outcome.report.verdict ? PlanStatus::success : PlanStatus::validation_failed;
  outcome.trajectory = std::move(traj);
  return outcome;
}

}  // namespace mforge
