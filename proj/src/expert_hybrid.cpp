#include "motion_forge/expert_hybrid.hpp"

#include "motion_forge/scene.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

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

double pose_distance(const Pose& a, const Pose& b, double w) {
  return (a.translation - b.translation).norm() + w * rotation_angle_between(a.rotation, b.rotation);
}

Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

struct PoseTree {
  std::vector<Pose> nodes;
  std::vector<int> parent;

  int nearest(const Pose& p, double w) const {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i) {
      double d = pose_distance(nodes[i], p, w);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  int add(const Pose& p, int par) {
    nodes.push_back(p);
    parent.push_back(par);
    return static_cast<int>(nodes.size()) - 1;
  }

  std::vector<Pose> path_to_root(int i) const {
    std::vector<Pose> out;
    for (; i >= 0; i = parent[i]) out.push_back(nodes[i]);
    return out;
  }
};

bool ee_segment_free(const RobotModel& robot, const Scene& scene, const Pose& a, const Pose& b,
                     const EePathOptions& o) {
  double dt = (b.translation - a.translation).norm() / o.check_translation;
  double dr = rotation_angle_between(a.rotation, b.rotation) / o.check_rotation;
  int n = std::max(1, static_cast<int>(std::ceil(std::max(dt, dr))));
  for (int i = 1; i <= n; ++i) {
    if (!gripper_free(robot, scene, interpolate_pose(a, b, static_cast<double>(i) / n))) return false;
  }
  return true;
}

enum class Extend { trapped, advanced, reached };

Extend extend(PoseTree& tree, const Pose& target, const RobotModel& robot, const Scene& scene,
              const EePathOptions& o, int& new_index) {
  int near = tree.nearest(target, o.rotation_weight);
  const Pose& from = tree.nodes[near];
  double d = pose_distance(from, target, o.rotation_weight);
  Pose to = target;
  Extend result = Extend::reached;
  if (d > o.extend_step) {
    to = interpolate_pose(from, target, o.extend_step / d);
    result = Extend::advanced;
  }
  if (!ee_segment_free(robot, scene, from, to, o)) return Extend::trapped;
  new_index = tree.add(to, near);
  return result;
}

Extend connect(PoseTree& tree, const Pose& target, const RobotModel& robot, const Scene& scene,
               const EePathOptions& o, int& new_index) {
  Extend r;
  do {
    r = extend(tree, target, robot, scene, o, new_index);
  } while (r == Extend::advanced);
  return r;
}

std::vector<Pose> prune(const std::vector<Pose>& path, const RobotModel& robot, const Scene& scene,
                        const EePathOptions& o) {
  std::vector<Pose> out{path.front()};
  std::size_t i = 0;
  while (i + 1 < path.size()) {
    std::size_t j = path.size() - 1;
    while (j > i + 1 && !ee_segment_free(robot, scene, path[i], path[j], o)) --j;
    out.push_back(path[j]);
    i = j;
  }
  return out;
}

EePath densify(const std::vector<Pose>& waypoints, double rotation_weight) {
  EePath path;
  path.poses.push_back(waypoints.front());
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const Pose& a = waypoints[i - 1];
    const Pose& b = waypoints[i];
    double dt = (b.translation - a.translation).norm();
    double dr = rotation_weight * rotation_angle_between(a.rotation, b.rotation);
    int n = std::max(1, static_cast<int>(std::ceil(std::max(dt, dr) / kEePathSpacing - 1e-12)));
    for (int k = 1; k <= n; ++k) path.poses.push_back(interpolate_pose(a, b, static_cast<double>(k) / n));
  }
  return path;
}

Eigen::Matrix<double, 6, 1> pose_error(const Pose& current, const Pose& target) {
  Eigen::Matrix<double, 6, 1> e;
  e.head<3>() = target.translation - current.translation;
  e.tail<3>() = rotation_log(target.rotation * current.rotation.transpose());
  return e;
}

Vec3 scene_gradient(const Scene& scene, const Vec3& p, int primitive) {
  return scene.primitives[primitive].sdf_gradient(p);
}

}  // namespace

bool gripper_free(const RobotModel& robot, const Scene& scene, const Pose& pose) {
  for (const auto& s : robot.gripper_spheres()) {
    if (scene.distance(pose.apply(s.center)) < s.radius) return false;
  }
  return true;
}

Pose interpolate_pose(const Pose& a, const Pose& b, double s) {
  Pose p;
  p.translation = (1.0 - s) * a.translation + s * b.translation;
  p.rotation = rotation_slerp(a.rotation, b.rotation, s);
  return p;
}

std::optional<EePath> plan_ee_path(const RobotModel& robot, const Scene& scene, const Pose& start,
                                   const Pose& goal, Rng& rng, const EePathOptions& o) {
  auto t0 = Clock::now();
  if (!gripper_free(robot, scene, start) || !gripper_free(robot, scene, goal)) return std::nullopt;
  std::vector<Pose> raw;
  if (ee_segment_free(robot, scene, start, goal, o)) {
    raw = {start, goal};
  } else {
    PoseTree ta, tb;
    ta.add(start, -1);
    tb.add(goal, -1);
    bool a_is_start = true;
    bool found = false;
    while (!found && seconds_since(t0) < o.timeout) {
      Pose sample;
      if (rng.bernoulli(o.goal_bias)) {
        sample = tb.nodes.front();
      } else {
        for (int k = 0; k < 3; ++k) sample.translation[k] = rng.uniform(o.bounds_lo[k], o.bounds_hi[k]);
        sample.rotation = random_rotation(rng);
      }
      int ia = -1;
      if (extend(ta, sample, robot, scene, o, ia) != Extend::trapped) {
        int ib = -1;
        if (connect(tb, ta.nodes[ia], robot, scene, o, ib) == Extend::reached) {
          auto pa = ta.path_to_root(ia);
          auto pb = tb.path_to_root(ib);
          std::reverse(pa.begin(), pa.end());
          pa.insert(pa.end(), pb.begin() + 1, pb.end());
          if (!a_is_start) std::reverse(pa.begin(), pa.end());
          raw = std::move(pa);
          found = true;
        }
      }
      std::swap(ta, tb);
      a_is_start = !a_is_start;
    }
    if (!found) return std::nullopt;
    raw = prune(raw, robot, scene, o);
  }
  return densify(raw, o.rotation_weight);
}

std::optional<EePath> plan_ee_path(const PlanningProblem& problem, const RobotModel& robot, Rng& rng,
                                   const EePathOptions& options) {
  return plan_ee_path(robot, problem.scene, end_effector_pose(robot, problem.start), problem.target, rng,
                      options);
}

FabricTerms fabric_terms(const ControllerState& state, const Pose& target, const Scene& scene,
                         const RobotModel& robot, const FabricGains& g) {
  FabricTerms t;
  LinkPoses poses = forward_kinematics(robot, state.q);
  Jacobian j = jacobian(robot, state.q);
  auto e = pose_error(poses[kEndEffectorLink], target);
  e.tail<3>() *= g.orientation_weight;
  Eigen::Matrix<double, 6, 6> jjt = j * j.transpose();
  jjt.diagonal().array() += g.pinv_damping * g.pinv_damping;
  t.attractor = j.transpose() * jjt.ldlt().solve(g.stiffness * e);

  for (const auto& s : robot.spheres) {
    if (s.link == 0 || (s.link == kEndEffectorLink && !g.repel_gripper)) continue;
    Vec3 c = poses[s.link].apply(s.center);
    SdfSample d = scene.sdf(c);
    double gap = d.distance - s.radius;
    if (d.primitive < 0 || gap >= g.repulsion_range) continue;
    double x = (g.repulsion_range - std::max(gap, 0.0)) / g.repulsion_range;
    Vec3 force = g.repulsion_gain * x * x * x * scene_gradient(scene, c, d.primitive);
    t.repulsion += point_jacobian(robot, poses, s.link, c).transpose() * force;
  }

  for (int i = 0; i < kDof; ++i) {
    double lo = state.q[i] - robot.joints[i].lower;
    double hi = robot.joints[i].upper - state.q[i];
    if (lo < g.limit_margin) {
      double x = (g.limit_margin - lo) / g.limit_margin;
      t.barrier[i] += g.limit_gain * x * x;
    }
    if (hi < g.limit_margin) {
      double x = (g.limit_margin - hi) / g.limit_margin;
      t.barrier[i] -= g.limit_gain * x * x;
    }
  }
  t.damping = -g.damping * state.q_dot;
  return t;
}

ControllerState fabric_step(const ControllerState& state, const Pose& target, const Scene& scene,
                            const RobotModel& robot, double dt, const FabricGains& gains) {
  Joints acc = fabric_terms(state, target, scene, robot, gains).total();
  ControllerState next = state;
  next.q_dot = state.q_dot + dt * acc;
  next.q = state.q + dt * next.q_dot;
  for (int i = 0; i < kDof; ++i) {
    if (next.q[i] < robot.joints[i].lower || next.q[i] > robot.joints[i].upper) {
      next.q[i] = std::clamp(next.q[i], robot.joints[i].lower, robot.joints[i].upper);
      next.q_dot[i] = 0.0;
    }
  }
  return next;
}

FollowResult follow_and_retime(const EePath& path, const JointConfig& start, const Scene& scene,
                               const RobotModel& robot, const FollowOptions& o) {
  FollowResult out;
  if (path.poses.empty()) return out;
  ControllerState state;
  state.q = start;
  std::vector<JointConfig> visited{start};
  const int last = static_cast<int>(path.poses.size()) - 1;
  int since_progress = 0;
  int settle = 0;
  bool done = false;
  while (!done) {
    state = fabric_step(state, path.poses[state.waypoint_index], scene, robot, o.controller_dt, o.gains);
    visited.push_back(state.q);
    Vec3 ee = end_effector_pose(robot, state.q).translation;
    double err = (ee - path.poses[state.waypoint_index].translation).norm();
    if (state.waypoint_index < last) {
      ++since_progress;
      while (state.waypoint_index < last &&
             (ee - path.poses[state.waypoint_index].translation).norm() <= o.reach_radius) {
        ++state.waypoint_index;
        since_progress = 0;
      }
      if (since_progress >= o.stall_steps) return out;
    } else if (err <= o.reach_radius) {
      ++settle;
      done = settle >= o.settle_steps ||
             (err <= o.settle_tolerance && state.q_dot.norm() <= 0.05);
    } else if (++since_progress >= o.stall_steps) {
      return out;
    }
  }

  std::vector<JointConfig> knots{visited.front()};
  for (std::size_t i = 1; i + 1 < visited.size(); ++i) {
    if ((visited[i] - knots.back()).norm() >= o.knot_spacing) knots.push_back(visited[i]);
  }
  if ((visited.back() - knots.back()).norm() > 1e-9 || knots.size() == 1) knots.push_back(visited.back());
  out.visited = knots;
  out.controller = visited;

  Trajectory traj;
  traj.provenance = Provenance::hybrid;
  traj.dt = o.dt;
  traj.configs = resample_uniform(knots, o.joint_speed * o.dt, true);
  for (auto& q : traj.configs) q = robot.clamp(q);
  out.trajectory = traj;

  PlanningProblem probe;
  probe.scene = scene;
  probe.start = start;
  probe.target = end_effector_pose(robot, traj.configs.back());
  ValidationOptions vo = o.validation;
  vo.check_divergence = false;
  ValidationReport r = validate_trajectory(traj, probe, robot, vo);
  out.status = r.verdict ? PlanStatus::success : PlanStatus::validation_failed;
  return out;
}

PlanningProblem hindsight_goal_revision(const Trajectory& traj, const PlanningProblem& problem,
                                        const RobotModel& robot) {
  PlanningProblem revised = problem;
  revised.target = end_effector_pose(robot, traj.configs.back());
  return revised;
}

HybridOutcome plan_hybrid(const PlanningProblem& problem, const RobotModel& robot, Rng& rng,
                          const HybridPlannerOptions& options) {
  auto t0 = Clock::now();
  HybridOutcome out;
  auto path = plan_ee_path(problem, robot, rng, options.search);
  if (!path) {
    out.plan.status = PlanStatus::search_timeout;
    return out;
  }
  FollowResult f = follow_and_retime(*path, problem.start, problem.scene, robot, options.follow);
  if (!f.trajectory) {
    out.plan.status = PlanStatus::stuck;
    return out;
  }
  Trajectory traj = std::move(*f.trajectory);
  traj.planning_time = seconds_since(t0);
  out.pre_revision_divergence =
      (end_effector_pose(robot, traj.configs.back()).translation - problem.target.translation).norm();
  PlanningProblem revised = hindsight_goal_revision(traj, problem, robot);
  out.plan.report = validate_trajectory(traj, revised, robot, options.follow.validation);
  bool in_volume = true;
  if (options.require_target_volume && !problem.target_volume.empty()) {
    const GoalVolume* v = problem.scene.find_volume(problem.target_volume);
    in_volume = v && v->contains(revised.target.translation);
  }
  bool aligned = true;
  for (const auto& q : traj.configs) {
    Pose ee = end_effector_pose(robot, q);
    if ((ee.translation - revised.target.translation).norm() > options.approach_radius) continue;
    aligned = rotation_angle_between(ee.rotation, revised.target.rotation) <= options.approach_orientation;
    break;
  }
  out.plan.status =
      out.plan.report.verdict && in_volume && aligned ? PlanStatus::success : PlanStatus::validation_failed;
  out.plan.trajectory = std::move(traj);
  out.revised = std::move(revised);
  return out;
}

}  // namespace mforge
