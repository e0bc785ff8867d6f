#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "motion_forge/dataset.hpp"
#include "motion_forge/eval_metrics.hpp"
#include "motion_forge/expert_hybrid.hpp"
#include "support.hpp"

using namespace mforge;

namespace {

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  Vec3 ab = b - a;
  double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

Pose offset_pose(const Pose& p, const Vec3& d) {
  Pose q = p;
  q.translation += d;
  return q;
}

}  // namespace

TEST_CASE("free-space search returns the straight segment") {
  RobotModel robot = RobotModel::panda_like();
  Scene s = testing::empty_scene();
  Pose a = end_effector_pose(robot, robot.neutral);
  Pose b = offset_pose(a, Vec3(0.1, 0.3, -0.2));
  b.rotation = rot_z(0.5) * a.rotation;
  Rng rng(1);
  auto path = plan_ee_path(robot, s, a, b, rng);
  REQUIRE(path);
  double hausdorff = 0.0;
  for (const auto& p : path->poses)
    hausdorff = std::max(hausdorff, point_segment_distance(p.translation, a.translation, b.translation));
  for (int k = 0; k <= 100; ++k) {
    Vec3 x = a.translation + (k / 100.0) * (b.translation - a.translation);
    double d = 1e9;
    for (std::size_t i = 1; i < path->poses.size(); ++i)
      d = std::min(d, point_segment_distance(x, path->poses[i - 1].translation, path->poses[i].translation));
    hausdorff = std::max(hausdorff, d);
  }
  CHECK(hausdorff <= 0.01);
  CHECK((path->poses.front().translation - a.translation).norm() < 1e-12);
  CHECK((path->poses.back().translation - b.translation).norm() < 1e-12);
}

TEST_CASE("search cannot pass a gripper through a too-small opening") {
  RobotModel robot = RobotModel::panda_like();
  Scene s = testing::empty_scene();
  Pose start = end_effector_pose(robot, robot.neutral);
  Pose goal = offset_pose(start, Vec3(0.25, 0.0, -0.15));
  const Vec3 c = goal.translation;
  const double r = 0.18, t = 0.01, hole = 0.02;
  for (int axis = 0; axis < 3; ++axis) {
    for (double sign : {-1.0, 1.0}) {
      if (axis == 2 && sign > 0) {
        // Top wall made of four strips around a 2 cm hole.
        for (int k = 0; k < 4; ++k) {
          Pose strip;
          strip.translation = c + Vec3(0, 0, r);
          Vec3 half(r + t, r + t, t);
          int along = k / 2;
          double side = (k % 2) ? 1.0 : -1.0;
          double w = 0.5 * (r + t - hole / 2);
          strip.translation[along] += side * (hole / 2 + w);
          half[along] = w;
          s.primitives.push_back(Primitive::box(strip, half));
        }
        continue;
      }
      Pose wall;
      wall.translation = c;
      wall.translation[axis] += sign * r;
      Vec3 half = Vec3::Constant(r + t);
      half[axis] = t;
      s.primitives.push_back(Primitive::box(wall, half));
    }
  }
  REQUIRE(gripper_free(robot, s, goal));
  EePathOptions opt;
  opt.timeout = 0.5;
  Rng rng(2);
  CHECK_FALSE(plan_ee_path(robot, s, start, goal, rng, opt));
}

TEST_CASE("densified paths are collision free and finely spaced") {
  RobotModel robot = RobotModel::panda_like();
  int checked = 0;
  for (EnvKind kind : {EnvKind::tabletop, EnvKind::cubby, EnvKind::dresser}) {
    for (std::uint64_t id = 0; id < 5; ++id) {
      PlanningProblem p = generate_problem(kind, 3, id, robot);
      Rng rng(id);
      auto path = plan_ee_path(p, robot, rng);
      if (!path) continue;
      ++checked;
      for (std::size_t i = 0; i < path->poses.size(); ++i) {
        CHECK(gripper_free(robot, p.scene, path->poses[i]));
        if (i) CHECK((path->poses[i].translation - path->poses[i - 1].translation).norm() <= kEePathSpacing + 1e-12);
      }
    }
  }
  CHECK(checked >= 10);
}

TEST_CASE("controller is at rest at its target") {
  RobotModel robot = RobotModel::panda_like();
  Scene s = testing::empty_scene();
  ControllerState st;
  st.q = robot.neutral;
  Pose target = end_effector_pose(robot, robot.neutral);
  FabricTerms terms = fabric_terms(st, target, s, robot);
  CHECK(terms.total().norm() <= 1e-9);
  ControllerState next = fabric_step(st, target, s, robot, 0.01);
  CHECK((next.q - st.q).norm() <= 1e-9);
}

TEST_CASE("repulsion pushes away from an obstacle on the way") {
  RobotModel robot = RobotModel::panda_like();
  ControllerState st;
  st.q = robot.neutral;
  LinkPoses poses = forward_kinematics(robot, st.q);
  Pose ee = poses[kEndEffectorLink];
  Pose target = offset_pose(ee, Vec3(0.3, 0, 0));
  Scene s = testing::empty_scene();
  Pose box;
  box.translation = ee.translation + Vec3(0.15, 0, 0);
  s.primitives.push_back(Primitive::box(box, Vec3(0.02, 0.1, 0.1)));
  FabricGains g;
  g.repel_gripper = true;
  FabricTerms terms = fabric_terms(st, target, s, robot, g);
  REQUIRE(terms.repulsion.norm() > 0);
  double best = 1e9;
  Vec3 center, grad;
  int link = 0;
  for (const auto& sp : robot.spheres) {
    Vec3 c = poses[sp.link].apply(sp.center);
    double gap = s.distance(c) - sp.radius;
    if (gap < best) {
      best = gap;
      center = c;
      link = sp.link;
      grad = s.primitives[s.sdf(c).primitive].sdf_gradient(c);
    }
  }
  Vec3 accel = point_jacobian(robot, poses, link, center) * terms.repulsion;
  CHECK(accel.dot(grad) > 0);
  CHECK(terms.attractor.norm() > 0);
}

TEST_CASE("end effector error decreases steadily in free space") {
  RobotModel robot = RobotModel::panda_like();
  Scene s = testing::empty_scene();
  JointConfig goal = robot.neutral;
  goal[0] += 0.3;
  goal[3] += 0.2;
  Pose target = end_effector_pose(robot, goal);
  ControllerState st;
  st.q = robot.neutral;
  double prev = (end_effector_pose(robot, st.q).translation - target.translation).norm();
  for (int k = 0; k < 50; ++k) {
    st = fabric_step(st, target, s, robot, 0.01);
    double err = (end_effector_pose(robot, st.q).translation - target.translation).norm();
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("controller steps are deterministic and respect limits") {
  RobotModel robot = RobotModel::panda_like();
  Rng rng(4);
  Scene s = generate_scene(EnvKind::cubby, rng);
  ControllerState st;
  st.q = robot.neutral;
  st.q_dot = Joints::Constant(0.3);
  Pose target = offset_pose(end_effector_pose(robot, robot.neutral), Vec3(0.2, -0.1, 0));
  ControllerState a = fabric_step(st, target, s, robot, 0.01), b = fabric_step(st, target, s, robot, 0.01);
  CHECK(a.q == b.q);
  CHECK(a.q_dot == b.q_dot);
  ControllerState edge;
  edge.q = robot.upper();
  edge.q_dot = Joints::Constant(5.0);
  ControllerState out = fabric_step(edge, target, s, robot, 0.01);
  CHECK(robot.within_limits(out.q));
}

TEST_CASE("retimed straight path moves at constant joint speed") {
  RobotModel robot = RobotModel::panda_like();
  Scene s = testing::empty_scene();
  Pose a = end_effector_pose(robot, robot.neutral);
  Pose b = offset_pose(a, Vec3(0.0, 0.3, 0.0));
  Rng rng(5);
  auto path = plan_ee_path(robot, s, a, b, rng);
  REQUIRE(path);
  FollowResult r = follow_and_retime(*path, robot.neutral, s, robot);
  REQUIRE(r.status == PlanStatus::success);
  const auto& c = r.trajectory->configs;
  std::vector<double> steps;
  for (std::size_t i = 1; i + 1 < c.size(); ++i) steps.push_back((c[i] - c[i - 1]).norm());
  REQUIRE(steps.size() > 3);
  double mean = std::accumulate(steps.begin(), steps.end(), 0.0) / steps.size();
  double var = 0.0;
  for (double x : steps) var += (x - mean) * (x - mean);
  CHECK(std::sqrt(var / steps.size()) / mean <= 0.05);

  // Every resampled config lies on the spline through the knots.
  CubicSpline spline(r.visited);
  const int n = 4000;
  for (const auto& q : c) {
    double best = 1e9, at = 0.0;
    for (int k = 0; k <= n; ++k) {
      double t = spline.length_parameter() * k / n;
      double d = (spline(t) - q).norm();
      if (d < best) best = d, at = t;
    }
    double lo = std::max(0.0, at - spline.length_parameter() / n), hi = std::min(spline.length_parameter(), at + spline.length_parameter() / n);
    for (int it = 0; it < 100; ++it) {
      double m1 = lo + (hi - lo) / 3, m2 = hi - (hi - lo) / 3;
      if ((spline(m1) - q).norm() < (spline(m2) - q).norm()) hi = m2;
      else lo = m1;
    }
    CHECK((spline(0.5 * (lo + hi)) - q).norm() <= 1e-6);
  }
}

TEST_CASE("unreachable waypoint leaves the controller stuck") {
  RobotModel robot = RobotModel::panda_like();
  Scene s = testing::empty_scene();
  Pose a = end_effector_pose(robot, robot.neutral);
  EePath path;
  path.poses = {a, offset_pose(a, Vec3(0.02, 0, 0)), offset_pose(a, Vec3(2.0, 0, 0))};
  FollowResult r = follow_and_retime(path, robot.neutral, s, robot);
  CHECK(r.status == PlanStatus::stuck);
  CHECK_FALSE(r.trajectory);
}

TEST_CASE("hindsight goal revision zeroes divergence and is idempotent") {
  RobotModel robot = RobotModel::panda_like();
  PlanningProblem p = generate_problem(EnvKind::tabletop, 9, 1, robot);
  Rng rng(6);
  PlanOutcome g = plan_global(p, robot, rng);
  REQUIRE(g.ok());
  Trajectory t = *g.trajectory;
  // Drop configs from the end until the final pose is about 4 cm short.
  while (t.configs.size() > 2 &&
         (end_effector_pose(robot, t.configs.back()).translation - p.target.translation).norm() < 0.04)
    t.configs.pop_back();
  ValidationOptions no_div;
  double before = validate_trajectory(t, p, robot).divergence;
  CHECK(before >= 0.04);
  CHECK(before < 0.06);
  PlanningProblem rev = hindsight_goal_revision(t, p, robot);
  CHECK(validate_trajectory(t, rev, robot).divergence == 0.0);
  PlanningProblem again = hindsight_goal_revision(t, rev, robot);
  CHECK(again.target.matrix() == rev.target.matrix());
  CHECK(rev.start == p.start);
}

TEST_CASE("hybrid demonstrations validate after revision and are smoother once retimed") {
  RobotModel robot = RobotModel::panda_like();
  int emitted = 0, smoother = 0, compared = 0;
  for (std::uint64_t id = 0; emitted < 60 && id < 200; ++id) {
    EnvKind kind = static_cast<EnvKind>(id % 3);
    PlanningProblem p = generate_problem(kind, 10, id, robot);
    Rng rng = problem_stream(10, id, 4);
    HybridOutcome out = plan_hybrid(p, robot, rng);
    if (!out.plan.ok()) continue;
    ++emitted;
    const Trajectory& t = *out.plan.trajectory;
    ValidationReport r = validate_trajectory(t, *out.revised, robot);
    CHECK(r.verdict);
    CHECK(r.divergence == 0.0);
    CHECK(t.provenance == Provenance::hybrid);
    CHECK(out.revised->target.matrix() == end_effector_pose(robot, t.configs.back()).matrix());
    CHECK(out.pre_revision_divergence >= 0.0);
  }
  CHECK(emitted >= 40);

  for (std::uint64_t id = 0; compared < 200 && id < 600; ++id) {
    PlanningProblem p = generate_problem(EnvKind::tabletop, 12, id, robot);
    Rng rng = problem_stream(12, id, 4);
    auto path = plan_ee_path(p, robot, rng);
    if (!path) continue;
    FollowResult f = follow_and_retime(*path, p.start, p.scene, robot);
    if (f.status != PlanStatus::success || f.visited.size() < 8) continue;
    Trajectory raw;
    raw.configs = f.controller;
    raw.dt = FollowOptions{}.controller_dt;
    double before = sparc(joint_speed_profile(raw), 1.0 / raw.dt);
    double after = sparc(joint_speed_profile(*f.trajectory), 1.0 / f.trajectory->dt);
    ++compared;
    smoother += after < before;
  }
  REQUIRE(compared >= 100);
  CHECK(smoother >= 0.9 * compared);
}
