#include "motion_forge/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mforge {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;
const Vec3 kShoulder(0.0, 0.0, 0.333);

Pose at(const Vec3& t, double yaw = 0.0) { return {rot_z(yaw), t}; }

/// Box given by local min/max corners inside `frame`.
Primitive local_box(const Pose& frame, const Vec3& lo, const Vec3& hi) {
  return Primitive::box(frame * at(0.5 * (lo + hi)), 0.5 * (hi - lo));
}

GoalVolume local_volume(std::string label, const Pose& frame, const Vec3& lo, const Vec3& hi) {
  return {std::move(label), frame * at(0.5 * (lo + hi)), 0.5 * (hi - lo)};
}

bool reachable_point(const Vec3& p, double max_reach) {
  return (p - kShoulder).norm() <= max_reach && std::hypot(p.x(), p.y()) >= 0.25;
}

// ---------------------------------------------------------------- tabletop

struct Footprint {
  Vec3 center;
  double radius;
};

bool build_tabletop(Scene& s, Rng& rng, GenerationInfo& info) {
  s.primitives.push_back(Primitive::floor());
  const double h = rng.uniform(0.0, 0.40);
  info.table_height = h;
  const double x0 = rng.uniform(0.25, 0.45);
  const double x1 = x0 + rng.uniform(0.90, 1.10);
  const double width = rng.uniform(2.05, 2.40);
  const double shift = rng.uniform(-0.2, 0.2);
  const double y0 = shift - width / 2, y1 = shift + width / 2;
  const Pose world;
  s.primitives.push_back(local_box(world, Vec3(x0, y0, -0.02), Vec3(x1, y1, h)));
  s.goal_volumes.push_back(local_volume("table_front", world, Vec3(x0, y0, h), Vec3(x1, y1, h + 0.4)));

  struct Rect {
    double x0, x1, y0, y1;
  };
  std::vector<Rect> tops{{x0, x1, y0, y1}};
  if (rng.bernoulli(0.5)) {
    const double side_w = rng.uniform(0.425, 0.725);
    const double side_d = rng.uniform(0.90, 2.475);
    const double inner = rng.uniform(0.25, 0.40);
    const bool left = rng.bernoulli(0.5);
    double sy0 = left ? inner : -inner - side_w;
    double sy1 = sy0 + side_w;
    double sx1 = x0, sx0 = x0 - side_d;
    // Keep the side table from overlapping the front table's footprint.
    if (left) sy1 = std::min(sy1, y1);
    else sy0 = std::max(sy0, y0);
    s.primitives.push_back(local_box(world, Vec3(sx0, sy0, -0.02), Vec3(sx1, sy1, h)));
    s.goal_volumes.push_back(local_volume("table_side", world, Vec3(sx0, sy0, h), Vec3(sx1, sy1, h + 0.4)));
    tops.push_back({sx0, sx1, sy0, sy1});
  }

  const int count = static_cast<int>(3 + rng.below(13));
  std::vector<Footprint> placed;
  for (int k = 0; k < count; ++k) {
    const bool is_box = rng.bernoulli(0.5);
    const double half_h = 0.5 * rng.uniform(0.05, 0.35);
    Vec3 half;
    double radius;
    if (is_box) {
      half = Vec3(0.5 * rng.uniform(0.05, 0.15), 0.5 * rng.uniform(0.05, 0.15), half_h);
      radius = std::hypot(half.x(), half.y());
    } else {
      radius = rng.uniform(0.05, 0.15);
      half = Vec3(radius, radius, half_h);
    }
    const double yaw = rng.uniform(-kPi, kPi);
    bool ok = false;
    for (int tries = 0; tries < 50 && !ok; ++tries) {
      const Rect& r = tops[rng.below(tops.size())];
      Vec3 c(rng.uniform(r.x0 + radius, r.x1 - radius), rng.uniform(r.y0 + radius, r.y1 - radius), h + half_h);
      double dist = std::hypot(c.x(), c.y());
      if (dist < 0.3 + radius || dist > 0.85) continue;
      ok = std::all_of(placed.begin(), placed.end(), [&](const Footprint& f) {
        return std::hypot(f.center.x() - c.x(), f.center.y() - c.y()) > f.radius + radius + 0.01;
      });
      if (!ok) continue;
      placed.push_back({c, radius});
      if (is_box)
        s.primitives.push_back(Primitive::box(at(c, yaw), half));
      else
        s.primitives.push_back(Primitive::cylinder(at(c), radius, half_h));
    }
  }
  info.object_count = static_cast<int>(placed.size());
  return placed.size() >= 3;
}

// ------------------------------------------------------------------ cubby

bool build_cubby(Scene& s, Rng& rng, const SceneGenOptions& opt, GenerationInfo& info) {
  s.primitives.push_back(Primitive::floor());
  const double W = rng.uniform(1.20, 1.60);
  const double D = rng.uniform(0.20, 0.35);
  const double H = rng.uniform(0.30, 0.60);
  const double t = rng.uniform(0.01, 0.02);
  const double front = rng.uniform(0.45, 0.65);
  const double yc = rng.uniform(-0.15, 0.15);
  const double bottom = rng.uniform(0.10, 0.35);
  const double yaw = rng.uniform(-40.0, 40.0) * kDeg;
  info.wall_thickness = t;
  info.yaw = yaw;
  const Pose frame = at(Vec3(front + D / 2, yc, bottom + H / 2), yaw);
  const double dx = D / 2, wy = W / 2, hz = H / 2;

  s.primitives.push_back(local_box(frame, Vec3(dx - t, -wy, -hz), Vec3(dx, wy, hz)));          // back
  s.primitives.push_back(local_box(frame, Vec3(-dx, -wy, -hz), Vec3(dx, wy, -hz + t)));        // bottom
  s.primitives.push_back(local_box(frame, Vec3(-dx, -wy, hz - t), Vec3(dx, wy, hz)));          // top
  s.primitives.push_back(local_box(frame, Vec3(-dx, -wy, -hz), Vec3(dx, -wy + t, hz)));        // right
  s.primitives.push_back(local_box(frame, Vec3(-dx, wy - t, -hz), Vec3(dx, wy, hz)));          // left

  // Dividers sit within a 20 cm range centered on the fixture midpoint.
  const double ydiv = rng.uniform(-0.10, 0.10);
  const double zdiv = rng.uniform(-0.10, 0.10);
  const double xb = dx - t;
  const double ylo = -wy + t, yhi = wy - t, zlo = -hz + t, zhi = hz - t;
  const Vec3 vlo_lo(-dx, ydiv - t / 2, zlo), vlo_hi(xb, ydiv + t / 2, zdiv - t / 2);
  const Vec3 vup_lo(-dx, ydiv - t / 2, zdiv + t / 2), vup_hi(xb, ydiv + t / 2, zhi);
  const Vec3 hr_lo(-dx, ylo, zdiv - t / 2), hr_hi(xb, ydiv - t / 2, zdiv + t / 2);
  const Vec3 hl_lo(-dx, ydiv + t / 2, zdiv - t / 2), hl_hi(xb, yhi, zdiv + t / 2);

  // Holes indexed by (side: 0 = -y, 1 = +y) x (level: 0 = low, 1 = high).
  auto hole = [&](int side, int level) {
    double y0 = side == 0 ? ylo : ydiv + t / 2, y1 = side == 0 ? ydiv - t / 2 : yhi;
    double z0 = level == 0 ? zlo : zdiv + t / 2, z1 = level == 0 ? zdiv - t / 2 : zhi;
    return std::pair<Vec3, Vec3>{Vec3(-dx, y0, z0), Vec3(xb, y1, z1)};
  };
  auto add_hole = [&](const std::string& label, std::pair<Vec3, Vec3> a, std::pair<Vec3, Vec3> b) {
    s.goal_volumes.push_back(local_volume(label, frame, a.first.cwiseMin(b.first), a.second.cwiseMax(b.second)));
  };

  int removed = -1;
  if (rng.bernoulli(opt.cubby_merge_probability)) removed = static_cast<int>(rng.below(4));
  info.merged = removed >= 0;
  if (removed != 0) s.primitives.push_back(local_box(frame, vlo_lo, vlo_hi));
  if (removed != 1) s.primitives.push_back(local_box(frame, vup_lo, vup_hi));
  if (removed != 2) s.primitives.push_back(local_box(frame, hr_lo, hr_hi));
  if (removed != 3) s.primitives.push_back(local_box(frame, hl_lo, hl_hi));

  switch (removed) {
    case 0:
      add_hole("cubby_low", hole(0, 0), hole(1, 0));
      add_hole("cubby_a_high", hole(0, 1), hole(0, 1));
      add_hole("cubby_b_high", hole(1, 1), hole(1, 1));
      break;
    case 1:
      add_hole("cubby_high", hole(0, 1), hole(1, 1));
      add_hole("cubby_a_low", hole(0, 0), hole(0, 0));
      add_hole("cubby_b_low", hole(1, 0), hole(1, 0));
      break;
    case 2:
      add_hole("cubby_a", hole(0, 0), hole(0, 1));
      add_hole("cubby_b_low", hole(1, 0), hole(1, 0));
      add_hole("cubby_b_high", hole(1, 1), hole(1, 1));
      break;
    case 3:
      add_hole("cubby_b", hole(1, 0), hole(1, 1));
      add_hole("cubby_a_low", hole(0, 0), hole(0, 0));
      add_hole("cubby_a_high", hole(0, 1), hole(0, 1));
      break;
    default:
      add_hole("cubby_a_low", hole(0, 0), hole(0, 0));
      add_hole("cubby_a_high", hole(0, 1), hole(0, 1));
      add_hole("cubby_b_low", hole(1, 0), hole(1, 0));
      add_hole("cubby_b_high", hole(1, 1), hole(1, 1));
  }
  int usable = 0;
  for (const auto& v : s.goal_volumes) {
    Vec3 ext = 2.0 * v.half_extents;
    if (reachable_point(v.frame.translation, 0.85) && std::min(ext.y(), ext.z()) >= 0.10) ++usable;
  }
  return usable >= 2;
}

// ---------------------------------------------------------------- dresser

struct Cell {
  double y0, y1, z0, z1;
};

void split_cells(const Cell& c, int depth, Rng& rng, const SceneGenOptions& opt, std::vector<Cell>& out,
                 GenerationInfo& info) {
  const double min_ext = opt.min_drawer_extent;
  const bool can_y = c.y1 - c.y0 >= 2 * min_ext;
  const bool can_z = c.z1 - c.z0 >= 2 * min_ext;
  const double p = std::pow(opt.dresser_split_decay, depth);
  const bool want = rng.bernoulli(p);
  bool split = want && (can_y || can_z);
  info.drawer_splits.push_back({depth, split});
  if (!split) {
    out.push_back(c);
    return;
  }
  bool along_y = rng.bernoulli(0.5);
  if (along_y && !can_y) along_y = false;
  if (!along_y && !can_z) along_y = true;
  if (along_y) {
    double cut = rng.uniform(c.y0 + min_ext, c.y1 - min_ext);
    split_cells({c.y0, cut, c.z0, c.z1}, depth + 1, rng, opt, out, info);
    split_cells({cut, c.y1, c.z0, c.z1}, depth + 1, rng, opt, out, info);
  } else {
    double cut = rng.uniform(c.z0 + min_ext, c.z1 - min_ext);
    split_cells({c.y0, c.y1, c.z0, cut}, depth + 1, rng, opt, out, info);
    split_cells({c.y0, c.y1, cut, c.z1}, depth + 1, rng, opt, out, info);
  }
}

bool build_dresser(Scene& s, Rng& rng, const SceneGenOptions& opt, GenerationInfo& info) {
  s.primitives.push_back(Primitive::floor());
  constexpr double kShell = 0.01, kDrawerWall = 0.019, kFace = 0.004;
  const double W = rng.uniform(0.80, 1.20);
  const double D = rng.uniform(0.20, 0.40);
  const double H = rng.uniform(0.55, 0.85);
  const double front = rng.uniform(0.55, 0.80);
  const double yc = rng.uniform(-0.25, 0.25);
  const double yaw = rng.uniform(-40.0, 40.0) * kDeg;
  info.yaw = yaw;
  const Pose frame = at(Vec3(front + D / 2, yc, 0.0), yaw);
  const double dx = D / 2, wy = W / 2;

  s.primitives.push_back(local_box(frame, Vec3(-dx, -wy, 0.0), Vec3(dx, wy, kShell)));         // bottom
  s.primitives.push_back(local_box(frame, Vec3(-dx, -wy, H - kShell), Vec3(dx, wy, H)));       // top
  s.primitives.push_back(local_box(frame, Vec3(-dx, -wy, 0.0), Vec3(dx, -wy + kShell, H)));    // side
  s.primitives.push_back(local_box(frame, Vec3(-dx, wy - kShell, 0.0), Vec3(dx, wy, H)));      // side
  s.primitives.push_back(local_box(frame, Vec3(dx - kShell, -wy, 0.0), Vec3(dx, wy, H)));      // back

  std::vector<Cell> cells;
  split_cells({-wy + kShell, wy - kShell, kShell, H - kShell}, 0, rng, opt, cells, info);
  info.drawer_count = static_cast<int>(cells.size());

  const double xb = dx - kShell;
  const double extension = rng.uniform(0.12, std::max(0.13, 0.85 * D));
  auto exposed = [&](const Cell& c) {
    double x0 = -dx - extension + kFace;
    double x1 = std::min(xb - extension - kDrawerWall, -dx);
    return std::pair<Vec3, Vec3>{Vec3(x0, c.y0 + kDrawerWall, c.z0 + kDrawerWall), Vec3(x1, c.y1 - kDrawerWall, c.z1)};
  };

  std::vector<int> candidates;
  for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
    const Cell& c = cells[i];
    auto [lo, hi] = exposed(c);
    if (hi.x() - lo.x() < 0.08 || hi.y() - lo.y() < 0.12 || hi.z() - lo.z() < 0.06) continue;
    Vec3 center = frame.apply(0.5 * (lo + hi));
    if (!reachable_point(center, 0.85)) continue;
    candidates.push_back(i);
  }
  // Shuffle, then take the first pair that is not stacked (y overlap).
  for (std::size_t i = candidates.size(); i > 1; --i) std::swap(candidates[i - 1], candidates[rng.below(i)]);
  int a = -1, b = -1;
  for (std::size_t i = 0; i < candidates.size() && a < 0; ++i) {
    for (std::size_t j = i + 1; j < candidates.size(); ++j) {
      const Cell& ci = cells[candidates[i]];
      const Cell& cj = cells[candidates[j]];
      if (std::min(ci.y1, cj.y1) - std::max(ci.y0, cj.y0) > 0.0) continue;
      a = candidates[i];
      b = candidates[j];
      break;
    }
  }
  if (a < 0) return false;

  for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
    const Cell& c = cells[i];
    if (i != a && i != b) {
      s.primitives.push_back(local_box(frame, Vec3(-dx, c.y0, c.z0), Vec3(xb, c.y1, c.z1)));
      continue;
    }
    const double x0 = -dx - extension, x1 = xb - extension;
    const double top = c.z1 - kShell;
    s.primitives.push_back(local_box(frame, Vec3(x0, c.y0, c.z0), Vec3(x0 + kFace, c.y1, c.z1)));            // face
    s.primitives.push_back(local_box(frame, Vec3(x1 - kDrawerWall, c.y0, c.z0), Vec3(x1, c.y1, top)));     // back
    s.primitives.push_back(local_box(frame, Vec3(x0, c.y0, c.z0), Vec3(x1, c.y1, c.z0 + kDrawerWall)));    // bottom
    s.primitives.push_back(local_box(frame, Vec3(x0, c.y0, c.z0), Vec3(x1, c.y0 + kDrawerWall, top)));     // side
    s.primitives.push_back(local_box(frame, Vec3(x0, c.y1 - kDrawerWall, c.z0), Vec3(x1, c.y1, top)));     // side
    auto [lo, hi] = exposed(c);
    s.goal_volumes.push_back(local_volume("drawer_" + std::to_string(i), frame, lo, hi));
  }
  return true;
}

}  // namespace

Scene generate_scene(EnvKind kind, Rng& rng, const SceneGenOptions& options, GenerationInfo* info) {
  GenerationInfo local;
  GenerationInfo& gi = info ? *info : local;
  for (int round = 0; round < options.max_rounds; ++round) {
    gi = GenerationInfo{};
    gi.rounds = round + 1;
    Scene s;
    s.env_kind = kind;
    bool ok = false;
    switch (kind) {
      case EnvKind::tabletop: ok = build_tabletop(s, rng, gi); break;
      case EnvKind::cubby: ok = build_cubby(s, rng, options, gi); break;
      case EnvKind::dresser: ok = build_dresser(s, rng, options, gi); break;
    }
    if (ok) {
      s.validate();
      return s;
    }
  }
  throw GenerationExhausted("generate_scene: could not place reachable goal volumes");
}

Vec3 nominal_target_axis(const Scene& scene, const std::string& label) {
  if (scene.env_kind == EnvKind::cubby) {
    const GoalVolume* v = scene.find_volume(label);
    if (v) return v->frame.rotation.col(0);
  }
  return Vec3(0, 0, -1);
}

namespace {

Pose sample_target(const Scene& scene, const GoalVolume& volume, Rng& rng, const ProblemSamplingOptions& opt,
                   bool& ok) {
  ok = false;
  Pose target;
  for (int tries = 0; tries < 50; ++tries) {
    Vec3 p = volume.sample_interior(rng, 0.03);
    if (!reachable_point(p, opt.max_reach)) continue;
    target.translation = p;
    ok = true;
    break;
  }
  if (!ok) return target;
  // Uniform direction in the cone, uniform spin about it.
  Vec3 nominal = nominal_target_axis(scene, volume.label);
  double cos_t = rng.uniform(std::cos(opt.cone_half_angle), 1.0);
  double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
  double phi = rng.uniform(0.0, 2.0 * kPi);
  Mat3 basis = frame_with_z(nominal, 0.0);
  Vec3 dir = basis * Vec3(sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t);
  target.rotation = frame_with_z(dir, rng.uniform(0.0, 2.0 * kPi));
  return target;
}

}  // namespace

std::optional<PlanningProblem> sample_problem(const Scene& scene, const RobotModel& robot, Rng& rng,
                                              const ProblemSamplingOptions& opt) {
  if (scene.goal_volumes.empty()) return std::nullopt;
  const bool volume_bound = scene.env_kind != EnvKind::tabletop;
  IkOptions ik;
  ik.max_attempts = opt.ik_attempts;
  ik.seed = robot.neutral;
  for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
    const GoalVolume& goal = scene.goal_volumes[rng.below(scene.goal_volumes.size())];
    bool ok = false;
    Pose target = sample_target(scene, goal, rng, opt, ok);
    if (!ok) continue;
    if (!ik_solve(robot, target, scene, rng, ik)) continue;

    std::optional<JointConfig> start;
    const bool other_volume_exists = !volume_bound || scene.goal_volumes.size() > 1;
    if (rng.bernoulli(opt.neutral_probability) || !other_volume_exists) {
      for (int tries = 0; tries < 20 && !start; ++tries) {
        JointConfig q = robot.neutral;
        for (int j = 0; j < kDof; ++j) q[j] += rng.uniform(-opt.neutral_noise, opt.neutral_noise);
        q = robot.clamp(q);
        if (!config_in_collision(robot, q, scene)) start = q;
      }
    } else {
      std::size_t idx = rng.below(scene.goal_volumes.size());
      if (volume_bound && scene.goal_volumes[idx].label == goal.label)
        idx = (idx + 1 + rng.below(scene.goal_volumes.size() - 1)) % scene.goal_volumes.size();
      const GoalVolume& other = scene.goal_volumes[idx];
      Pose start_pose = sample_target(scene, other, rng, opt, ok);
      if (ok) start = ik_solve(robot, start_pose, scene, rng, ik);
    }
    if (!start) continue;
    if ((end_effector_pose(robot, *start).translation - target.translation).norm() < opt.min_separation) continue;
    PlanningProblem problem;
    problem.scene = scene;
    problem.start = *start;
    problem.target = target;
    problem.target_volume = goal.label;
    return problem;
  }
  return std::nullopt;
}

}  // namespace mforge
