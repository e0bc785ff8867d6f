#include "motion_forge/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mforge {

namespace {

constexpr double kPi = std::numbers::pi;

}  // namespace

Primitive Primitive::box(const Pose& pose, const Vec3& half_extents) {
  return {PrimitiveKind::box, pose, half_extents};
}

Primitive Primitive::cylinder(const Pose& pose, double radius, double half_height) {
  return {PrimitiveKind::cylinder, pose, Vec3(radius, half_height, 1.0)};
}

Primitive Primitive::floor(double height, double patch_half_extent) {
  Pose p;
  p.translation.z() = height;
  return {PrimitiveKind::floor, p, Vec3(patch_half_extent, patch_half_extent, 1.0)};
}

double Primitive::sdf(const Vec3& p) const {
  Vec3 l = pose.rotation.transpose() * (p - pose.translation);
  switch (kind) {
    case PrimitiveKind::box: {
      Vec3 q = l.cwiseAbs() - dims;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    }
    case PrimitiveKind::cylinder: {
      double qr = std::hypot(l.x(), l.y()) - dims.x();
      double qz = std::abs(l.z()) - dims.y();
      return std::hypot(std::max(qr, 0.0), std::max(qz, 0.0)) + std::min(std::max(qr, qz), 0.0);
    }
    case PrimitiveKind::floor:
      return l.z();
  }
  return 0.0;
}

Vec3 Primitive::sdf_gradient(const Vec3& p) const {
  Vec3 l = pose.rotation.transpose() * (p - pose.translation);
  Vec3 g = Vec3::UnitZ();
  switch (kind) {
    case PrimitiveKind::box: {
      Vec3 q = l.cwiseAbs() - dims;
      Vec3 sign(l.x() >= 0 ? 1.0 : -1.0, l.y() >= 0 ? 1.0 : -1.0, l.z() >= 0 ? 1.0 : -1.0);
      if (q.maxCoeff() > 0.0) {
        Vec3 outside = q.cwiseMax(0.0);
        g = outside.normalized().cwiseProduct(sign);
      } else {
        int axis;
        q.maxCoeff(&axis);
        g = Vec3::Zero();
        g[axis] = sign[axis];
      }
      break;
    }
    case PrimitiveKind::cylinder: {
      double r = std::hypot(l.x(), l.y());
      Vec3 radial = r > 1e-12 ? Vec3(l.x() / r, l.y() / r, 0.0) : Vec3::UnitX();
      double qr = r - dims.x();
      double qz = std::abs(l.z()) - dims.y();
      double sz = l.z() >= 0 ? 1.0 : -1.0;
      if (qr > 0.0 && qz > 0.0) {
        double n = std::hypot(qr, qz);
        g = (qr / n) * radial + Vec3(0, 0, sz * qz / n);
      } else if (qr > qz) {
        g = radial;
      } else {
        g = Vec3(0, 0, sz);
      }
      break;
    }
    case PrimitiveKind::floor:
      g = Vec3::UnitZ();
      break;
  }
  return pose.rotation * g;
}

double Primitive::surface_area() const {
  switch (kind) {
    case PrimitiveKind::box:
      return 8.0 * (dims.x() * dims.y() + dims.y() * dims.z() + dims.x() * dims.z());
    case PrimitiveKind::cylinder:
      return 2.0 * kPi * dims.x() * dims.x() + 4.0 * kPi * dims.x() * dims.y();
    case PrimitiveKind::floor:
      return 4.0 * dims.x() * dims.y();
  }
  return 0.0;
}

Vec3 Primitive::sample_surface(Rng& rng) const {
  Vec3 l;
  switch (kind) {
    case PrimitiveKind::box: {
      const double ax = dims.y() * dims.z(), ay = dims.x() * dims.z(), az = dims.x() * dims.y();
      double u = rng.uniform() * (ax + ay + az);
      int axis = u < ax ? 0 : (u < ax + ay ? 1 : 2);
      double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
      for (int k = 0; k < 3; ++k) l[k] = k == axis ? side * dims[k] : rng.uniform(-dims[k], dims[k]);
      break;
    }
    case PrimitiveKind::cylinder: {
      const double r = dims.x(), h = dims.y();
      double cap = kPi * r * r, side = 4.0 * kPi * r * h;
      double u = rng.uniform() * (2 * cap + side);
      double phi = rng.uniform(0.0, 2.0 * kPi);
      if (u < 2 * cap) {
        double rr = r * std::sqrt(rng.uniform());
        l = Vec3(rr * std::cos(phi), rr * std::sin(phi), u < cap ? h : -h);
      } else {
        l = Vec3(r * std::cos(phi), r * std::sin(phi), rng.uniform(-h, h));
      }
      break;
    }
    case PrimitiveKind::floor:
      l = Vec3(rng.uniform(-dims.x(), dims.x()), rng.uniform(-dims.y(), dims.y()), 0.0);
      break;
  }
  return pose.apply(l);
}

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::tabletop: return "tabletop";
    case EnvKind::cubby: return "cubby";
    case EnvKind::dresser: return "dresser";
  }
  return "tabletop";
}

EnvKind env_kind_from_string(std::string_view s) {
  if (s == "tabletop") return EnvKind::tabletop;
  if (s == "cubby") return EnvKind::cubby;
  if (s == "dresser") return EnvKind::dresser;
  throw std::invalid_argument("unknown environment kind: " + std::string(s));
}

bool GoalVolume::contains(const Vec3& p, double tol) const {
  Vec3 l = frame.rotation.transpose() * (p - frame.translation);
  return (l.cwiseAbs() - half_extents).maxCoeff() <= tol;
}

Vec3 GoalVolume::sample_interior(Rng& rng, double inset) const {
  Vec3 l;
  for (int k = 0; k < 3; ++k) {
    double h = std::max(half_extents[k] - inset, 0.0);
    l[k] = rng.uniform(-h, h);
  }
  return frame.apply(l);
}

void Scene::validate() const {
  if (primitives.empty()) throw std::invalid_argument("scene: no primitives");
  for (const auto& p : primitives)
    if (p.dims.minCoeff() <= 0.0) throw std::invalid_argument("scene: primitive dims must be positive");
  for (const auto& v : goal_volumes)
    if (v.half_extents.minCoeff() <= 0.0) throw std::invalid_argument("scene: goal volume must have positive extent");
}

SdfSample Scene::sdf(const Vec3& p) const {
  SdfSample best{std::numeric_limits<double>::infinity(), -1};
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    double d = primitives[i].sdf(p);
    if (d < best.distance) best = {d, static_cast<int>(i)};
  }
  return best;
}

const GoalVolume* Scene::find_volume(std::string_view label) const {
  for (const auto& v : goal_volumes)
    if (v.label == label) return &v;
  return nullptr;
}

std::vector<Vec3> sample_surface_cloud(const Scene& scene, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_surface_cloud: n must be >= 1");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& p : scene.primitives) {
    total += p.surface_area();
    cumulative.push_back(total);
  }
  std::vector<Vec3> out;
  out.reserve(n);
  // Points buried inside another primitive are not on the union's boundary.
  int guard = 0;
  while (static_cast<int>(out.size()) < n) {
    double u = rng.uniform() * total;
    std::size_t idx = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
    idx = std::min(idx, scene.primitives.size() - 1);
    Vec3 p = scene.primitives[idx].sample_surface(rng);
    if (scene.distance(p) >= -1e-9) {
      out.push_back(p);
    } else if (++guard > 1000 * n + 100000) {
      throw std::runtime_error("sample_surface_cloud: scene surface fully buried");
    }
  }
  return out;
}

CameraConfig CameraConfig::default_view() {
  CameraConfig c;
  const double pitch = kPi / 4;
  const double dist = 1.6;
  c.pose.translation = Vec3(-dist * std::cos(pitch), 0.0, dist * std::sin(pitch));
  Vec3 forward(std::cos(pitch), 0.0, -std::sin(pitch));
  Vec3 right(0.0, -1.0, 0.0);
  Vec3 down = forward.cross(right);
  c.pose.rotation.col(0) = right;
  c.pose.rotation.col(1) = down;
  c.pose.rotation.col(2) = forward;
  return c;
}

std::vector<Vec3> render_partial_cloud(const Scene& scene, const CameraConfig& camera, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("render_partial_cloud: n must be >= 1");
  const double fy = 0.5 * camera.height / std::tan(0.5 * camera.vertical_fov_deg * kPi / 180.0);
  const double fx = fy;
  std::vector<Vec3> hits;
  for (int v = 0; v < camera.height; ++v) {
    for (int u = 0; u < camera.width; ++u) {
      Vec3 dir_cam((u + 0.5 - 0.5 * camera.width) / fx, (v + 0.5 - 0.5 * camera.height) / fy, 1.0);
      Vec3 dir = camera.pose.rotation * dir_cam.normalized();
      double t = 0.0;
      for (int step = 0; step < camera.max_steps && t < camera.max_range; ++step) {
        Vec3 p = camera.pose.translation + t * dir;
        double d = scene.distance(p);
        if (d < camera.surface_tolerance) {
          if (std::abs(p.x()) <= camera.crop_half_extent && std::abs(p.y()) <= camera.crop_half_extent)
            hits.push_back(p);
          break;
        }
        t += d;
      }
    }
  }
  if (hits.empty()) throw EmptyViewError();
  std::vector<Vec3> out;
  out.reserve(n);
  if (static_cast<int>(hits.size()) >= n) {
    // partial Fisher-Yates
    for (int i = 0; i < n; ++i) {
      std::size_t j = i + rng.below(hits.size() - i);
      std::swap(hits[i], hits[j]);
      out.push_back(hits[i]);
    }
  } else {
    for (int i = 0; i < n; ++i) out.push_back(hits[rng.below(hits.size())]);
  }
  return out;
}

bool self_collision(const RobotModel& robot, const LinkPoses& poses) {
  for (const auto& [la, lb] : robot.self_collision_pairs) {
    for (const auto& a : robot.spheres) {
      if (a.link != la) continue;
      Vec3 ca = poses[la].apply(a.center);
      for (const auto& b : robot.spheres) {
        if (b.link != lb) continue;
        if ((ca - poses[lb].apply(b.center)).norm() < a.radius + b.radius) return true;
      }
    }
  }
  return false;
}

bool environment_collision(const RobotModel& robot, const LinkPoses& poses, const Scene& scene,
                           double margin) {
  for (const auto& s : robot.spheres)
    if (scene.distance(poses[s.link].apply(s.center)) < s.radius + margin) return true;
  return false;
}

bool config_in_collision(const RobotModel& robot, const LinkPoses& poses, const Scene& scene,
                         double margin) {
  return environment_collision(robot, poses, scene, margin) || self_collision(robot, poses);
}

bool config_in_collision(const RobotModel& robot, const JointConfig& q, const Scene& scene,
                         double margin) {
  return config_in_collision(robot, forward_kinematics(robot, q), scene, margin);
}

}  // namespace mforge
