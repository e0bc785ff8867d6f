#include "motion_forge/kinematics.hpp"

#include "motion_forge/scene.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace mforge {

namespace {

constexpr double kPi = std::numbers::pi;

Mat4 modified_dh(double alpha, double a, double d) {
  Pose p;
  p.rotation = rot_x(alpha);
  p.translation = rot_x(alpha) * Vec3(0, 0, d) + Vec3(a, 0, 0);
  return p.matrix();
}

Mat4 translate_z(double d) {
  Mat4 m = Mat4::Identity();
  m(2, 3) = d;
  return m;
}

Mat4 rotate_z(double a) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rot_z(a);
  return m;
}

void add_sphere(RobotModel& r, int link, double x, double y, double z, double radius) {
  r.spheres.push_back({link, Vec3(x, y, z), radius});
}

/// 1024 points on the exposed part of each link's sphere surfaces.
std::vector<SurfaceAnchor> sample_anchors(const std::vector<CollisionSphere>& spheres,
                                          std::uint64_t seed) {
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& s : spheres) {
    total += s.radius * s.radius;
    cumulative.push_back(total);
  }
  Rng rng(seed);
  std::vector<SurfaceAnchor> anchors;
  anchors.reserve(kSurfaceAnchorCount);
  while (static_cast<int>(anchors.size()) < kSurfaceAnchorCount) {
    double u = rng.uniform() * total;
    std::size_t idx = std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin();
    idx = std::min(idx, spheres.size() - 1);
    const auto& s = spheres[idx];
    double z = rng.uniform(-1.0, 1.0);
    double phi = rng.uniform(0.0, 2.0 * kPi);
    double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    Vec3 p = s.center + s.radius * Vec3(rho * std::cos(phi), rho * std::sin(phi), z);
    bool covered = false;
    for (std::size_t j = 0; j < spheres.size(); ++j) {
      if (j == idx || spheres[j].link != s.link) continue;
      if ((p - spheres[j].center).norm() < spheres[j].radius) {
        covered = true;
        break;
      }
    }
    if (!covered) anchors.push_back({s.link, p});
  }
  return anchors;
}

}  // namespace

void RobotModel::validate() const {
  for (const auto& j : joints) {
    if (!(j.lower < j.upper)) throw std::invalid_argument("robot: joint lower limit must be < upper");
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) throw std::invalid_argument("robot: joint axis must be unit");
  }
  if (anchors.size() != kSurfaceAnchorCount)
    throw std::invalid_argument("robot: expected exactly 1024 surface anchors");
  for (const auto& s : spheres) {
    if (!(s.radius > 0.0)) throw std::invalid_argument("robot: collision sphere radius must be > 0");
    if (s.link < 0 || s.link >= kLinkCount) throw std::invalid_argument("robot: sphere link out of range");
  }
  for (const auto& a : anchors)
    if (a.link < 0 || a.link >= kLinkCount) throw std::invalid_argument("robot: anchor link out of range");
}

JointConfig RobotModel::lower() const {
  JointConfig l;
  for (int j = 0; j < kDof; ++j) l[j] = joints[j].lower;
  return l;
}

JointConfig RobotModel::upper() const {
  JointConfig u;
  for (int j = 0; j < kDof; ++j) u[j] = joints[j].upper;
  return u;
}

bool RobotModel::within_limits(const JointConfig& q, double tol) const {
  for (int j = 0; j < kDof; ++j)
    if (q[j] < joints[j].lower - tol || q[j] > joints[j].upper + tol) return false;
  return true;
}

JointConfig RobotModel::clamp(const JointConfig& q) const {
  return q.cwiseMax(lower()).cwiseMin(upper());
}

JointConfig RobotModel::sample_uniform(Rng& rng) const {
  JointConfig q;
  for (int j = 0; j < kDof; ++j) q[j] = rng.uniform(joints[j].lower, joints[j].upper);
  return q;
}

std::vector<CollisionSphere> RobotModel::gripper_spheres() const {
  std::vector<CollisionSphere> out;
  for (const auto& s : spheres)
    if (s.link == kEndEffectorLink) out.push_back(s);
  return out;
}

RobotModel RobotModel::panda_like() {
  RobotModel r;
  r.name = "panda_like";
  // (alpha_{i-1}, a_{i-1}, d_i) in the modified DH convention.
  const double dh[kDof][3] = {{0, 0, 0.333},         {-kPi / 2, 0, 0},
                              {kPi / 2, 0, 0.316},   {kPi / 2, 0.0825, 0},
                              {-kPi / 2, -0.0825, 0.384}, {kPi / 2, 0, 0},
                              {kPi / 2, 0.088, 0}};
  const double lim[kDof][2] = {{-2.8973, 2.8973}, {-1.7628, 1.7628}, {-2.8973, 2.8973},
                               {-3.0718, -0.0698}, {-2.8973, 2.8973}, {-0.0175, 3.7525},
                               {-2.8973, 2.8973}};
  for (int j = 0; j < kDof; ++j) {
    r.joints[j].fixed = modified_dh(dh[j][0], dh[j][1], dh[j][2]);
    r.joints[j].axis = Vec3::UnitZ();
    r.joints[j].lower = lim[j][0];
    r.joints[j].upper = lim[j][1];
  }
  // flange, hand yaw, tool center point
  r.ee_fixed = translate_z(0.107) * rotate_z(-kPi / 4) * translate_z(0.1034);

  add_sphere(r, 0, 0.0, 0.0, 0.10, 0.08);
  add_sphere(r, 1, 0.0, 0.0, -0.19, 0.075);
  add_sphere(r, 1, 0.0, 0.0, -0.08, 0.075);
  add_sphere(r, 2, 0.0, 0.0, 0.0, 0.075);
  add_sphere(r, 2, 0.0, -0.10, 0.0, 0.07);
  add_sphere(r, 2, 0.0, -0.20, 0.0, 0.065);
  add_sphere(r, 3, 0.0, 0.0, -0.08, 0.065);
  add_sphere(r, 3, 0.06, 0.0, 0.0, 0.065);
  add_sphere(r, 4, 0.0, 0.0, 0.0, 0.065);
  add_sphere(r, 4, -0.0825, 0.08, 0.0, 0.06);
  add_sphere(r, 5, 0.0, 0.0, -0.26, 0.06);
  add_sphere(r, 5, 0.0, 0.0, -0.17, 0.055);
  add_sphere(r, 5, 0.0, 0.0, -0.07, 0.05);
  add_sphere(r, 6, 0.05, 0.0, 0.0, 0.055);
  add_sphere(r, 7, 0.0, 0.0, 0.06, 0.05);
  add_sphere(r, 8, 0.0, 0.0, -0.065, 0.05);
  add_sphere(r, 8, 0.0, 0.04, -0.02, 0.02);
  add_sphere(r, 8, 0.0, -0.04, -0.02, 0.02);

  for (int a = 0; a < kLinkCount; ++a)
    for (int b = a + 3; b < kLinkCount; ++b) r.self_collision_pairs.emplace_back(a, b);

  r.anchors = sample_anchors(r.spheres, 0x5eedULL);
  r.neutral << 0.0, -kPi / 4, 0.0, -3 * kPi / 4, 0.0, kPi / 2, kPi / 4;
  r.validate();
  return r;
}

LinkPoses forward_kinematics(const RobotModel& robot, const JointConfig& q) {
  LinkPoses poses;
  poses[0] = Pose::identity();
  for (int j = 0; j < kDof; ++j) {
    const auto& spec = robot.joints[j];
    Pose fixed = Pose::from_matrix(spec.fixed);
    Pose joint{axis_angle(spec.axis, q[j]), Vec3::Zero()};
    poses[j + 1] = poses[j] * fixed * joint;
  }
  poses[kEndEffectorLink] = poses[kDof] * Pose::from_matrix(robot.ee_fixed);
  return poses;
}

std::vector<Vec3> surface_points(const RobotModel& robot, const LinkPoses& poses) {
  std::vector<Vec3> pts;
  pts.reserve(robot.anchors.size());
  for (const auto& a : robot.anchors) pts.push_back(poses[a.link].apply(a.offset));
  return pts;
}

std::vector<Vec3> surface_points(const RobotModel& robot, const JointConfig& q) {
  return surface_points(robot, forward_kinematics(robot, q));
}

NormalizedConfig normalize_config(const RobotModel& robot, const JointConfig& q) {
  NormalizedConfig qn;
  for (int j = 0; j < kDof; ++j) {
    const auto& s = robot.joints[j];
    qn[j] = 2.0 * (q[j] - s.lower) / (s.upper - s.lower) - 1.0;
  }
  return qn;
}

JointConfig unnormalize_config(const RobotModel& robot, const NormalizedConfig& qn) {
  JointConfig q;
  for (int j = 0; j < kDof; ++j) {
    const auto& s = robot.joints[j];
    double c = std::clamp(qn[j], -1.0, 1.0);
    q[j] = std::clamp(s.lower + (c + 1.0) * 0.5 * (s.upper - s.lower), s.lower, s.upper);
  }
  return q;
}

PointJacobian point_jacobian(const RobotModel& robot, const LinkPoses& poses, int link,
                             const Vec3& world_point) {
  PointJacobian jac = PointJacobian::Zero();
  // Joint j moves frames j+1 and beyond.
  for (int j = 0; j < kDof && j + 1 <= link; ++j) {
    const Pose& f = poses[j + 1];
    Vec3 axis = f.rotation * robot.joints[j].axis;
    jac.col(j) = axis.cross(world_point - f.translation);
  }
  return jac;
}

Jacobian jacobian(const RobotModel& robot, const JointConfig& q) {
  LinkPoses poses = forward_kinematics(robot, q);
  const Vec3& p = poses[kEndEffectorLink].translation;
  Jacobian jac;
  jac.topRows<3>() = point_jacobian(robot, poses, kEndEffectorLink, p);
  for (int j = 0; j < kDof; ++j) jac.block<3, 1>(3, j) = poses[j + 1].rotation * robot.joints[j].axis;
  return jac;
}

std::optional<JointConfig> ik_solve(const RobotModel& robot, const Pose& target, const Scene& scene,
                                    Rng& rng, const IkOptions& options) {
  if (options.max_attempts < 1) throw std::invalid_argument("ik_solve: max_attempts must be >= 1");
  const double lambda2 = options.damping * options.damping;
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    JointConfig q = (attempt == 0 && options.seed) ? robot.clamp(*options.seed) : robot.sample_uniform(rng);
    for (int it = 0; it < options.iterations; ++it) {
      LinkPoses poses = forward_kinematics(robot, q);
      const Pose& ee = poses[kEndEffectorLink];
      Eigen::Matrix<double, 6, 1> err;
      err.head<3>() = target.translation - ee.translation;
      err.tail<3>() = rotation_log(target.rotation * ee.rotation.transpose());
      if (err.head<3>().norm() < 0.1 * options.position_tolerance &&
          err.tail<3>().norm() < 0.1 * options.orientation_tolerance)
        break;
      Jacobian jac = jacobian(robot, q);
      Eigen::Matrix<double, 6, 6> jjt = jac * jac.transpose() + lambda2 * Eigen::Matrix<double, 6, 6>::Identity();
      JointConfig dq = jac.transpose() * jjt.ldlt().solve(err);
      double n = dq.norm();
      if (n > 0.5) dq *= 0.5 / n;
      q = robot.clamp(q + dq);
    }
    Pose ee = end_effector_pose(robot, q);
    if ((ee.translation - target.translation).norm() > options.position_tolerance) continue;
    if (rotation_angle_between(ee.rotation, target.rotation) > options.orientation_tolerance) continue;
    if (!robot.within_limits(q)) continue;
    if (config_in_collision(robot, q, scene)) continue;
    return q;
  }
  return std::nullopt;
}

namespace {

nlohmann::json mat4_json(const Mat4& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) rows.push_back(m(r, c));
  return rows;
}

Mat4 mat4_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 16) throw std::invalid_argument("robot file: transform must have 16 entries");
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = j[r * 4 + c].get<double>();
  return m;
}

Vec3 vec3_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("robot file: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

void write_robot_file(const std::filesystem::path& path, const RobotModel& robot) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["name"] = robot.name;
  for (const auto& js : robot.joints) {
    j["joints"].push_back({{"fixed", mat4_json(js.fixed)},
                           {"axis", {js.axis.x(), js.axis.y(), js.axis.z()}},
                           {"limits", {js.lower, js.upper}}});
  }
  j["ee_fixed"] = mat4_json(robot.ee_fixed);
  j["neutral"] = std::vector<double>(robot.neutral.data(), robot.neutral.data() + kDof);
  for (const auto& s : robot.spheres)
    j["collision_spheres"].push_back({{"link", s.link},
                                      {"center", {s.center.x(), s.center.y(), s.center.z()}},
                                      {"radius", s.radius}});
  j["self_collision_pairs"] = robot.self_collision_pairs;
  for (const auto& a : robot.anchors)
    j["surface_anchors"].push_back({a.link, a.offset.x(), a.offset.y(), a.offset.z()});
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write robot file " + path.string());
  out << j.dump(1) << '\n';
}

RobotModel read_robot_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read robot file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("robot file: ") + e.what());
  }
  if (j.value("format_version", 0) != 1) throw std::invalid_argument("robot file: unsupported format_version");
  RobotModel r;
  r.name = j.value("name", std::string("robot"));
  const auto& joints = j.at("joints");
  if (joints.size() != kDof) throw std::invalid_argument("robot file: expected 7 joints");
  for (int k = 0; k < kDof; ++k) {
    r.joints[k].fixed = mat4_from(joints[k].at("fixed"));
    r.joints[k].axis = vec3_from(joints[k].at("axis"));
    r.joints[k].lower = joints[k].at("limits")[0].get<double>();
    r.joints[k].upper = joints[k].at("limits")[1].get<double>();
  }
  r.ee_fixed = mat4_from(j.at("ee_fixed"));
  auto neutral = j.at("neutral").get<std::vector<double>>();
  if (neutral.size() != kDof) throw std::invalid_argument("robot file: neutral must have 7 entries");
  for (int k = 0; k < kDof; ++k) r.neutral[k] = neutral[k];
  for (const auto& s : j.at("collision_spheres"))
    r.spheres.push_back({s.at("link").get<int>(), vec3_from(s.at("center")), s.at("radius").get<double>()});
  r.self_collision_pairs = j.at("self_collision_pairs").get<std::vector<std::pair<int, int>>>();
  for (const auto& a : j.at("surface_anchors"))
    r.anchors.push_back({a.at(0).get<int>(), Vec3(a.at(1).get<double>(), a.at(2).get<double>(), a.at(3).get<double>())});
  r.validate();
  return r;
}

}  // namespace mforge
