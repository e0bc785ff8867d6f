#include "motion_forge/geometry.hpp"

#include <algorithm>

namespace mforge {

Pose Pose::from_matrix(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Mat4 Pose::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

double Pose::orthonormality_residual() const {
  return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
}

Mat3 axis_angle(const Vec3& unit_axis, double angle) {
  return Eigen::AngleAxisd(angle, unit_axis).toRotationMatrix();
}

Mat3 rot_x(double a) { return axis_angle(Vec3::UnitX(), a); }
Mat3 rot_y(double a) { return axis_angle(Vec3::UnitY(), a); }
Mat3 rot_z(double a) { return axis_angle(Vec3::UnitZ(), a); }

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  double c = ((b.transpose() * a).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Vec3 rotation_log(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

Mat3 rotation_slerp(const Mat3& a, const Mat3& b, double s) {
  Eigen::Quaterniond qa(a), qb(b);
  return qa.slerp(s, qb).normalized().toRotationMatrix();
}

Mat3 frame_with_z(const Vec3& z, double spin) {
  Vec3 zn = z.normalized();
  Vec3 ref = std::abs(zn.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  Vec3 x = (ref - ref.dot(zn) * zn).normalized();
  Vec3 y = zn.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = zn;
  return r * rot_z(spin);
}

}  // namespace mforge
