#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>

namespace mforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr int kDof = 7;
using Joints = Eigen::Matrix<double, kDof, 1>;

/// Rigid transform: rotation followed by translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_matrix(const Mat4& m);

  Mat4 matrix() const;
  Pose operator*(const Pose& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }
  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const {
    Mat3 rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
  /// Max abs entry of R^T R - I.
  double orthonormality_residual() const;
};

Mat3 axis_angle(const Vec3& unit_axis, double angle);
Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);

/// Geodesic angle between two rotations, in [0, pi].
double rotation_angle_between(const Mat3& a, const Mat3& b);

/// Rotation vector (axis * angle) of r.
Vec3 rotation_log(const Mat3& r);

/// Geodesic interpolation from a to b at fraction s in [0, 1].
Mat3 rotation_slerp(const Mat3& a, const Mat3& b, double s);

/// A rotation whose z-axis is `z` (normalized); x-axis picked orthogonal to z,
/// then spun by `spin` about z.
Mat3 frame_with_z(const Vec3& z, double spin);

}  // namespace mforge
