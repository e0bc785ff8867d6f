#pragma once

#include "motion_forge/geometry.hpp"
#include "motion_forge/kinematics.hpp"
#include "motion_forge/random.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mforge {

enum class PrimitiveKind { box, cylinder, floor };

/// Box: dims = half extents. Cylinder: dims = (radius, half height, unused),
/// upright along local z. Floor: the half-space below local z = 0; dims.xy are
/// the half extents of the patch used for surface sampling.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::box;
  Pose pose;
  Vec3 dims = Vec3::Ones();

  static Primitive box(const Pose& pose, const Vec3& half_extents);
  static Primitive cylinder(const Pose& pose, double radius, double half_height);
  static Primitive floor(double height = 0.0, double patch_half_extent = 1.0);

  double sdf(const Vec3& p) const;
  /// Unit gradient of the SDF (outward normal direction).
  Vec3 sdf_gradient(const Vec3& p) const;
  double surface_area() const;
  /// Uniform point on the surface.
  Vec3 sample_surface(Rng& rng) const;
};

enum class EnvKind { tabletop, cubby, dresser };

std::string_view to_string(EnvKind kind);
EnvKind env_kind_from_string(std::string_view s);

/// Labeled region, axis-aligned in its own frame.
struct GoalVolume {
  std::string label;
  Pose frame;
  Vec3 half_extents = Vec3::Zero();

  bool contains(const Vec3& p, double tol = 0.0) const;
  Vec3 sample_interior(Rng& rng, double inset) const;
};

struct SdfSample {
  double distance = 0.0;
  int primitive = -1;
};

class Scene {
 public:
  std::vector<Primitive> primitives;
  EnvKind env_kind = EnvKind::tabletop;
  std::vector<GoalVolume> goal_volumes;
  std::uint64_t rng_seed = 0;

  /// Throws std::invalid_argument on an empty scene or degenerate volume.
  void validate() const;

  SdfSample sdf(const Vec3& p) const;
  double distance(const Vec3& p) const { return sdf(p).distance; }
  const GoalVolume* find_volume(std::string_view label) const;
};

/// Minimum signed distance over all primitives, with the argmin index.
inline SdfSample sdf_eval(const Scene& scene, const Vec3& p) { return scene.sdf(p); }

/// Area-weighted uniform samples on the boundary of the union of primitives.
std::vector<Vec3> sample_surface_cloud(const Scene& scene, int n, Rng& rng);

struct CameraConfig {
  Pose pose;  ///< camera frame: z forward, x right, y down
  double vertical_fov_deg = 60.0;
  int width = 160;
  int height = 120;
  double max_range = 10.0;
  int max_steps = 128;
  double surface_tolerance = 1e-4;
  /// Hits outside |x|, |y| <= crop are dropped (workspace crop).
  double crop_half_extent = 1.0;

  /// 1.6 m from the base, pitched 45 degrees down, looking forward over it.
  static CameraConfig default_view();
};

class EmptyViewError : public std::runtime_error {
 public:
  EmptyViewError() : std::runtime_error("render_partial_cloud: no ray hit the scene") {}
};

/// Single-view point cloud by sphere tracing; exactly n points (subsampled
/// without replacement, or with replacement when there are fewer hits).
std::vector<Vec3> render_partial_cloud(const Scene& scene, const CameraConfig& camera, int n,
                                       Rng& rng);

/// Sphere model vs scene SDF plus listed self-collision pairs.
bool config_in_collision(const RobotModel& robot, const JointConfig& q, const Scene& scene,
                         double margin = 0.0);
bool config_in_collision(const RobotModel& robot, const LinkPoses& poses, const Scene& scene,
                         double margin = 0.0);
bool self_collision(const RobotModel& robot, const LinkPoses& poses);
bool environment_collision(const RobotModel& robot, const LinkPoses& poses, const Scene& scene,
                           double margin = 0.0);

}  // namespace mforge
