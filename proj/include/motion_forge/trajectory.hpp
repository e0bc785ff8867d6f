#pragma once

#include "motion_forge/kinematics.hpp"

#include <string_view>
#include <vector>

namespace mforge {

enum class Provenance { global, hybrid, policy };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct Trajectory {
  std::vector<JointConfig> configs;
  double dt = 0.08;
  Provenance provenance = Provenance::global;
  double planning_time = 0.0;

  /// Throws std::invalid_argument unless >= 2 finite configs and dt > 0.
  void validate() const;
};

/// Summed joint-space segment lengths.
double path_length(const std::vector<JointConfig>& configs);

/// Largest per-joint third finite difference divided by dt^3.
double max_jerk(const std::vector<JointConfig>& configs, double dt);

/// Natural cubic spline through configs, parameterized by cumulative chord
/// length, evaluated per joint.
class CubicSpline {
 public:
  explicit CubicSpline(const std::vector<JointConfig>& knots);

  double length_parameter() const { return params_.back(); }
  JointConfig operator()(double s) const;

 private:
  std::vector<double> params_;
  std::vector<JointConfig> values_;
  std::vector<JointConfig> second_;  ///< second derivatives at knots
};

/// Resample at uniform joint-space arc length with per-step displacement
/// close to `step` (the last step lands exactly on the final config). With
/// `use_spline` the geometry follows a natural cubic spline through the input;
/// otherwise the input polyline.
std::vector<JointConfig> resample_uniform(const std::vector<JointConfig>& configs, double step,
                                          bool use_spline);

/// Points along the straight segment a->b every `spacing` (inclusive of b).
std::vector<JointConfig> interpolate_segment(const JointConfig& a, const JointConfig& b, double spacing);

}  // namespace mforge
