#include "motion_forge/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mforge {

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::global: return "global";
    case Provenance::hybrid: return "hybrid";
    case Provenance::policy: return "policy";
  }
  return "global";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "global") return Provenance::global;
  if (s == "hybrid") return Provenance::hybrid;
  if (s == "policy") return Provenance::policy;
  throw std::invalid_argument("unknown provenance: " + std::string(s));
}

void Trajectory::validate() const {
  if (configs.size() < 2) throw std::invalid_argument("trajectory: needs at least 2 configs");
  if (!(dt > 0.0)) throw std::invalid_argument("trajectory: dt must be positive");
  for (const auto& q : configs)
    if (!q.allFinite()) throw std::invalid_argument("trajectory: non-finite config");
}

double path_length(const std::vector<JointConfig>& configs) {
  double total = 0.0;
  for (std::size_t i = 1; i < configs.size(); ++i) total += (configs[i] - configs[i - 1]).norm();
  return total;
}

double max_jerk(const std::vector<JointConfig>& configs, double dt) {
  double worst = 0.0;
  for (std::size_t i = 3; i < configs.size(); ++i) {
    JointConfig d3 = configs[i] - 3.0 * configs[i - 1] + 3.0 * configs[i - 2] - configs[i - 3];
    worst = std::max(worst, d3.cwiseAbs().maxCoeff());
  }
  return worst / (dt * dt * dt);
}

CubicSpline::CubicSpline(const std::vector<JointConfig>& knots) {
  if (knots.size() < 2) throw std::invalid_argument("CubicSpline: needs at least 2 knots");
  params_.push_back(0.0);
  values_.push_back(knots.front());
  for (std::size_t i = 1; i < knots.size(); ++i) {
    double h = (knots[i] - values_.back()).norm();
    if (h < 1e-12) continue;  // repeated knots carry no geometry
    params_.push_back(params_.back() + h);
    values_.push_back(knots[i]);
  }
  if (values_.size() == 1) {
    params_.push_back(1.0);
    values_.push_back(knots.back());
  }
  const std::size_t n = values_.size();
  second_.assign(n, JointConfig::Zero());
  if (n < 3) return;
  // Thomas algorithm for the natural spline system.
  std::vector<double> diag(n, 0.0), upper(n, 0.0);
  std::vector<JointConfig> rhs(n, JointConfig::Zero());
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double h0 = params_[i] - params_[i - 1], h1 = params_[i + 1] - params_[i];
    double lower = h0 / 6.0;
    diag[i] = (h0 + h1) / 3.0;
    upper[i] = h1 / 6.0;
    rhs[i] = (values_[i + 1] - values_[i]) / h1 - (values_[i] - values_[i - 1]) / h0;
    if (i > 1) {
      double m = lower / diag[i - 1];
      diag[i] -= m * upper[i - 1];
      rhs[i] -= m * rhs[i - 1];
    }
  }
  for (std::size_t i = n - 2; i >= 1; --i) {
    second_[i] = (rhs[i] - upper[i] * second_[i + 1]) / diag[i];
    if (i == 1) break;
  }
}

JointConfig CubicSpline::operator()(double s) const {
  if (s <= params_.front()) return values_.front();
  if (s >= params_.back()) return values_.back();
  std::size_t k = std::upper_bound(params_.begin(), params_.end(), s) - params_.begin() - 1;
  double h = params_[k + 1] - params_[k];
  double a = (params_[k + 1] - s) / h, b = (s - params_[k]) / h;
  return a * values_[k] + b * values_[k + 1] +
         ((a * a * a - a) * second_[k] + (b * b * b - b) * second_[k + 1]) * (h * h) / 6.0;
}

std::vector<JointConfig> interpolate_segment(const JointConfig& a, const JointConfig& b, double spacing) {
  double len = (b - a).norm();
  int steps = std::max(1, static_cast<int>(std::ceil(len / spacing)));
  std::vector<JointConfig> out;
  out.reserve(steps);
  for (int i = 1; i < steps; ++i) out.push_back(a + (b - a) * (static_cast<double>(i) / steps));
  out.push_back(b);
  return out;
}

namespace {

/// Dense (parameter, cumulative arc length) table of a curve.
template <typename Curve>
std::vector<JointConfig> resample_curve(const Curve& curve, double param_end, int dense, double step) {
  std::vector<double> ps(dense + 1), arc(dense + 1, 0.0);
  JointConfig prev = curve(0.0);
  ps[0] = 0.0;
  for (int i = 1; i <= dense; ++i) {
    ps[i] = param_end * i / dense;
    JointConfig cur = curve(ps[i]);
    arc[i] = arc[i - 1] + (cur - prev).norm();
    prev = cur;
  }
  const double total = arc.back();
  const int steps = std::max(1, static_cast<int>(std::ceil(total / step - 1e-9)));
  std::vector<JointConfig> out;
  out.reserve(steps + 1);
  out.push_back(curve(0.0));
  for (int k = 1; k < steps; ++k) {
    double target = total * k / steps;
    std::size_t i = std::lower_bound(arc.begin(), arc.end(), target) - arc.begin();
    i = std::clamp<std::size_t>(i, 1, dense);
    double span = arc[i] - arc[i - 1];
    double f = span > 0 ? (target - arc[i - 1]) / span : 0.0;
    out.push_back(curve(ps[i - 1] + f * (ps[i] - ps[i - 1])));
  }
  out.push_back(curve(param_end));
  return out;
}

}  // namespace

std::vector<JointConfig> resample_uniform(const std::vector<JointConfig>& configs, double step, bool use_spline) {
  if (configs.size() < 2) return configs;
  if (path_length(configs) < 1e-12) return {configs.front(), configs.back()};
  std::vector<JointConfig> out;
  if (use_spline) {
    CubicSpline spline(configs);
    int dense = std::max<int>(2000, 50 * static_cast<int>(configs.size()));
    out = resample_curve(spline, spline.length_parameter(), dense, step);
  } else {
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < configs.size(); ++i) cum.push_back(cum.back() + (configs[i] - configs[i - 1]).norm());
    auto polyline = [&](double s) -> JointConfig {
      if (s <= 0.0) return configs.front();
      if (s >= cum.back()) return configs.back();
      std::size_t k = std::upper_bound(cum.begin(), cum.end(), s) - cum.begin() - 1;
      double span = cum[k + 1] - cum[k];
      double f = span > 0 ? (s - cum[k]) / span : 0.0;
      return configs[k] + f * (configs[k + 1] - configs[k]);
    };
    // Arc length equals the parameter on a polyline.
    const double total = cum.back();
    const int steps = std::max(1, static_cast<int>(std::ceil(total / step - 1e-9)));
    out.push_back(configs.front());
    for (int k = 1; k < steps; ++k) out.push_back(polyline(total * k / steps));
    out.push_back(configs.back());
  }
  out.front() = configs.front();
  out.back() = configs.back();
  return out;
}

}  // namespace mforge
