#include "motion_forge/eval_metrics.hpp"

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

namespace mforge {

namespace {

using Clock = std::chrono::steady_clock;

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double sparc_or_nan(const std::vector<double>& speed, double fs) {
  if (speed.size() < 8) return std::numeric_limits<double>::quiet_NaN();
  try {
    return sparc(speed, fs);
  } catch (const DegenerateProfile&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

bool in_volume(const PlanningProblem& problem, const Vec3& p) {
  bool inside_target = false;
  for (const auto& v : problem.scene.goal_volumes) {
    bool inside = v.contains(p);
    if (v.label == problem.target_volume) inside_target = inside;
    else if (inside) return false;
  }
  return problem.target_volume.empty() ? true : inside_target;
}

SceneFn constant_scene(const Scene& scene) {
  auto shared = std::make_shared<const Scene>(scene);
  return [shared](double) { return *shared; };
}

}  // namespace

std::string_view to_string(Termination t) {
  return t == Termination::target_reached ? "target_reached" : "step_budget";
}

std::string_view to_string(DynamicSpeed s) {
  switch (s) {
    case DynamicSpeed::off: return "off";
    case DynamicSpeed::slow: return "slow";
    case DynamicSpeed::medium: return "medium";
    case DynamicSpeed::fast: return "fast";
  }
  return "off";
}

DynamicSpeed dynamic_speed_from_string(std::string_view s) {
  if (s == "off") return DynamicSpeed::off;
  if (s == "slow") return DynamicSpeed::slow;
  if (s == "medium") return DynamicSpeed::medium;
  if (s == "fast") return DynamicSpeed::fast;
  throw std::invalid_argument("unknown dynamic speed: " + std::string(s));
}

double dynamic_speed_value(DynamicSpeed s) {
  switch (s) {
    case DynamicSpeed::off: return 0.0;
    case DynamicSpeed::slow: return 0.02;
    case DynamicSpeed::medium: return 0.06;
    case DynamicSpeed::fast: return 0.12;
  }
  return 0.0;
}

int RolloutConfig::step_budget() const { return static_cast<int>(std::ceil(horizon / dt - 1e-9)); }

PolicyInput observe(const Scene& scene, const RobotModel& robot, const JointConfig& q, const Pose& target,
                    const RolloutConfig& config, const std::vector<Vec3>* cached_obstacles, Rng& rng) {
  std::vector<Vec3> obstacles;
  if (cached_obstacles) {
    obstacles = *cached_obstacles;
  } else if (config.partial_view) {
    obstacles = render_partial_cloud(scene, *config.partial_view, config.budget.obstacle, rng);
  } else {
    obstacles = sample_surface_cloud(scene, config.budget.obstacle, rng);
  }
  PolicyInput in = make_input(robot, q, obstacles, target, config.budget, rng);
  if (config.cloud_noise > 0.0) {
    for (Eigen::Index i = 0; i < in.cloud.points.rows(); ++i) {
      Vec3 n(rng.normal(), rng.normal(), rng.normal());
      in.cloud.points.row(i) += config.cloud_noise * n.transpose();
      in.cloud.features.block<1, 3>(i, 3) = in.cloud.points.row(i);
    }
  }
  return in;
}

Controller neural_controller(const PolicyParams& params, const RobotModel& robot, const Pose& target,
                             const RolloutConfig& config) {
  auto cache = std::make_shared<std::optional<std::vector<Vec3>>>();
  return [&params, &robot, target, config, cache](int, const Scene& scene, const JointConfig& q, Rng& rng) {
    if (!config.dynamic && !*cache) {
      *cache = config.partial_view ? render_partial_cloud(scene, *config.partial_view, config.budget.obstacle, rng)
                                   : sample_surface_cloud(scene, config.budget.obstacle, rng);
    }
    PolicyInput in = observe(scene, robot, q, target, config, *cache ? &**cache : nullptr, rng);
    Joints delta = policy_forward(params, in.cloud, in.qn, rng);
    return policy_step(robot, q, delta);
  };
}

Controller replay_controller(const Trajectory& traj) {
  auto configs = std::make_shared<const std::vector<JointConfig>>(traj.configs);
  return [configs](int step, const Scene&, const JointConfig&, Rng&) {
    std::size_t i = std::min(static_cast<std::size_t>(step) + 1, configs->size() - 1);
    return (*configs)[i];
  };
}

Controller straight_line_controller(const JointConfig& goal, double joint_speed, double dt) {
  const double step = joint_speed * dt;
  return [goal, step](int, const Scene&, const JointConfig& q, Rng&) {
    Joints d = goal - q;
    double n = d.norm();
    if (n <= step) return JointConfig(goal);
    return JointConfig(q + d * (step / n));
  };
}

Controller zero_controller() {
  return [](int, const Scene&, const JointConfig& q, Rng&) { return q; };
}

Controller straight_line_baseline(const PlanningProblem& problem, const RobotModel& robot, std::uint64_t seed,
                                  double joint_speed, double dt) {
  Rng rng = Rng::stream(seed, problem.problem_id, 0x4c494e45ULL);
  IkOptions ik;
  ik.seed = problem.start;
  ik.max_attempts = 200;
  auto goal = ik_solve(robot, problem.target, problem.scene, rng, ik);
  if (!goal) return zero_controller();
  return straight_line_controller(*goal, joint_speed, dt);
}

RolloutResult rollout(const Controller& controller, const PlanningProblem& problem, const RobotModel& robot,
                      const RolloutConfig& config, const SceneFn& scene_fn) {
  auto t0 = Clock::now();
  SceneFn fn = scene_fn ? scene_fn : constant_scene(problem.scene);
  Rng rng = Rng::stream(config.seed, problem.problem_id, 0x524f4c4cULL);
  RolloutResult r;
  r.trajectory.dt = config.dt;
  r.trajectory.provenance = Provenance::policy;
  r.trajectory.configs.push_back(problem.start);
  const int budget = config.step_budget();
  JointConfig q = problem.start;
  double step_time = 0.0;
  int steps = 0;
  std::optional<Scene> static_scene;
  for (int step = 0;; ++step) {
    if ((end_effector_pose(robot, q).translation - problem.target.translation).norm() <= config.reach_tolerance) {
      r.terminated_by = Termination::target_reached;
      break;
    }
    if (step >= budget) break;
    auto ts = Clock::now();
    if (!static_scene || config.dynamic) static_scene = fn(step * config.dt);
    q = controller(step, *static_scene, q, rng);
    step_time += std::chrono::duration<double>(Clock::now() - ts).count();
    ++steps;
    r.trajectory.configs.push_back(q);
  }
  if (r.trajectory.configs.size() == 1) r.trajectory.configs.push_back(q);

  Pose ee = end_effector_pose(robot, q);
  r.final_pos_err = (ee.translation - problem.target.translation).norm();
  r.final_ori_err = orientation_error(ee.rotation, problem.target.rotation);
  CollisionFlags flags = collision_ensemble(r.trajectory, problem, robot, config.dynamic ? fn : SceneFn{});
  r.env_collision = flags.env;
  r.self_collision = flags.self;
  r.joint_violation = std::any_of(r.trajectory.configs.begin(), r.trajectory.configs.end(),
                                  [&](const JointConfig& c) { return !robot.within_limits(c, 1e-9); });
  r.in_correct_volume = in_volume(problem, ee.translation);
  r.sparc_joint = sparc_or_nan(joint_speed_profile(r.trajectory), 1.0 / config.dt);
  r.sparc_ee = sparc_or_nan(ee_speed_profile(r.trajectory, robot), 1.0 / config.dt);
  r.mean_step_time = steps ? step_time / steps : 0.0;
  r.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

RolloutResult rollout(const PolicyParams& params, const PlanningProblem& problem, const RobotModel& robot,
                      const RolloutConfig& config, const SceneFn& scene_fn) {
  return rollout(neural_controller(params, robot, problem.target, config), problem, robot, config, scene_fn);
}

bool success_check(const RolloutResult& result, const SuccessThresholds& thresholds) {
  return result.final_pos_err <= thresholds.position && result.final_ori_err <= thresholds.orientation &&
         !result.env_collision && !result.self_collision && !result.joint_violation && result.in_correct_volume;
}

double orientation_error(const Mat3& r_final, const Mat3& r_target) {
  double c = ((r_target.transpose() * r_final).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

double sparc(const std::vector<double>& speed, double fs, const SparcOptions& options) {
  if (speed.size() < 8) throw std::invalid_argument("sparc: need at least 8 samples");
  if (!(fs > 0.0)) throw std::invalid_argument("sparc: sampling rate must be positive");
  if (std::all_of(speed.begin(), speed.end(), [](double v) { return v == 0.0; })) throw DegenerateProfile();
  const int n = static_cast<int>(speed.size());
  const int nfft = 1 << (static_cast<int>(std::ceil(std::log2(static_cast<double>(n)))) + options.pad_level);
  std::vector<double> in(nfft, 0.0);
  std::copy(speed.begin(), speed.end(), in.begin());
  const int bins = nfft / 2 + 1;
  std::vector<fftw_complex> out(bins);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(nfft, in.data(), out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  std::vector<double> mag(bins);
  for (int k = 0; k < bins; ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  const double dc = mag[0];
  if (dc == 0.0) throw DegenerateProfile();
  const double df = fs / nfft;
  int last_in_band = 0;
  for (int k = 0; k < bins && k * df <= options.max_cutoff; ++k) last_in_band = k;
  int cutoff = 0;
  for (int k = 0; k <= last_in_band; ++k) {
    if (mag[k] / dc >= options.amplitude_threshold) cutoff = k;
  }
  if (cutoff == 0) return 0.0;
  const double span = cutoff * df;
  double arc = 0.0;
  for (int k = 1; k <= cutoff; ++k) {
    double dx = df / span;
    double dy = (mag[k] - mag[k - 1]) / dc;
    arc += std::sqrt(dx * dx + dy * dy);
  }
  return -arc;
}

std::vector<double> joint_speed_profile(const Trajectory& traj) {
  std::vector<double> v;
  for (std::size_t i = 1; i < traj.configs.size(); ++i) v.push_back((traj.configs[i] - traj.configs[i - 1]).norm() / traj.dt);
  return v;
}

std::vector<double> ee_speed_profile(const Trajectory& traj, const RobotModel& robot) {
  std::vector<double> v;
  Vec3 prev = end_effector_pose(robot, traj.configs.front()).translation;
  for (std::size_t i = 1; i < traj.configs.size(); ++i) {
    Vec3 p = end_effector_pose(robot, traj.configs[i]).translation;
    v.push_back((p - prev).norm() / traj.dt);
    prev = p;
  }
  return v;
}

std::vector<SurfaceAnchor> dense_link_points(const RobotModel& robot, int per_link) {
  std::vector<SurfaceAnchor> out;
  Rng rng(0x64656e7365ULL);
  for (int link = 0; link < kLinkCount; ++link) {
    std::vector<const CollisionSphere*> spheres;
    double total = 0.0;
    for (const auto& s : robot.spheres) {
      if (s.link == link) {
        spheres.push_back(&s);
        total += s.radius * s.radius;
      }
    }
    if (spheres.empty()) continue;
    int made = 0;
    for (int guard = 0; made < per_link && guard < 1000 * per_link; ++guard) {
      double u = rng.uniform() * total;
      const CollisionSphere* s = spheres.back();
      for (const auto* c : spheres) {
        if (u < c->radius * c->radius) {
          s = c;
          break;
        }
        u -= c->radius * c->radius;
      }
      Vec3 d(rng.normal(), rng.normal(), rng.normal());
      Vec3 p = s->center + s->radius * d.normalized();
      bool covered = false;
      for (const auto* c : spheres) {
        if (c != s && (p - c->center).norm() < c->radius) covered = true;
      }
      if (covered) continue;
      out.push_back({link, p});
      ++made;
    }
  }
  return out;
}

CollisionFlags collision_ensemble(const Trajectory& traj, const PlanningProblem& problem, const RobotModel& robot,
                                  const SceneFn& scene_fn) {
  const std::vector<SurfaceAnchor> dense = dense_link_points(robot);
  CollisionFlags flags;
  for (std::size_t k = 0; k < traj.configs.size(); ++k) {
    Scene dynamic_scene;
    const Scene* scene = &problem.scene;
    if (scene_fn) {
      dynamic_scene = scene_fn(static_cast<double>(k) * traj.dt);
      scene = &dynamic_scene;
    }
    LinkPoses poses = forward_kinematics(robot, traj.configs[k]);
    if (!flags.env && environment_collision(robot, poses, *scene)) {
      for (const auto& a : dense) {
        if (scene->distance(poses[a.link].apply(a.offset)) < 0.0) {
          flags.env = true;
          break;
        }
      }
    }
    if (!flags.self && self_collision(robot, poses)) {
      for (const auto& [la, lb] : robot.self_collision_pairs) {
        for (const auto& a : dense) {
          if (a.link != la) continue;
          Vec3 p = poses[la].apply(a.offset);
          for (const auto& s : robot.spheres) {
            if (s.link == lb && (p - poses[lb].apply(s.center)).norm() < s.radius) flags.self = true;
          }
        }
      }
    }
    if (flags.env && flags.self) break;
  }
  return flags;
}

SceneFn dynamic_block_scene(const PlanningProblem& problem, const RobotModel& robot, DynamicSpeed speed) {
  if (speed == DynamicSpeed::off) return constant_scene(problem.scene);
  const Vec3 p0 = end_effector_pose(robot, problem.start).translation;
  const Vec3 p1 = problem.target.translation;
  Vec3 mid = 0.5 * (p0 + p1);
  Vec3 along = p1 - p0;
  Vec3 lateral = Vec3::UnitZ().cross(along);
  lateral.z() = 0.0;
  lateral = lateral.norm() > 1e-9 ? lateral.normalized() : Vec3::UnitY();
  const double amplitude = 0.2;
  const double half = 0.05;
  Vec3 center = mid + 0.2 * lateral;
  for (double offset : {0.2, -0.2, 0.35, -0.35}) {
    Scene probe = problem.scene;
    Vec3 c = mid + offset * lateral;
    probe.primitives.push_back(Primitive::box(Pose{Mat3::Identity(), c}, Vec3::Constant(half)));
    if (!config_in_collision(robot, problem.start, probe)) {
      center = c;
      break;
    }
  }
  const double omega = dynamic_speed_value(speed) / amplitude;
  const double omega_x = omega / std::sqrt(2.0);
  auto base = std::make_shared<const Scene>(problem.scene);
  return [base, center, amplitude, omega, omega_x, half](double t) {
    Scene s = *base;
    Vec3 c = center + Vec3(amplitude * std::sin(omega_x * t), amplitude * std::sin(omega * t), 0.0);
    s.primitives.push_back(Primitive::box(Pose{Mat3::Identity(), c}, Vec3::Constant(half)));
    return s;
  };
}

MetricsReport summarize(const std::vector<RolloutResult>& results) {
  MetricsReport m;
  m.problems = static_cast<int>(results.size());
  std::vector<double> pos, ori, times;
  int env = 0, self = 0, smooth = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    bool ok = success_check(r);
    m.successes += ok;
    env += r.env_collision;
    self += r.self_collision;
    m.target_reached += r.terminated_by == Termination::target_reached;
    if (std::isfinite(r.sparc_joint) && std::isfinite(r.sparc_ee)) {
      ++m.smooth_evaluated;
      smooth += r.sparc_joint < -1.6 && r.sparc_ee < -1.6;
    }
    pos.push_back(r.final_pos_err);
    ori.push_back(r.final_ori_err);
    if (ok) times.push_back(r.wall_time);
  }
  if (m.problems > 0) {
    m.success_rate = static_cast<double>(m.successes) / m.problems;
    m.env_collision_rate = static_cast<double>(env) / m.problems;
    m.self_collision_rate = static_cast<double>(self) / m.problems;
  }
  m.smooth_rate = m.smooth_evaluated ? static_cast<double>(smooth) / m.smooth_evaluated : 0.0;
  m.pos_err_p50 = quantile(pos, 0.5);
  m.pos_err_p90 = quantile(pos, 0.9);
  m.ori_err_p50 = quantile(ori, 0.5);
  m.ori_err_p90 = quantile(ori, 0.9);
  if (!times.empty()) {
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(times.size());
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    m.time_mean = mean;
    m.time_std = std::sqrt(var / static_cast<double>(times.size()));
  }
  return m;
}

std::string MetricsReport::to_json() const {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"problems", problems},
                      {"successes", successes},
                      {"success_rate", success_rate},
                      {"env_collision_rate", env_collision_rate},
                      {"self_collision_rate", self_collision_rate},
                      {"smooth_rate", smooth_rate},
                      {"smooth_evaluated", smooth_evaluated},
                      {"target_reached", target_reached},
                      {"pos_err_p50", num(pos_err_p50)},
                      {"pos_err_p90", num(pos_err_p90)},
                      {"ori_err_p50", num(ori_err_p50)},
                      {"ori_err_p90", num(ori_err_p90)},
                      {"time_mean", time_mean},
                      {"time_std", time_std}};
  return j.dump();
}

std::string MetricsReport::to_table(const std::string& title) const {
  std::ostringstream os;
  os << std::fixed;
  os << std::left << std::setw(12) << "controller" << std::right << std::setw(9) << "problems" << std::setw(10)
     << "success%" << std::setw(9) << "env%" << std::setw(9) << "self%" << std::setw(10) << "smooth%" << std::setw(11)
     << "pos p50" << std::setw(11) << "ori p50" << std::setw(16) << "time (s)" << "\n";
  os << std::left << std::setw(12) << title << std::right << std::setw(9) << problems << std::setprecision(2)
     << std::setw(10) << 100.0 * success_rate << std::setw(9) << 100.0 * env_collision_rate << std::setw(9)
     << 100.0 * self_collision_rate << std::setw(10) << 100.0 * smooth_rate << std::setprecision(4) << std::setw(11)
     << pos_err_p50 << std::setw(11) << ori_err_p50 << std::setw(9) << std::setprecision(3) << time_mean << " ± "
     << std::setprecision(3) << time_std << "\n";
  return os.str();
}

std::vector<RolloutResult> run_rollouts(const ControllerFactory& factory, const std::vector<PlanningProblem>& problems,
                                        const RobotModel& robot, const RolloutConfig& config, DynamicSpeed dynamic) {
  std::vector<RolloutResult> results(problems.size());
  std::atomic<std::size_t> next{0};
  RolloutConfig cfg = config;
  cfg.dynamic = config.dynamic || dynamic != DynamicSpeed::off;
  auto work = [&] {
    for (std::size_t i = next++; i < problems.size(); i = next++) {
      results[i] = rollout(factory(problems[i]), problems[i], robot, cfg,
                           dynamic_block_scene(problems[i], robot, dynamic));
    }
  };
  int workers = std::max(1, config.workers);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

MetricsReport evaluate_dataset(const PolicyParams& params, const std::vector<PlanningProblem>& problems,
                               const RobotModel& robot, const RolloutConfig& config, DynamicSpeed dynamic,
                               std::vector<RolloutResult>* results) {
  if (problems.empty()) throw std::invalid_argument("evaluate_dataset: no problems");
  RolloutConfig cfg = config;
  cfg.dynamic = config.dynamic || dynamic != DynamicSpeed::off;
  auto factory = [&](const PlanningProblem& p) { return neural_controller(params, robot, p.target, cfg); };
  auto r = run_rollouts(factory, problems, robot, config, dynamic);
  MetricsReport m = summarize(r);
  if (results) *results = std::move(r);
  return m;
}

}  // namespace mforge
