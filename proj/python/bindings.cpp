#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "motion_forge/dataset.hpp"
#include "motion_forge/eval_metrics.hpp"
#include "motion_forge/expert_global.hpp"
#include "motion_forge/expert_hybrid.hpp"
#include "motion_forge/policy.hpp"

namespace py = pybind11;
using namespace mforge;

namespace {

using ConfigRows = Eigen::Matrix<double, Eigen::Dynamic, kDof, Eigen::RowMajor>;

ConfigRows to_rows(const std::vector<JointConfig>& configs) {
  ConfigRows m(configs.size(), kDof);
  for (std::size_t i = 0; i < configs.size(); ++i) m.row(i) = configs[i].transpose();
  return m;
}

py::dict plan_dict(const PlanOutcome& o) {
  py::dict d;
  d["status"] = std::string(to_string(o.status));
  d["ok"] = o.ok();
  if (o.trajectory) {
    d["configs"] = to_rows(o.trajectory->configs);
    d["dt"] = o.trajectory->dt;
    d["planning_time"] = o.trajectory->planning_time;
  }
  return d;
}

py::dict rollout_dict(const RolloutResult& r) {
  py::dict d;
  d["configs"] = to_rows(r.trajectory.configs);
  d["terminated_by"] = std::string(to_string(r.terminated_by));
  d["final_pos_err"] = r.final_pos_err;
  d["final_ori_err"] = r.final_ori_err;
  d["env_collision"] = r.env_collision;
  d["self_collision"] = r.self_collision;
  d["joint_violation"] = r.joint_violation;
  d["in_correct_volume"] = r.in_correct_volume;
  d["sparc_joint"] = r.sparc_joint;
  d["sparc_ee"] = r.sparc_ee;
  d["success"] = success_check(r);
  return d;
}

Trajectory from_rows(const ConfigRows& rows, double dt) {
  Trajectory t;
  t.dt = dt;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) t.configs.push_back(rows.row(i).transpose());
  t.validate();
  return t;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Procedural motion planning problems, expert planners and a point-cloud policy";

  py::class_<RobotModel>(m, "Robot")
      .def_static("panda_like", &RobotModel::panda_like)
      .def_static("from_file", &read_robot_file, py::arg("path"))
      .def("save", [](const RobotModel& r, const std::filesystem::path& p) { write_robot_file(p, r); })
      .def_readonly("name", &RobotModel::name)
      .def_readonly("neutral", &RobotModel::neutral)
      .def_property_readonly("lower", &RobotModel::lower)
      .def_property_readonly("upper", &RobotModel::upper)
      .def("fk", [](const RobotModel& r, const JointConfig& q) {
        LinkPoses poses = forward_kinematics(r, q);
        std::vector<Mat4> out;
        for (const auto& p : poses) out.push_back(p.matrix());
        return out;
      }, py::arg("q"), "Link frames as 4x4 matrices, base first.")
      .def("ee_pose", [](const RobotModel& r, const JointConfig& q) { return end_effector_pose(r, q).matrix(); },
           py::arg("q"))
      .def("in_collision", [](const RobotModel& r, const JointConfig& q, const Scene& s) {
        return config_in_collision(r, q, s);
      }, py::arg("q"), py::arg("scene"));

  py::class_<Scene>(m, "Scene")
      .def_property_readonly("env_kind", [](const Scene& s) { return std::string(to_string(s.env_kind)); })
      .def_property_readonly("primitive_count", [](const Scene& s) { return s.primitives.size(); })
      .def_property_readonly("volumes", [](const Scene& s) {
        std::vector<std::string> out;
        for (const auto& v : s.goal_volumes) out.push_back(v.label);
        return out;
      })
      .def("sdf", [](const Scene& s, const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>& pts) {
        Eigen::VectorXd d(pts.rows());
        for (Eigen::Index i = 0; i < pts.rows(); ++i) d[i] = s.distance(pts.row(i).transpose());
        return d;
      }, py::arg("points"), "Signed distance of each row of an (N, 3) array.")
      .def("surface_cloud", [](const Scene& s, int n, std::uint64_t seed) {
        Rng rng(seed);
        auto pts = sample_surface_cloud(s, n, rng);
        Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> out(pts.size(), 3);
        for (std::size_t i = 0; i < pts.size(); ++i) out.row(i) = pts[i].transpose();
        return out;
      }, py::arg("n"), py::arg("seed") = 0);

  py::class_<PlanningProblem>(m, "Problem")
      .def_readonly("scene", &PlanningProblem::scene)
      .def_readonly("start", &PlanningProblem::start)
      .def_readonly("problem_id", &PlanningProblem::problem_id)
      .def_readonly("target_volume", &PlanningProblem::target_volume)
      .def_property_readonly("target", [](const PlanningProblem& p) { return p.target.matrix(); });

  m.def("generate_problem", [](const std::string& kind, std::uint64_t seed, std::uint64_t problem_id,
                               const RobotModel& robot) {
    return generate_problem(env_kind_from_string(kind), seed, problem_id, robot);
  }, py::arg("kind"), py::arg("seed"), py::arg("problem_id"), py::arg("robot"));

  m.def("plan_global", [](const PlanningProblem& p, const RobotModel& robot, std::uint64_t seed, double timeout) {
    GlobalPlannerOptions o;
    o.timeout = timeout;
    Rng rng = problem_stream(seed, p.problem_id, static_cast<std::uint64_t>(StreamPurpose::global_plan));
    py::gil_scoped_release release;
    PlanOutcome out = plan_global(p, robot, rng, o);
    py::gil_scoped_acquire acquire;
    return plan_dict(out);
  }, py::arg("problem"), py::arg("robot"), py::arg("seed") = 0, py::arg("timeout") = 20.0);

  m.def("plan_hybrid", [](const PlanningProblem& p, const RobotModel& robot, std::uint64_t seed) {
    Rng rng = problem_stream(seed, p.problem_id, static_cast<std::uint64_t>(StreamPurpose::hybrid_plan));
    HybridOutcome out;
    {
      py::gil_scoped_release release;
      out = plan_hybrid(p, robot, rng);
    }
    py::dict d = plan_dict(out.plan);
    if (out.revised) d["revised_target"] = out.revised->target.matrix();
    return d;
  }, py::arg("problem"), py::arg("robot"), py::arg("seed") = 0);

  py::class_<PolicyParams>(m, "Policy")
      .def_static("load", &PolicyParams::load, py::arg("path"))
      .def_static("zeros", [](const std::string& profile) { return PolicyParams::zeros(PolicyProfile::by_name(profile)); },
                  py::arg("profile") = "desk")
      .def_static("random", [](const std::string& profile, std::uint64_t seed) {
        Rng rng(seed);
        return PolicyParams::init(PolicyProfile::by_name(profile), rng);
      }, py::arg("profile") = "desk", py::arg("seed") = 0)
      .def("save", &PolicyParams::save, py::arg("path"))
      .def_property_readonly("parameter_count", &PolicyParams::parameter_count);

  m.def("rollout", [](const PolicyParams& params, const PlanningProblem& p, const RobotModel& robot, double horizon,
                      std::uint64_t seed) {
    RolloutConfig cfg;
    cfg.horizon = horizon;
    cfg.seed = seed;
    RolloutResult r;
    {
      py::gil_scoped_release release;
      r = rollout(params, p, robot, cfg, {});
    }
    return rollout_dict(r);
  }, py::arg("policy"), py::arg("problem"), py::arg("robot"), py::arg("horizon") = 20.0, py::arg("seed") = 0);

  m.def("replay", [](const ConfigRows& configs, double dt, const PlanningProblem& p, const RobotModel& robot) {
    RolloutConfig cfg;
    cfg.dt = dt;
    return rollout_dict(rollout(replay_controller(from_rows(configs, dt)), p, robot, cfg, {}));
  }, py::arg("configs"), py::arg("dt"), py::arg("problem"), py::arg("robot"));

  m.def("sparc", [](const std::vector<double>& speed, double fs) { return sparc(speed, fs); }, py::arg("speed"),
        py::arg("fs"));
  m.def("orientation_error", &orientation_error, py::arg("r_final"), py::arg("r_target"));

  m.def("read_problems", [](const std::filesystem::path& path) {
    std::vector<PlanningProblem> out;
    for (const auto& r : read_records(path)) out.push_back(r.solved_problem());
    return out;
  }, py::arg("path"), "Problems from a records file (revised targets where present).");

  py::register_exception<CorruptRecord>(m, "CorruptRecord");
  py::register_exception<VersionMismatch>(m, "VersionMismatch");
  py::register_exception<DegenerateProfile>(m, "DegenerateProfile", PyExc_ValueError);
}
