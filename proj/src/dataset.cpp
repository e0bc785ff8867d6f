#include "motion_forge/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

namespace mforge {

namespace {

using nlohmann::json;

json vec_to_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec3 vec3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

JointConfig joints_from_json(const json& j) {
  if (!j.is_array() || j.size() != kDof) throw std::invalid_argument("expected 7 joint values");
  JointConfig q;
  for (int i = 0; i < kDof; ++i) q[i] = j[i].get<double>();
  return q;
}

std::string_view primitive_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::cylinder: return "cylinder";
    case PrimitiveKind::floor: return "floor";
  }
  return "box";
}

PrimitiveKind primitive_kind(const std::string& s) {
  if (s == "box") return PrimitiveKind::box;
  if (s == "cylinder") return PrimitiveKind::cylinder;
  if (s == "floor") return PrimitiveKind::floor;
  throw std::invalid_argument("unknown primitive kind: " + s);
}

double json_number(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json manifest_to_json(const DatasetManifest& m) {
  return json{{"format_version", m.format_version},
              {"content", m.content},
              {"env_counts", m.env_counts},
              {"seed", m.seed},
              {"tool_version", m.tool_version},
              {"record_count", m.record_count},
              {"rejections", m.rejections}};
}

}  // namespace

PlanningProblem ProblemRecord::problem() const {
  PlanningProblem p;
  p.scene = scene;
  p.start = start;
  p.target = original_target;
  p.target_volume = target_volume;
  p.problem_id = problem_id;
  return p;
}

PlanningProblem ProblemRecord::solved_problem() const {
  PlanningProblem p = problem();
  if (revised_target) p.target = *revised_target;
  return p;
}

ProblemRecord ProblemRecord::from_problem(const PlanningProblem& p) {
  ProblemRecord r;
  r.problem_id = p.problem_id;
  r.scene = p.scene;
  r.start = p.start;
  r.original_target = p.target;
  r.target_volume = p.target_volume;
  return r;
}

json pose_to_json(const Pose& p) {
  json r = json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(p.rotation(i, k));
  return json{{"R", r}, {"t", vec_to_json(p.translation)}};
}

Pose pose_from_json(const json& j) {
  const json& r = j.at("R");
  if (!r.is_array() || r.size() != 9) throw std::invalid_argument("pose rotation needs 9 numbers");
  Pose p;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) p.rotation(i, k) = r[3 * i + k].get<double>();
  p.translation = vec3_from_json(j.at("t"));
  return p;
}

json scene_to_json(const Scene& s) {
  json prims = json::array();
  for (const auto& p : s.primitives) {
    prims.push_back({{"kind", primitive_name(p.kind)}, {"pose", pose_to_json(p.pose)}, {"dims", vec_to_json(p.dims)}});
  }
  json vols = json::array();
  for (const auto& v : s.goal_volumes) {
    vols.push_back({{"label", v.label}, {"frame", pose_to_json(v.frame)}, {"half_extents", vec_to_json(v.half_extents)}});
  }
  return json{{"env_kind", to_string(s.env_kind)}, {"rng_seed", s.rng_seed}, {"primitives", prims}, {"goal_volumes", vols}};
}

Scene scene_from_json(const json& j) {
  Scene s;
  s.env_kind = env_kind_from_string(j.at("env_kind").get<std::string>());
  s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  for (const auto& p : j.at("primitives")) {
    Primitive prim;
    prim.kind = primitive_kind(p.at("kind").get<std::string>());
    prim.pose = pose_from_json(p.at("pose"));
    prim.dims = vec3_from_json(p.at("dims"));
    s.primitives.push_back(prim);
  }
  for (const auto& v : j.at("goal_volumes")) {
    GoalVolume g;
    g.label = v.at("label").get<std::string>();
    g.frame = pose_from_json(v.at("frame"));
    g.half_extents = vec3_from_json(v.at("half_extents"));
    s.goal_volumes.push_back(g);
  }
  s.validate();
  return s;
}

json record_to_json(const ProblemRecord& r) {
  json j{{"v", kFormatVersion},
         {"problem_id", r.problem_id},
         {"scene", scene_to_json(r.scene)},
         {"start", vec_to_json(r.start)},
         {"original_target", pose_to_json(r.original_target)},
         {"target_volume", r.target_volume}};
  if (r.revised_target) j["revised_target"] = pose_to_json(*r.revised_target);
  if (r.trajectory) {
    json configs = json::array();
    for (const auto& q : r.trajectory->configs) configs.push_back(vec_to_json(q));
    j["trajectory"] = {{"dt", r.trajectory->dt}, {"provenance", to_string(r.trajectory->provenance)}, {"configs", configs}};
  }
  if (r.validation) {
    const auto& v = *r.validation;
    j["validation"] = {{"collision_free", v.collision_free},
                       {"within_limits", v.within_limits},
                       {"max_jerk", v.max_jerk},
                       {"divergence", v.divergence},
                       {"verdict", v.verdict}};
  }
  return j;
}

ProblemRecord record_from_json(const json& j) {
  if (j.at("v").get<int>() != kFormatVersion) throw VersionMismatch("record format version differs");
  ProblemRecord r;
  r.problem_id = j.at("problem_id").get<std::uint64_t>();
  r.scene = scene_from_json(j.at("scene"));
  r.start = joints_from_json(j.at("start"));
  r.original_target = pose_from_json(j.at("original_target"));
  r.target_volume = j.at("target_volume").get<std::string>();
  if (j.contains("revised_target")) r.revised_target = pose_from_json(j["revised_target"]);
  if (j.contains("trajectory")) {
    const json& t = j["trajectory"];
    Trajectory traj;
    traj.dt = t.at("dt").get<double>();
    traj.provenance = provenance_from_string(t.at("provenance").get<std::string>());
    for (const auto& q : t.at("configs")) traj.configs.push_back(joints_from_json(q));
    traj.validate();
    r.trajectory = std::move(traj);
  }
  if (j.contains("validation")) {
    const json& v = j["validation"];
    ValidationReport rep;
    rep.collision_free = v.at("collision_free").get<bool>();
    rep.within_limits = v.at("within_limits").get<bool>();
    rep.max_jerk = v.at("max_jerk").get<double>();
    rep.divergence = v.at("divergence").get<double>();
    rep.verdict = v.at("verdict").get<bool>();
    r.validation = rep;
  }
  return r;
}

std::filesystem::path manifest_path(const std::filesystem::path& records) {
  return std::filesystem::path(records.string() + ".manifest.json");
}

std::filesystem::path timings_path(const std::filesystem::path& records) {
  return std::filesystem::path(records.string() + ".timings.jsonl");
}

RecordWriter::RecordWriter(const std::filesystem::path& path, DatasetManifest manifest)
    : path_(path), out_(path, std::ios::binary), timings_(timings_path(path), std::ios::binary),
      manifest_(std::move(manifest)) {
  if (!out_ || !timings_) throw std::runtime_error("cannot open for writing: " + path.string());
  manifest_.record_count = 0;
  manifest_.env_counts.clear();
}

RecordWriter::~RecordWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void RecordWriter::write(const ProblemRecord& r) {
  out_ << record_to_json(r).dump() << '\n';
  timings_ << json{{"problem_id", r.problem_id}, {"planning_time", r.planning_time}}.dump() << '\n';
  ++manifest_.record_count;
  ++manifest_.env_counts[std::string(to_string(r.scene.env_kind))];
}

void RecordWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.close();
  timings_.close();
  std::ofstream m(manifest_path(path_), std::ios::binary);
  m << manifest_to_json(manifest_).dump(2) << '\n';
  if (!out_ || !m) throw std::runtime_error("failed writing dataset: " + path_.string());
}

DatasetManifest read_manifest(const std::filesystem::path& records) {
  std::ifstream in(manifest_path(records));
  if (!in) throw VersionMismatch("missing manifest for " + records.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw VersionMismatch(std::string("unreadable manifest: ") + e.what());
  }
  DatasetManifest m;
  m.format_version = j.value("format_version", 0);
  if (m.format_version != kFormatVersion) {
    throw VersionMismatch("dataset format_version " + std::to_string(m.format_version) + " is not supported");
  }
  try {
    m.content = j.at("content").get<std::string>();
    m.env_counts = j.at("env_counts").get<std::map<std::string, int>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.record_count = j.at("record_count").get<long>();
    m.rejections = j.value("rejections", std::map<std::string, int>{});
  } catch (const json::exception& e) {
    throw VersionMismatch(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

RecordReader::RecordReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary), manifest_(read_manifest(path)) {
  if (!in_) throw std::runtime_error("cannot open records: " + path.string());
  timings_.open(timings_path(path), std::ios::binary);
}

std::optional<ProblemRecord> RecordReader::next() {
  std::string text;
  while (std::getline(in_, text)) {
    ++line_;
    if (text.empty()) continue;
    ProblemRecord r;
    try {
      r = record_from_json(json::parse(text));
    } catch (const VersionMismatch&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptRecord(line_, e.what());
    }
    if (timings_) {
      std::string t;
      if (std::getline(timings_, t) && !t.empty()) {
        try {
          json tj = json::parse(t);
          if (tj.at("problem_id").get<std::uint64_t>() == r.problem_id) r.planning_time = tj.at("planning_time").get<double>();
        } catch (const std::exception&) {
        }
      }
    }
    ++read_;
    return r;
  }
  if (read_ != manifest_.record_count) {
    throw IntegrityError("manifest lists " + std::to_string(manifest_.record_count) + " records but " +
                         path_.string() + " holds " + std::to_string(read_));
  }
  return std::nullopt;
}

void write_records(const std::filesystem::path& path, const std::vector<ProblemRecord>& records,
                   DatasetManifest manifest) {
  RecordWriter w(path, std::move(manifest));
  for (const auto& r : records) w.write(r);
  w.close();
}

std::vector<ProblemRecord> read_records(const std::filesystem::path& path) {
  RecordReader reader(path);
  std::vector<ProblemRecord> out;
  while (auto r = reader.next()) out.push_back(std::move(*r));
  return out;
}

std::vector<TrainingExample> examples_from_records(const std::vector<ProblemRecord>& records,
                                                   std::size_t max_examples) {
  std::vector<TrainingExample> out;
  long id = 0;
  for (const auto& r : records) {
    if (!r.trajectory) continue;
    auto scene = std::make_shared<const Scene>(r.scene);
    Pose target = r.revised_target ? *r.revised_target : r.original_target;
    const auto& c = r.trajectory->configs;
    for (std::size_t t = 0; t + 1 < c.size(); ++t) {
      if (max_examples && out.size() >= max_examples) return out;
      TrainingExample ex;
      ex.scene = scene;
      ex.q_t = c[t];
      ex.q_next = c[t + 1];
      ex.target = target;
      ex.id = id++;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

Rng problem_stream(std::uint64_t seed, std::uint64_t problem_id, std::uint64_t purpose) {
  return Rng::stream(seed, problem_id, purpose);
}

PlanningProblem generate_problem(EnvKind kind, std::uint64_t seed, std::uint64_t problem_id, const RobotModel& robot,
                                 int max_retries) {
  const auto kind_tag = static_cast<std::uint64_t>(kind) << 32;
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    Rng rng = problem_stream(seed, problem_id, kind_tag | (static_cast<std::uint64_t>(attempt) << 8) |
                                                   static_cast<std::uint64_t>(StreamPurpose::scene));
    Scene scene;
    try {
      scene = generate_scene(kind, rng);
    } catch (const GenerationExhausted&) {
      continue;
    }
    auto problem = sample_problem(scene, robot, rng);
    if (!problem) continue;
    problem->problem_id = problem_id;
    return *problem;
  }
  throw GenerationExhausted("no valid problem for id " + std::to_string(problem_id));
}

json rollout_to_json(std::uint64_t problem_id, const RolloutResult& r) {
  return json{{"problem_id", problem_id},
              {"success", success_check(r)},
              {"terminated_by", to_string(r.terminated_by)},
              {"steps", static_cast<long>(r.trajectory.configs.size()) - 1},
              {"final_pos_err", r.final_pos_err},
              {"final_ori_err", r.final_ori_err},
              {"env_collision", r.env_collision},
              {"self_collision", r.self_collision},
              {"joint_violation", r.joint_violation},
              {"in_correct_volume", r.in_correct_volume},
              {"sparc_joint", number_or_null(r.sparc_joint)},
              {"sparc_ee", number_or_null(r.sparc_ee)},
              {"wall_time", r.wall_time}};
}

RolloutResult rollout_from_json(const json& j) {
  RolloutResult r;
  r.terminated_by = j.at("terminated_by").get<std::string>() == "target_reached" ? Termination::target_reached
                                                                               : Termination::step_budget;
  r.final_pos_err = j.at("final_pos_err").get<double>();
  r.final_ori_err = j.at("final_ori_err").get<double>();
  r.env_collision = j.at("env_collision").get<bool>();
  r.self_collision = j.at("self_collision").get<bool>();
  r.joint_violation = j.at("joint_violation").get<bool>();
  r.in_correct_volume = j.at("in_correct_volume").get<bool>();
  r.sparc_joint = json_number(j.at("sparc_joint"));
  r.sparc_ee = json_number(j.at("sparc_ee"));
  r.wall_time = j.at("wall_time").get<double>();
  return r;
}

}  // namespace mforge
