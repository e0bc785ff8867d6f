#pragma once

#include "motion_forge/eval_metrics.hpp"
#include "motion_forge/expert_global.hpp"
#include "motion_forge/scenegen.hpp"
#include "motion_forge/trajectory.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mforge {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kToolVersion = "motion_forge 0.1.0";

struct ProblemRecord {
  std::uint64_t problem_id = 0;
  Scene scene;
  JointConfig start = JointConfig::Zero();
  Pose original_target;
  std::string target_volume;
  std::optional<Pose> revised_target;
  std::optional<Trajectory> trajectory;
  std::optional<ValidationReport> validation;
  double planning_time = 0.0;  ///< kept in the timings sidecar, not the record line

  PlanningProblem problem() const;
  /// The problem the trajectory solves exactly (revised target when present).
  PlanningProblem solved_problem() const;
  static ProblemRecord from_problem(const PlanningProblem& p);
};

struct DatasetManifest {
  int format_version = kFormatVersion;
  std::string content = "problems";  ///< problems | demonstrations
  std::map<std::string, int> env_counts;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  long record_count = 0;
  std::map<std::string, int> rejections;
};

class CorruptRecord : public std::runtime_error {
 public:
  CorruptRecord(long line, const std::string& what)
      : std::runtime_error("corrupt record at line " + std::to_string(line) + ": " + what), line(line) {}
  long line;
};

class VersionMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Manifest and records disagree.
class IntegrityError : public VersionMismatch {
 public:
  using VersionMismatch::VersionMismatch;
};

nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const ProblemRecord& r);
ProblemRecord record_from_json(const nlohmann::json& j);

std::filesystem::path manifest_path(const std::filesystem::path& records);
std::filesystem::path timings_path(const std::filesystem::path& records);

/// Streams records to `path` (one JSON object per line); the manifest and
/// timings sidecars are written on close.
class RecordWriter {
 public:
  RecordWriter(const std::filesystem::path& path, DatasetManifest manifest);
  ~RecordWriter();
  RecordWriter(const RecordWriter&) = delete;
  RecordWriter& operator=(const RecordWriter&) = delete;

  void write(const ProblemRecord& r);
  void close();
  DatasetManifest& manifest() { return manifest_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::ofstream timings_;
  DatasetManifest manifest_;
  bool closed_ = false;
};

/// Reads records one at a time; checks the manifest before and after.
class RecordReader {
 public:
  explicit RecordReader(const std::filesystem::path& path);

  std::optional<ProblemRecord> next();
  const DatasetManifest& manifest() const { return manifest_; }
  long line() const { return line_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::ifstream timings_;
  DatasetManifest manifest_;
  long line_ = 0;
  long read_ = 0;
};

DatasetManifest read_manifest(const std::filesystem::path& records);
void write_records(const std::filesystem::path& path, const std::vector<ProblemRecord>& records,
                   DatasetManifest manifest);
std::vector<ProblemRecord> read_records(const std::filesystem::path& path);

/// Consecutive (q_t, q_{t+1}) pairs from demonstration records.
std::vector<TrainingExample> examples_from_records(const std::vector<ProblemRecord>& records,
                                                   std::size_t max_examples = 0);

/// Per-problem random stream: a pure function of (seed, problem_id, purpose).
Rng problem_stream(std::uint64_t seed, std::uint64_t problem_id, std::uint64_t purpose);

enum class StreamPurpose : std::uint64_t { scene = 1, problem = 2, global_plan = 3, hybrid_plan = 4 };

/// Scene plus sampled problem for id `problem_id`; retries with fresh
/// substreams. Throws GenerationExhausted when every retry fails.
PlanningProblem generate_problem(EnvKind kind, std::uint64_t seed, std::uint64_t problem_id, const RobotModel& robot,
                                 int max_retries = 50);

/// Per-rollout summary line (no trajectory).
nlohmann::json rollout_to_json(std::uint64_t problem_id, const RolloutResult& r);
RolloutResult rollout_from_json(const nlohmann::json& j);

}  // namespace mforge
