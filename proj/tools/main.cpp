#include "motion_forge/dataset.hpp"
#include "motion_forge/eval_metrics.hpp"
#include "motion_forge/expert_global.hpp"
#include "motion_forge/expert_hybrid.hpp"
#include "motion_forge/policy.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

using namespace mforge;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("MOTION_FORGE_SEED")) {
    try {
      std::size_t used = 0;
      std::uint64_t v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("MOTION_FORGE_SEED is not an unsigned integer: ") + env);
    }
  }
  return fallback;
}

RobotModel load_robot(const std::string& path) {
  if (path.empty()) return RobotModel::panda_like();
  try {
    return read_robot_file(path);
  } catch (const std::exception& e) {
    throw DataError(e.what());
  }
}

std::vector<ProblemRecord> load_records(const std::string& path) {
  if (!std::filesystem::exists(path)) throw DataError("no such file: " + path);
  return read_records(path);
}

template <class F>
void parallel_for(std::size_t n, int workers, F&& f) {
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr failure;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

struct GenArgs {
  std::string kind = "tabletop";
  int count = 10;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::uint64_t first_id = 0;
  int workers = 1;
  std::string robot;
};

int run_gen(const GenArgs& a) {
  EnvKind kind = env_kind_from_string(a.kind);
  if (a.count < 0) throw ConfigError("--count must be >= 0");
  const std::uint64_t seed = resolve_seed(a.seed, 0);
  RobotModel robot = load_robot(a.robot);
  std::vector<ProblemRecord> records(a.count);
  parallel_for(records.size(), a.workers, [&](std::size_t i) {
    records[i] = ProblemRecord::from_problem(generate_problem(kind, seed, a.first_id + i, robot));
  });
  DatasetManifest m;
  m.content = "problems";
  m.seed = seed;
  write_records(a.out, records, m);
  std::cerr << "gen: wrote " << records.size() << " " << a.kind << " problems to " << a.out << "\n";
  return 0;
}

struct PlanArgs {
  std::string expert = "global";
  std::string in, out;
  std::optional<double> timeout;
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::string robot;
};

int run_plan(const PlanArgs& a) {
  if (a.expert != "global" && a.expert != "hybrid") throw ConfigError("--expert must be global or hybrid");
  if (a.timeout && *a.timeout <= 0.0) throw ConfigError("--timeout must be positive");
  RobotModel robot = load_robot(a.robot);
  std::vector<ProblemRecord> input = load_records(a.in);
  const std::uint64_t seed = resolve_seed(a.seed, read_manifest(a.in).seed);
  std::sort(input.begin(), input.end(), [](const auto& x, const auto& y) { return x.problem_id < y.problem_id; });
  std::vector<std::optional<ProblemRecord>> results(input.size());
  std::vector<PlanStatus> statuses(input.size(), PlanStatus::success);
  parallel_for(input.size(), a.workers, [&](std::size_t i) {
    const PlanningProblem problem = input[i].problem();
    ProblemRecord rec = input[i];
    if (a.expert == "global") {
      GlobalPlannerOptions o;
      if (a.timeout) o.timeout = *a.timeout;
      Rng rng = problem_stream(seed, problem.problem_id, static_cast<std::uint64_t>(StreamPurpose::global_plan));
      PlanOutcome out = plan_global(problem, robot, rng, o);
      statuses[i] = out.status;
      if (!out.ok()) return;
      rec.trajectory = *out.trajectory;
      rec.validation = out.report;
      rec.planning_time = out.trajectory->planning_time;
    } else {
      HybridPlannerOptions o;
      if (a.timeout) o.search.timeout = *a.timeout;
      Rng rng = problem_stream(seed, problem.problem_id, static_cast<std::uint64_t>(StreamPurpose::hybrid_plan));
      HybridOutcome out = plan_hybrid(problem, robot, rng, o);
      statuses[i] = out.plan.status;
      if (!out.plan.ok()) return;
      rec.trajectory = *out.plan.trajectory;
      rec.revised_target = out.revised->target;
      rec.validation = out.plan.report;
      rec.planning_time = out.plan.trajectory->planning_time;
    }
    results[i] = std::move(rec);
  });
  DatasetManifest m;
  m.content = "demonstrations";
  m.seed = seed;
  RecordWriter writer(a.out, m);
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i]) writer.write(*results[i]);
    else ++writer.manifest().rejections[std::string(to_string(statuses[i]))];
  }
  long kept = writer.manifest().record_count;
  auto rejections = writer.manifest().rejections;
  writer.close();
  std::cerr << "plan(" << a.expert << "): " << kept << "/" << input.size() << " problems solved";
  for (const auto& [k, v] : rejections) std::cerr << ", " << k << " " << v;
  std::cerr << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string profile = "desk";
  std::string config;
  std::string out;
  std::size_t max_examples = 0;
  std::optional<int> epochs;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  std::string robot;
};

int run_train(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    try {
      cfg = TrainConfig::read(a.config);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("bad training config: ") + e.what());
    }
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (cfg.epochs < 1) throw ConfigError("--epochs must be >= 1");
  cfg.seed = resolve_seed(a.seed, cfg.seed);
  if (a.profile != "desk" && a.profile != "paper-shapes") throw ConfigError("--profile must be desk or paper-shapes");
  RobotModel robot = load_robot(a.robot);
  std::vector<TrainingExample> examples = examples_from_records(load_records(a.data), a.max_examples);
  if (examples.empty()) throw DataError("no demonstrations in " + a.data);

  if (a.profile == "paper-shapes") {
    Rng rng(cfg.seed);
    PolicyParams params = PolicyParams::init(PolicyProfile::paper(), rng);
    PolicyInput in = assemble_input(examples.front(), robot, cfg.budget, rng, 0.0);
    Joints delta = policy_forward(params, in.cloud, in.qn, rng);
    const auto& p = params.profile.encoder;
    std::cout << "paper profile: " << params.parameter_count() << " parameters\n";
    for (int b = 0; b < 3; ++b) {
      const auto& s = p.blocks[b];
      std::cout << "  set abstraction " << b + 1 << ": samples " << (s.global() ? 1 : s.samples) << ", radius "
                << s.radius << ", group " << (s.global() ? in.cloud.size() : s.max_group) << ", widths";
      for (int w : s.widths) std::cout << " " << w;
      std::cout << "\n";
    }
    std::cout << "  head:";
    for (int w : p.head) std::cout << " " << w;
    std::cout << "\n  displacement: " << delta.transpose() << "\n";
    std::cerr << "train: paper-shapes runs one forward pass only; no checkpoint written\n";
    return 0;
  }

  Rng init = Rng::stream(cfg.seed, 0x494e4954ULL, 0);
  PolicyParams params = PolicyParams::init(PolicyProfile::by_name(cfg.profile), init);
  std::cerr << "train: " << examples.size() << " examples, " << params.parameter_count() << " parameters\n";
  auto t0 = std::chrono::steady_clock::now();
  TrainResult r = train(params, examples, robot, cfg, [&](int epoch, const LossBreakdown& l) {
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "epoch " << epoch + 1 << "/" << cfg.epochs << "  bc " << l.bc << "  collision " << l.collision
              << "  total " << l.total << "  (" << s << " s)\n";
  }, a.workers);
  params.save(a.out);
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& l : r.curve) curve.push_back({{"bc", l.bc}, {"collision", l.collision}, {"total", l.total}});
  std::ofstream(a.out + ".loss.json") << nlohmann::json{{"seed", cfg.seed}, {"examples", examples.size()}, {"curve", curve}}.dump(2)
                                      << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string problems;
  std::string dynamic = "off";
  std::string partial_view = "off";
  std::string format = "table";
  std::string results;
  double noise = 0.0;
  int workers = 1;
  std::size_t max_problems = 0;
  std::optional<std::uint64_t> seed;
  std::string robot;
};

void print_report(const MetricsReport& m, const std::string& format, const std::string& title) {
  if (format == "machine") std::cout << m.to_json() << "\n";
  else std::cout << m.to_table(title);
}

int run_eval(const EvalArgs& a) {
  if (a.format != "table" && a.format != "machine") throw ConfigError("--format must be table or machine");
  if (a.partial_view != "off" && a.partial_view != "on") throw ConfigError("--partial-view must be off or on");
  DynamicSpeed dynamic;
  try {
    dynamic = dynamic_speed_from_string(a.dynamic);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (a.noise < 0.0) throw ConfigError("--noise must be >= 0");
  RobotModel robot = load_robot(a.robot);
  std::vector<ProblemRecord> records = load_records(a.problems);
  if (a.max_problems && records.size() > a.max_problems) records.resize(a.max_problems);
  if (records.empty()) throw DataError("no problems in " + a.problems);

  RolloutConfig cfg;
  cfg.seed = resolve_seed(a.seed, 0);
  cfg.workers = a.workers;
  cfg.cloud_noise = a.noise;
  if (a.partial_view == "on") cfg.partial_view = CameraConfig::default_view();

  if (!std::filesystem::exists(a.ckpt)) throw DataError("no such checkpoint: " + a.ckpt);
  std::string controller = "neural";
  {
    std::ifstream in(a.ckpt, std::ios::binary);
    char magic[8] = {};
    in.read(magic, 8);
    if (std::string(magic, 8) != "MFORGECK") {
      try {
        controller = nlohmann::json::parse(std::ifstream(a.ckpt)).at("controller").get<std::string>();
      } catch (const std::exception& e) {
        throw DataError("checkpoint is neither a parameter file nor a controller stub: " + a.ckpt);
      }
    }
  }
  std::vector<PlanningProblem> problems;
  for (const auto& r : records) problems.push_back(controller == "replay" ? r.solved_problem() : r.problem());

  std::optional<PolicyParams> params;
  ControllerFactory factory;
  if (controller == "neural") {
    params = PolicyParams::load(a.ckpt);
    RolloutConfig ncfg = cfg;
    ncfg.dynamic = dynamic != DynamicSpeed::off;
    factory = [&params, &robot, ncfg](const PlanningProblem& p) {
      return neural_controller(*params, robot, p.target, ncfg);
    };
  } else if (controller == "replay") {
    std::map<std::uint64_t, const Trajectory*> by_id;
    for (const auto& r : records) {
      if (!r.trajectory) throw DataError("replay needs demonstration records");
      by_id[r.problem_id] = &*r.trajectory;
    }
    factory = [by_id](const PlanningProblem& p) { return replay_controller(*by_id.at(p.problem_id)); };
  } else if (controller == "straight_line") {
    factory = [&robot, &cfg](const PlanningProblem& p) { return straight_line_baseline(p, robot, cfg.seed); };
  } else if (controller == "zero") {
    factory = [](const PlanningProblem&) { return zero_controller(); };
  } else {
    throw ConfigError("unknown controller stub: " + controller);
  }
  auto results = run_rollouts(factory, problems, robot, cfg, dynamic);
  if (!a.results.empty()) {
    std::ofstream out(a.results, std::ios::binary);
    for (std::size_t i = 0; i < results.size(); ++i) out << rollout_to_json(problems[i].problem_id, results[i]).dump() << "\n";
  }
  print_report(summarize(results), a.format, controller);
  return 0;
}

int run_metrics(const std::string& path, const std::string& format) {
  if (format != "table" && format != "machine") throw ConfigError("--format must be table or machine");
  std::ifstream in(path);
  if (!in) throw DataError("no such file: " + path);
  std::vector<RolloutResult> results;
  std::string line;
  long n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      results.push_back(rollout_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw CorruptRecord(n, e.what());
    }
  }
  if (results.empty()) throw DataError("no rollouts in " + path);
  print_report(summarize(results), format, "results");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-policy dataset generation, expert planning, training and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate planning problems");
  g->add_option("--kind", gen.kind, "tabletop | cubby | dresser")->check(CLI::IsMember({"tabletop", "cubby", "dresser"}));
  g->add_option("--count", gen.count, "Number of problems")->check(CLI::NonNegativeNumber);
  g->add_option("--seed", gen.seed, "Global seed (overrides MOTION_FORGE_SEED)");
  g->add_option("--out", gen.out, "Output records file")->required();
  g->add_option("--first-id", gen.first_id, "First problem id");
  g->add_option("--workers", gen.workers, "Worker threads")->check(CLI::PositiveNumber);
  g->add_option("--robot", gen.robot, "Robot description file");

  PlanArgs plan;
  auto* p = app.add_subcommand("plan", "Solve problems with an expert planner");
  p->add_option("--expert", plan.expert, "global | hybrid")->check(CLI::IsMember({"global", "hybrid"}));
  p->add_option("--in", plan.in, "Problem records")->required();
  p->add_option("--out", plan.out, "Demonstration records")->required();
  p->add_option("--timeout", plan.timeout, "Search timeout in seconds");
  p->add_option("--workers", plan.workers, "Worker threads")->check(CLI::PositiveNumber);
  p->add_option("--seed", plan.seed, "Planner seed (default: the dataset seed)");
  p->add_option("--robot", plan.robot, "Robot description file");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the policy by behavior cloning");
  t->add_option("--data", tr.data, "Demonstration records")->required();
  t->add_option("--profile", tr.profile, "desk | paper-shapes")->check(CLI::IsMember({"desk", "paper-shapes"}));
  t->add_option("--config", tr.config, "Training config (JSON)");
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--max-examples", tr.max_examples, "Use at most this many examples");
  t->add_option("--epochs", tr.epochs, "Override the configured epoch count");
  t->add_option("--seed", tr.seed, "Training seed (overrides the config)");
  t->add_option("--workers", tr.workers, "Worker threads")->check(CLI::PositiveNumber);
  t->add_option("--robot", tr.robot, "Robot description file");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Roll out a checkpoint on problems");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint or controller stub")->required();
  e->add_option("--problems", ev.problems, "Problem or demonstration records")->required();
  e->add_option("--dynamic", ev.dynamic, "off | slow | medium | fast")
      ->check(CLI::IsMember({"off", "slow", "medium", "fast"}));
  e->add_option("--partial-view", ev.partial_view, "off | on")->check(CLI::IsMember({"off", "on"}));
  e->add_option("--format", ev.format, "table | machine")->check(CLI::IsMember({"table", "machine"}));
  e->add_option("--results", ev.results, "Write per-rollout results here");
  e->add_option("--noise", ev.noise, "Gaussian cloud noise in meters");
  e->add_option("--workers", ev.workers, "Worker threads")->check(CLI::PositiveNumber);
  e->add_option("--max-problems", ev.max_problems, "Evaluate at most this many problems");
  e->add_option("--seed", ev.seed, "Rollout seed");
  e->add_option("--robot", ev.robot, "Robot description file");

  std::string results_path, metrics_format = "table";
  auto* m = app.add_subcommand("metrics", "Summarize per-rollout results");
  m->add_option("--results", results_path, "Per-rollout results file")->required();
  m->add_option("--format", metrics_format, "table | machine")->check(CLI::IsMember({"table", "machine"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*g) return run_gen(gen);
    if (*p) return run_plan(plan);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*m) return run_metrics(results_path, metrics_format);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "data error: " << err.what() << "\n";
    return kExitData;
  }
  return kExitConfig;
}
