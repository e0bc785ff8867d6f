#include "motion_forge/policy.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <atomic>
#include <condition_variable>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace mforge {

namespace {

std::vector<int> hidden_plus(const std::vector<int>& hidden, int out) {
  std::vector<int> w = hidden;
  w.push_back(out);
  return w;
}

std::vector<Vec3> subsample(const std::vector<Vec3>& pts, int n, Rng& rng) {
  if (static_cast<int>(pts.size()) <= n) return pts;
  std::vector<int> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < n; ++i) {
    auto j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(idx.size() - i)));
    std::swap(idx[i], idx[j]);
  }
  std::vector<Vec3> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(pts[idx[i]]);
  return out;
}

JointConfig clamped_step(const RobotModel& robot, const JointConfig& q_t, const Joints& delta, Joints* mask) {
  NormalizedConfig qn = normalize_config(robot, q_t) + delta;
  JointConfig q;
  for (int j = 0; j < kDof; ++j) {
    const auto& s = robot.joints[j];
    const double half = 0.5 * (s.upper - s.lower);
    bool inside = qn[j] > -1.0 && qn[j] < 1.0;
    if (mask) (*mask)[j] = inside ? half : 0.0;
    q[j] = std::clamp(q_t[j] + delta[j] * half, s.lower, s.upper);
  }
  return q;
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

PolicyProfile PolicyProfile::desk() {
  PolicyProfile p;
  p.name = "desk";
  p.encoder = EncoderProfile::desk();
  p.config_widths = {8, 16, 32, 32};
  p.decoder_widths = {128, 64, 32};
  return p;
}

PolicyProfile PolicyProfile::paper() {
  PolicyProfile p;
  p.name = "paper";
  p.encoder = EncoderProfile::paper();
  p.config_widths = {32, 64, 128, 128};
  p.decoder_widths = {512, 256, 128};
  return p;
}

PolicyProfile PolicyProfile::by_name(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw std::invalid_argument("unknown policy profile: " + name);
}

PolicyParams PolicyParams::init(const PolicyProfile& profile, Rng& rng) {
  PolicyParams p;
  p.profile = profile;
  p.encoder = EncoderParams::init(profile.encoder, rng);
  p.config_encoder = Mlp::init(kDof, hidden_plus(profile.config_widths, profile.config_embedding), false, false,
                               false, rng);
  p.decoder = Mlp::init(profile.encoder.embedding() + profile.config_embedding,
                        hidden_plus(profile.decoder_widths, kDof), false, false, false, rng);
  return p;
}

PolicyParams PolicyParams::zeros(const PolicyProfile& profile) {
  Rng rng(0);
  PolicyParams p = init(profile, rng);
  p.visit([](const std::string&, Tensor& t) { t.value.setZero(); });
  return p;
}

void PolicyParams::visit(const ParameterVisitor& f) {
  encoder.visit("encoder", f);
  config_encoder.visit("config", f);
  decoder.visit("decoder", f);
}

void PolicyParams::visit(const ConstParameterVisitor& f) const {
  encoder.visit("encoder", f);
  config_encoder.visit("config", f);
  decoder.visit("decoder", f);
}

std::vector<Tensor*> PolicyParams::tensors() {
  std::vector<Tensor*> out;
  visit([&out](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

void PolicyParams::zero_grad() {
  visit([](const std::string&, Tensor& t) { t.zero_grad(); });
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  visit([&n](const std::string&, const Tensor& t) { n += static_cast<std::size_t>(t.value.size()); });
  return n;
}

void PolicyParams::save(const std::filesystem::path& path) const {
  std::vector<std::pair<std::string, const Tensor*>> list;
  visit([&list](const std::string& name, const Tensor& t) { list.emplace_back(name, &t); });
  write_checkpoint(path, profile.name, list);
}

PolicyParams PolicyParams::load(const std::filesystem::path& path) {
  PolicyParams p = zeros(PolicyProfile::by_name(read_checkpoint_profile(path)));
  std::vector<std::pair<std::string, Tensor*>> list;
  p.visit([&list](const std::string& name, Tensor& t) { list.emplace_back(name, &t); });
  read_checkpoint(path, list);
  return p;
}

std::vector<Vec3> gripper_target_points(const RobotModel& robot, int n) {
  auto spheres = robot.gripper_spheres();
  if (spheres.empty()) throw std::invalid_argument("gripper_target_points: robot has no gripper spheres");
  std::vector<double> cumulative;
  double total = 0.0;
  for (const auto& s : spheres) cumulative.push_back(total += s.radius * s.radius);
  Rng rng(0x67726970ULL);
  std::vector<Vec3> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform() * total;
    std::size_t k = std::min<std::size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin(), spheres.size() - 1);
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    out.push_back(spheres[k].center + spheres[k].radius * d.normalized());
  }
  return out;
}

PolicyInput make_input(const RobotModel& robot, const JointConfig& q, const std::vector<Vec3>& obstacle,
                       const Pose& target, const CloudBudget& budget, Rng& rng) {
  if (budget.obstacle < 1 || budget.robot < 1 || budget.target < 1) {
    throw std::invalid_argument("cloud budgets must be >= 1");
  }
  PolicyInput in;
  in.q = q;
  in.qn = normalize_config(robot, q);
  std::vector<Vec3> robot_pts = subsample(surface_points(robot, q), budget.robot, rng);
  std::vector<Vec3> target_pts;
  for (const auto& p : gripper_target_points(robot, budget.target)) target_pts.push_back(target.apply(p));
  in.cloud = make_cloud({{PointClass::robot, &robot_pts},
                         {PointClass::obstacle, &obstacle},
                         {PointClass::target, &target_pts}});
  return in;
}

PolicyInput assemble_input(const TrainingExample& example, const RobotModel& robot, const CloudBudget& budget,
                           Rng& rng, double noise_sigma) {
  JointConfig q = example.q_t;
  if (noise_sigma > 0.0) {
    for (int j = 0; j < kDof; ++j) q[j] += noise_sigma * rng.normal();
  }
  q = robot.clamp(q);
  std::vector<Vec3> obstacle = sample_surface_cloud(*example.scene, budget.obstacle, rng);
  return make_input(robot, q, obstacle, example.target, budget, rng);
}

Joints policy_forward(const PolicyParams& params, const CloudTensor& cloud, const NormalizedConfig& qn, Rng& rng,
                      PolicyCache* cache) {
  RowVector embedding = encode_cloud(cloud, params.encoder, rng, cache ? &cache->encoder : nullptr);
  RowVector config = params.config_encoder.forward(qn.transpose(), cache ? &cache->config : nullptr).row(0);
  Matrix joined(1, embedding.size() + config.size());
  joined << embedding, config;
  if (cache) cache->embedding = static_cast<int>(embedding.size());
  Matrix out = params.decoder.forward(joined, cache ? &cache->decoder : nullptr);
  return out.row(0).transpose();
}

void policy_backward(PolicyParams& params, const PolicyCache& cache, const Joints& d_delta) {
  Matrix d_joined = params.decoder.backward(cache.decoder, d_delta.transpose());
  const int e = cache.embedding;
  params.config_encoder.backward(cache.config, d_joined.rightCols(d_joined.cols() - e));
  encode_backward(cache.encoder, params.encoder, d_joined.leftCols(e));
}

JointConfig policy_step(const RobotModel& robot, const JointConfig& q_t, const Joints& delta) {
  return clamped_step(robot, q_t, delta, nullptr);
}

LossValue loss_bc(const RobotModel& robot, const JointConfig& q_t, const Joints& delta, const JointConfig& q_next) {
  Joints mask;
  JointConfig q_hat = clamped_step(robot, q_t, delta, &mask);
  LinkPoses poses = forward_kinematics(robot, q_hat);
  LinkPoses expert = forward_kinematics(robot, q_next);
  LossValue out;
  Joints dq = Joints::Zero();
  for (const auto& a : robot.anchors) {
    Vec3 x_hat = poses[a.link].apply(a.offset);
    Vec3 r = x_hat - expert[a.link].apply(a.offset);
    double n = r.norm();
    out.value += n + r.cwiseAbs().sum();
    Vec3 g(sign(r.x()), sign(r.y()), sign(r.z()));
    if (n > 0.0) g += r / n;
    dq += point_jacobian(robot, poses, a.link, x_hat).transpose() * g;
  }
  out.grad = dq.cwiseProduct(mask);
  return out;
}

LossValue loss_collision(const RobotModel& robot, const JointConfig& q_t, const Joints& delta, const Scene& scene) {
  Joints mask;
  JointConfig q_hat = clamped_step(robot, q_t, delta, &mask);
  LinkPoses poses = forward_kinematics(robot, q_hat);
  LossValue out;
  Joints dq = Joints::Zero();
  for (const auto& a : robot.anchors) {
    Vec3 x = poses[a.link].apply(a.offset);
    Vec3 g = Vec3::Zero();
    for (const auto& prim : scene.primitives) {
      double d = prim.sdf(x);
      if (d < 0.0) {
        out.value -= d;
        g -= prim.sdf_gradient(x);
      }
    }
    if (!g.isZero()) dq += point_jacobian(robot, poses, a.link, x).transpose() * g;
  }
  out.grad = dq.cwiseProduct(mask);
  return out;
}

TrainConfig TrainConfig::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open training config: " + path.string());
  nlohmann::json j = nlohmann::json::parse(in);
  TrainConfig c;
  c.profile = j.value("profile", c.profile);
  c.lr = j.value("lr", c.lr);
  c.lambda = j.value("lambda", c.lambda);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  if (j.contains("budget")) {
    const auto& b = j["budget"];
    c.budget.obstacle = b.value("obstacle", c.budget.obstacle);
    c.budget.robot = b.value("robot", c.budget.robot);
    c.budget.target = b.value("target", c.budget.target);
  }
  if (c.epochs < 1 || c.batch_size < 1 || c.lr < 0.0 || c.noise_sigma < 0.0) {
    throw std::invalid_argument("training config out of range");
  }
  return c;
}

void TrainConfig::write(const std::filesystem::path& path) const {
  nlohmann::json j = {{"profile", profile},
                      {"lr", lr},
                      {"lambda", lambda},
                      {"noise_sigma", noise_sigma},
                      {"epochs", epochs},
                      {"batch_size", batch_size},
                      {"seed", seed},
                      {"budget", {{"obstacle", budget.obstacle}, {"robot", budget.robot}, {"target", budget.target}}}};
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

LossBreakdown example_loss(PolicyParams& params, const TrainingExample& example, const RobotModel& robot,
                           const TrainConfig& config, Rng& rng, bool accumulate_gradients) {
  PolicyInput in = assemble_input(example, robot, config.budget, rng, config.noise_sigma);
  PolicyCache cache;
  Joints delta = policy_forward(params, in.cloud, in.qn, rng, accumulate_gradients ? &cache : nullptr);
  LossValue bc = loss_bc(robot, example.q_t, delta, example.q_next);
  LossValue coll = loss_collision(robot, example.q_t, delta, *example.scene);
  LossBreakdown l{bc.value, coll.value, bc.value + config.lambda * coll.value};
  if (!std::isfinite(l.total) || !delta.allFinite()) throw NonFiniteLoss(example.id);
  if (accumulate_gradients) policy_backward(params, cache, bc.grad + config.lambda * coll.grad);
  return l;
}

TrainResult train(PolicyParams& params, const std::vector<TrainingExample>& dataset, const RobotModel& robot,
                  const TrainConfig& config, const EpochCallback& on_epoch, int workers) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  workers = std::max(1, workers);
  AdamOptions ao;
  ao.lr = config.lr;
  Adam adam(ao);
  std::vector<Tensor*> tensors = params.tensors();
  std::vector<PolicyParams> replicas(workers, params);
  std::vector<std::vector<Tensor*>> replica_tensors;
  for (auto& r : replicas) replica_tensors.push_back(r.tensors());
  TrainResult result;
  const std::size_t n = dataset.size();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = Rng::stream(config.seed, 0x5348554646ULL, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    LossBreakdown sum;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(n, b + static_cast<std::size_t>(config.batch_size));
      params.zero_grad();
      for (int w = 0; w < workers; ++w) {
        for (std::size_t t = 0; t < tensors.size(); ++t) replica_tensors[w][t]->value = tensors[t]->value;
      }
      std::vector<LossBreakdown> losses(end - b);
      std::mutex mutex;
      std::condition_variable turn_cv;
      std::size_t turn = b;
      std::atomic<std::size_t> next{b};
      std::exception_ptr failure;
      auto work = [&](int w) {
        PolicyParams& replica = replicas[w];
        for (std::size_t k = next++; k < end; k = next++) {
          const auto& ex = dataset[order[k]];
          LossBreakdown l;
          bool ok = true;
          try {
            replica.zero_grad();
            Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(epoch) + 1,
                                  static_cast<std::uint64_t>(ex.id));
            l = example_loss(replica, ex, robot, config, rng, true);
          } catch (...) {
            ok = false;
            std::lock_guard<std::mutex> lock(mutex);
            if (!failure) failure = std::current_exception();
          }
          std::unique_lock<std::mutex> lock(mutex);
          turn_cv.wait(lock, [&] { return turn == k; });
          if (ok) {
            losses[k - b] = l;
            for (std::size_t t = 0; t < tensors.size(); ++t) tensors[t]->grad += replica_tensors[w][t]->grad;
          }
          ++turn;
          turn_cv.notify_all();
        }
      };
      if (workers == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
      }
      if (failure) std::rethrow_exception(failure);
      for (const auto& l : losses) {
        sum.bc += l.bc;
        sum.collision += l.collision;
        sum.total += l.total;
      }
      adam.step(tensors, 1.0 / static_cast<double>(end - b));
    }
    LossBreakdown mean{sum.bc / n, sum.collision / n, 0.0};
    mean.total = mean.bc + config.lambda * mean.collision;
    result.curve.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

}  // namespace mforge
