#pragma once

#include "motion_forge/encoder.hpp"
#include "motion_forge/kinematics.hpp"
#include "motion_forge/scene.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mforge {

struct PolicyProfile {
  std::string name;
  EncoderProfile encoder;
  std::vector<int> config_widths;  ///< hidden layers of the configuration encoder
  int config_embedding = 64;
  std::vector<int> decoder_widths;  ///< hidden layers of the displacement decoder

  static PolicyProfile desk();
  static PolicyProfile paper();
  static PolicyProfile by_name(const std::string& name);
};

struct PolicyParams {
  PolicyProfile profile;
  EncoderParams encoder;
  Mlp config_encoder;
  Mlp decoder;

  static PolicyParams init(const PolicyProfile& profile, Rng& rng);
  /// Same shapes, every weight and bias zero.
  static PolicyParams zeros(const PolicyProfile& profile);

  void visit(const ParameterVisitor& f);
  void visit(const ConstParameterVisitor& f) const;
  std::vector<Tensor*> tensors();
  void zero_grad();
  std::size_t parameter_count() const;

  void save(const std::filesystem::path& path) const;
  static PolicyParams load(const std::filesystem::path& path);
};

struct TrainingExample {
  std::shared_ptr<const Scene> scene;
  JointConfig q_t = JointConfig::Zero();
  JointConfig q_next = JointConfig::Zero();
  Pose target;
  long id = 0;
};

struct CloudBudget {
  int obstacle = 2048;
  int robot = 1024;
  int target = 128;
};

/// Fixed 128 points on the gripper spheres, in end-effector coordinates.
std::vector<Vec3> gripper_target_points(const RobotModel& robot, int n = 128);

struct PolicyInput {
  CloudTensor cloud;
  NormalizedConfig qn = NormalizedConfig::Zero();
  JointConfig q = JointConfig::Zero();  ///< the (possibly noised) configuration the input describes
};

/// Builds a segmented cloud for configuration `q` from the given obstacle points.
PolicyInput make_input(const RobotModel& robot, const JointConfig& q, const std::vector<Vec3>& obstacle,
                       const Pose& target, const CloudBudget& budget, Rng& rng);

PolicyInput assemble_input(const TrainingExample& example, const RobotModel& robot, const CloudBudget& budget,
                           Rng& rng, double noise_sigma);

struct PolicyCache {
  EncoderCache encoder;
  Mlp::Cache config;
  Mlp::Cache decoder;
  int embedding = 0;
};

Joints policy_forward(const PolicyParams& params, const CloudTensor& cloud, const NormalizedConfig& qn, Rng& rng,
                      PolicyCache* cache = nullptr);
/// Accumulates parameter gradients from dL/d(displacement).
void policy_backward(PolicyParams& params, const PolicyCache& cache, const Joints& d_delta);

/// Unnormalize(clamp(normalize(q_t) + delta, -1, 1)).
JointConfig policy_step(const RobotModel& robot, const JointConfig& q_t, const Joints& delta);

struct LossValue {
  double value = 0.0;
  Joints grad = Joints::Zero();  ///< with respect to the normalized displacement
};

/// Sum over surface points of the L2 plus L1 distances to the expert's next points.
LossValue loss_bc(const RobotModel& robot, const JointConfig& q_t, const Joints& delta, const JointConfig& q_next);
/// Sum over surface points and primitives of the penetration depth.
LossValue loss_collision(const RobotModel& robot, const JointConfig& q_t, const Joints& delta, const Scene& scene);

struct LossBreakdown {
  double bc = 0.0;
  double collision = 0.0;
  double total = 0.0;
};

struct TrainConfig {
  std::string profile = "desk";
  double lr = 4e-4;
  double lambda = 1.0;
  double noise_sigma = 0.02;
  CloudBudget budget;
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 0;

  static TrainConfig read(const std::filesystem::path& path);
  void write(const std::filesystem::path& path) const;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(long example_id)
      : std::runtime_error("non-finite loss at example " + std::to_string(example_id)), example_id(example_id) {}
  long example_id;
};

struct TrainResult {
  std::vector<LossBreakdown> curve;  ///< per-epoch mean over examples
};

using EpochCallback = std::function<void(int epoch, const LossBreakdown& mean)>;

/// Loss and parameter gradients (accumulated) for one example.
LossBreakdown example_loss(PolicyParams& params, const TrainingExample& example, const RobotModel& robot,
                           const TrainConfig& config, Rng& rng, bool accumulate_gradients);

/// Per-example gradients are summed in example order, so the result does not
/// depend on `workers`.
TrainResult train(PolicyParams& params, const std::vector<TrainingExample>& dataset, const RobotModel& robot,
                  const TrainConfig& config, const EpochCallback& on_epoch = {}, int workers = 1);

}  // namespace mforge
