#pragma once

#include "motion_forge/geometry.hpp"
#include "motion_forge/nn.hpp"
#include "motion_forge/random.hpp"

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mforge {

enum class PointClass { robot = 0, obstacle = 1, target = 2 };

/// Per-point features: one-hot class (3) followed by xyz.
inline constexpr int kCloudFeatures = 6;

struct CloudTensor {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;
  Matrix features;

  int size() const { return static_cast<int>(points.rows()); }
  /// Throws std::invalid_argument unless N >= 1, C >= 4 and all entries finite.
  void validate() const;
};

/// Concatenates labeled point sets into a cloud with the standard features.
CloudTensor make_cloud(const std::vector<std::pair<PointClass, const std::vector<Vec3>*>>& parts);

class EmptyBall : public std::runtime_error {
 public:
  explicit EmptyBall(int center) : std::runtime_error("ball_query: empty ball"), center(center) {}
  int center;
};

/// Greedy max-min selection; the first index is drawn from `rng`.
std::vector<int> furthest_point_sampling(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, int k,
                                         Rng& rng);
/// Same, starting from `start`. Distance ties go to the lowest index.
std::vector<int> furthest_point_sampling_from(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points, int k,
                                              int start);

/// Up to max_k neighbors within `radius` of each center, nearest first (ties
/// by index), padded to max_k by repeating the first member.
std::vector<std::vector<int>> ball_query(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points,
                                         const Eigen::Matrix<double, Eigen::Dynamic, 3>& centers, double radius,
                                         int max_k);

struct SetAbstractionSpec {
  int samples = 0;  ///< 0 groups the whole cloud around the origin
  double radius = 0.0;
  int max_group = 0;
  std::vector<int> widths;

  bool global() const { return samples == 0; }
};

struct EncoderProfile {
  std::string name;
  std::array<SetAbstractionSpec, 3> blocks;
  std::vector<int> head;
  int input_features = kCloudFeatures;

  int embedding() const { return head.back(); }
  static EncoderProfile desk();
  static EncoderProfile paper();
  static EncoderProfile by_name(const std::string& name);
};

struct EncoderParams {
  EncoderProfile profile;
  std::array<Mlp, 3> blocks;
  Mlp head;

  static EncoderParams init(const EncoderProfile& profile, Rng& rng);
  void visit(const std::string& prefix, const ParameterVisitor& f);
  void visit(const std::string& prefix, const ConstParameterVisitor& f) const;
};

struct SetAbstractionCache {
  std::vector<int> members;  ///< flattened groups (centers x group size)
  int group = 0;
  int input_points = 0;
  Mlp::Cache mlp;
  std::vector<int> argmax;
};

/// One set-abstraction stage. For local blocks the centers are
/// furthest_point_sampling_from(cloud, samples, start).
CloudTensor set_abstraction(const CloudTensor& cloud, const SetAbstractionSpec& spec, const Mlp& mlp,
                            int start, SetAbstractionCache* cache = nullptr);
/// Accumulates the block's parameter gradients and returns dL/d(input features).
Matrix set_abstraction_backward(const SetAbstractionCache& cache, Mlp& mlp, const Matrix& d_out,
                                int input_channels);

struct EncoderCache {
  std::array<SetAbstractionCache, 3> blocks;
  std::array<int, 3> channels{};
  Mlp::Cache head;
};

/// Drops exact duplicate points (same position and features), keeping the first.
CloudTensor deduplicate(const CloudTensor& cloud);

/// Embedding (1 x E). The FPS start index of the first block is drawn from `rng`.
RowVector encode_cloud(const CloudTensor& cloud, const EncoderParams& params, Rng& rng,
                       EncoderCache* cache = nullptr);
/// Same with an explicit first-block start index into the deduplicated cloud.
RowVector encode_cloud_from(const CloudTensor& cloud, const EncoderParams& params, int start,
                            EncoderCache* cache = nullptr);
void encode_backward(const EncoderCache& cache, EncoderParams& params, const RowVector& d_embedding);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensors in visiting order, written as little-endian float32 after a JSON header.
void write_checkpoint(const std::filesystem::path& path, const std::string& profile,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors);
/// Profile name stored in the header.
std::string read_checkpoint_profile(const std::filesystem::path& path);
/// Fills the given tensors (shapes must match the header).
std::string read_checkpoint(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, Tensor*>>& tensors);

}  // namespace mforge
