#pragma once

#include "motion_forge/random.hpp"

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mforge {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr int kNormGroups = 8;
inline constexpr double kLeakySlope = 0.01;
inline constexpr double kNormEpsilon = 1e-5;

/// A parameter with its gradient buffer (same shape).
struct Tensor {
  Matrix value;
  Matrix grad;

  static Tensor zeros(int rows, int cols);
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using ParameterVisitor = std::function<void(const std::string& name, Tensor& t)>;
using ConstParameterVisitor = std::function<void(const std::string& name, const Tensor& t)>;

/// y = x W^T + b, rows are samples.
struct Linear {
  Tensor weight;  ///< out x in
  Tensor bias;    ///< 1 x out

  static Linear init(int in, int out, Rng& rng);
  int in() const { return static_cast<int>(weight.value.cols()); }
  int out() const { return static_cast<int>(weight.value.rows()); }
  Matrix forward(const Matrix& x) const;
  /// Accumulates parameter gradients and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);
};

/// Group normalization: statistics over all rows and the channels of each group.
struct GroupNorm {
  int groups = kNormGroups;
  Tensor gamma;  ///< 1 x C
  Tensor beta;   ///< 1 x C

  struct Cache {
    Matrix xhat;
    std::vector<double> inv_std;
  };

  static GroupNorm init(int channels, int groups = kNormGroups);
  Matrix forward(const Matrix& x, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& dy);
};

Matrix leaky_relu(const Matrix& x, double slope = kLeakySlope);
/// dL/dx given the pre-activation input.
Matrix leaky_relu_backward(const Matrix& x, const Matrix& dy, double slope = kLeakySlope);

/// Linear, optional group norm, optional leaky ReLU.
struct DenseLayer {
  Linear linear;
  std::optional<GroupNorm> norm;
  bool activation = true;
};

/// Stack of dense layers applied row-wise.
class Mlp {
 public:
  struct Cache {
    std::vector<Matrix> inputs;       ///< input of each linear
    std::vector<GroupNorm::Cache> norm;
    std::vector<Matrix> pre_activation;
  };

  std::vector<DenseLayer> layers;

  /// `norm_last` / `activate_last` control the final layer; hidden layers
  /// always activate and use group norm when `norm` is set.
  static Mlp init(int in, const std::vector<int>& widths, bool norm, bool norm_last, bool activate_last,
                  Rng& rng);

  int in() const { return layers.front().linear.in(); }
  int out() const { return layers.back().linear.out(); }
  Matrix forward(const Matrix& x, Cache* cache = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& dy);

  void visit(const std::string& prefix, const ParameterVisitor& f);
  void visit(const std::string& prefix, const ConstParameterVisitor& f) const;
};

/// Per-row channelwise max over consecutive blocks of `group` rows; ties go to
/// the lowest row. `argmax` receives absolute row indices.
Matrix group_max_pool(const Matrix& x, int group, std::vector<int>* argmax);
Matrix group_max_pool_backward(const std::vector<int>& argmax, const Matrix& dy, int rows);

struct AdamOptions {
  double lr = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed, ordered set of tensors.
class Adam {
 public:
  explicit Adam(AdamOptions options = {}) : options_(options) {}

  /// Applies one update from the tensors' gradients scaled by `grad_scale`.
  void step(const std::vector<Tensor*>& params, double grad_scale = 1.0);
  long steps() const { return t_; }

 private:
  AdamOptions options_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace mforge
