#include "motion_forge/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mforge {

Tensor Tensor::zeros(int rows, int cols) {
  Tensor t;
  t.value = Matrix::Zero(rows, cols);
  t.grad = Matrix::Zero(rows, cols);
  return t;
}

Linear Linear::init(int in, int out, Rng& rng) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("Linear: widths must be positive");
  Linear l;
  l.weight = Tensor::zeros(out, in);
  l.bias = Tensor::zeros(1, out);
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (int r = 0; r < out; ++r) {
    for (int c = 0; c < in; ++c) l.weight.value(r, c) = rng.uniform(-bound, bound);
    l.bias.value(0, r) = rng.uniform(-bound, bound);
  }
  return l;
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

GroupNorm GroupNorm::init(int channels, int groups) {
  if (channels % groups != 0) throw std::invalid_argument("GroupNorm: channels not divisible by groups");
  GroupNorm g;
  g.groups = groups;
  g.gamma = Tensor::zeros(1, channels);
  g.gamma.value.setOnes();
  g.beta = Tensor::zeros(1, channels);
  return g;
}

Matrix GroupNorm::forward(const Matrix& x, Cache* cache) const {
  const int c = static_cast<int>(x.cols());
  const int cg = c / groups;
  const double m = static_cast<double>(x.rows()) * cg;
  Matrix xhat(x.rows(), c);
  std::vector<double> inv(groups);
  for (int g = 0; g < groups; ++g) {
    auto block = x.middleCols(g * cg, cg);
    double mean = block.sum() / m;
    double var = (block.array() - mean).square().sum() / m;
    inv[g] = 1.0 / std::sqrt(var + kNormEpsilon);
    xhat.middleCols(g * cg, cg) = (block.array() - mean) * inv[g];
  }
  Matrix y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Matrix GroupNorm::backward(const Cache& cache, const Matrix& dy) {
  const int c = static_cast<int>(dy.cols());
  const int cg = c / groups;
  const double m = static_cast<double>(dy.rows()) * cg;
  gamma.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  beta.grad.row(0) += dy.colwise().sum();
  Matrix dxhat = (dy.array().rowwise() * gamma.value.row(0).array()).matrix();
  Matrix dx(dy.rows(), c);
  for (int g = 0; g < groups; ++g) {
    auto dh = dxhat.middleCols(g * cg, cg).array();
    auto xh = cache.xhat.middleCols(g * cg, cg).array();
    double s1 = dh.sum();
    double s2 = (dh * xh).sum();
    dx.middleCols(g * cg, cg) = (cache.inv_std[g] / m) * (m * dh - s1 - xh * s2);
  }
  return dx;
}

Matrix leaky_relu(const Matrix& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Matrix leaky_relu_backward(const Matrix& x, const Matrix& dy, double slope) {
  return (x.array() > 0.0).select(dy, slope * dy);
}

Mlp Mlp::init(int in, const std::vector<int>& widths, bool norm, bool norm_last, bool activate_last,
              Rng& rng) {
  if (widths.empty()) throw std::invalid_argument("Mlp: no layers");
  Mlp mlp;
  int prev = in;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    bool last = i + 1 == widths.size();
    DenseLayer layer;
    layer.linear = Linear::init(prev, widths[i], rng);
    if (norm && (!last || norm_last)) layer.norm = GroupNorm::init(widths[i], std::min(kNormGroups, widths[i]));
    layer.activation = !last || activate_last;
    mlp.layers.push_back(std::move(layer));
    prev = widths[i];
  }
  return mlp;
}

Matrix Mlp::forward(const Matrix& x, Cache* cache) const {
  if (cache) {
    cache->inputs.assign(layers.size(), Matrix());
    cache->norm.assign(layers.size(), GroupNorm::Cache());
    cache->pre_activation.assign(layers.size(), Matrix());
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (cache) cache->inputs[i] = h;
    h = layer.linear.forward(h);
    if (layer.norm) h = layer.norm->forward(h, cache ? &cache->norm[i] : nullptr);
    if (layer.activation) {
      if (cache) cache->pre_activation[i] = h;
      h = leaky_relu(h);
    }
  }
  return h;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& dy) {
  Matrix d = dy;
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    auto& layer = layers[i];
    if (layer.activation) d = leaky_relu_backward(cache.pre_activation[i], d);
    if (layer.norm) d = layer.norm->backward(cache.norm[i], d);
    d = layer.linear.backward(cache.inputs[i], d);
  }
  return d;
}

void Mlp::visit(const std::string& prefix, const ParameterVisitor& f) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::string p = prefix + "." + std::to_string(i);
    f(p + ".weight", layers[i].linear.weight);
    f(p + ".bias", layers[i].linear.bias);
    if (layers[i].norm) {
      f(p + ".gamma", layers[i].norm->gamma);
      f(p + ".beta", layers[i].norm->beta);
    }
  }
}

void Mlp::visit(const std::string& prefix, const ConstParameterVisitor& f) const {
  const_cast<Mlp*>(this)->visit(prefix, ParameterVisitor([&f](const std::string& n, Tensor& t) { f(n, t); }));
}

Matrix group_max_pool(const Matrix& x, int group, std::vector<int>* argmax) {
  const int groups = static_cast<int>(x.rows()) / group;
  Matrix y(groups, x.cols());
  if (argmax) argmax->assign(static_cast<std::size_t>(groups) * x.cols(), 0);
  for (int g = 0; g < groups; ++g) {
    for (int c = 0; c < x.cols(); ++c) {
      int best = g * group;
      for (int r = best + 1; r < (g + 1) * group; ++r) {
        if (x(r, c) > x(best, c)) best = r;
      }
      y(g, c) = x(best, c);
      if (argmax) (*argmax)[static_cast<std::size_t>(g) * x.cols() + c] = best;
    }
  }
  return y;
}

Matrix group_max_pool_backward(const std::vector<int>& argmax, const Matrix& dy, int rows) {
  Matrix dx = Matrix::Zero(rows, dy.cols());
  for (int g = 0; g < dy.rows(); ++g) {
    for (int c = 0; c < dy.cols(); ++c) dx(argmax[static_cast<std::size_t>(g) * dy.cols() + c], c) += dy(g, c);
  }
  return dx;
}

void Adam::step(const std::vector<Tensor*>& params, double grad_scale) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("Adam: parameter set changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix g = params[i]->grad * grad_scale;
    m_[i] = options_.beta1 * m_[i] + (1.0 - options_.beta1) * g;
    v_[i] = options_.beta2 * v_[i] + (1.0 - options_.beta2) * g.cwiseProduct(g);
    if (options_.lr == 0.0) continue;
    params[i]->value.array() -=
        options_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + options_.epsilon);
  }
}

}  // namespace mforge
