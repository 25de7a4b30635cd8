#pragma once

#include <string>
#include <vector>

#include "pickplace/nn/layers.hpp"

namespace pickplace::nn {

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden{256, 256};
  int output_dim = 0;
};

inline std::size_t parameter_count(const MlpSpec& spec) {
  std::size_t n = 0;
  int prev = spec.input_dim;
  for (int h : spec.hidden) {
    n += static_cast<std::size_t>(prev) * h + h;
    prev = h;
  }
  return n + static_cast<std::size_t>(prev) * spec.output_dim + spec.output_dim;
}

/// Fully connected network, ReLU on hidden layers, linear output.
template <class S>
class Mlp {
 public:
  struct Cache {
    CacheStamp stamp;
    std::vector<Matrix<S>> inputs;  // input of every dense layer (post-ReLU for hidden ones)
  };

  Mlp() = default;
  explicit Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    if (spec_.input_dim < 1 || spec_.output_dim < 1) throw ConstructionError("MLP dims must be positive");
    std::size_t offset = 0;
    Eigen::Index prev = spec_.input_dim;
    for (int h : spec_.hidden) {
      if (h < 1) throw ConstructionError("hidden width must be positive");
      layers_.push_back({prev, h, offset});
      offset += layers_.back().size();
      prev = h;
    }
    layers_.push_back({prev, spec_.output_dim, offset});
    offset += layers_.back().size();
    params_ = Vector<S>::Zero(static_cast<Eigen::Index>(offset));
  }

  [[nodiscard]] const MlpSpec& spec() const { return spec_; }
  [[nodiscard]] std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  [[nodiscard]] const Vector<S>& params() const { return params_; }
  /// Mutable access invalidates outstanding caches.
  Vector<S>& mutable_params() {
    ++generation_;
    return params_;
  }
  [[nodiscard]] const std::vector<DenseShape>& layers() const { return layers_; }

  /// Fan-in uniform init; the last layer is scaled by `final_scale`.
  void init(Rng& rng, double final_scale = 1.0) {
    auto& p = mutable_params();
    for (std::size_t l = 0; l < layers_.size(); ++l)
      fan_in_uniform(p, layers_[l], rng, l + 1 == layers_.size() ? final_scale : 1.0);
  }

  Matrix<S> forward(const Matrix<S>& x, Cache* cache = nullptr) const {
    if (x.rows() != spec_.input_dim)
      throw ShapeError("MLP input has " + std::to_string(x.rows()) + " rows, expected " + std::to_string(spec_.input_dim));
    if (cache) {
      cache->stamp = {this, generation_};
      cache->inputs.clear();
    }
    Matrix<S> h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Matrix<S> y = weight(params_, layers_[l]) * h;
      y.colwise() += bias(params_, layers_[l]);
      if (l + 1 < layers_.size()) relu_inplace(y);
      if (cache) cache->inputs.push_back(std::move(h));
      h = std::move(y);
    }
    return h;
  }

  /// Accumulates parameter gradients into `grad` (same layout as params) and returns dL/dx.
  Matrix<S> backward(const Cache& cache, const Matrix<S>& dy, Vector<S>& grad) const { return backprop(cache, dy, &grad, true); }

  /// Parameter gradients only; the input gradient is not formed.
  void accumulate(const Cache& cache, const Matrix<S>& dy, Vector<S>& grad) const { backprop(cache, dy, &grad, false); }

  /// dL/dx only; parameter gradients are skipped.
  Matrix<S> backward_input(const Cache& cache, const Matrix<S>& dy) const { return backprop(cache, dy, nullptr, true); }

 private:
  Matrix<S> backprop(const Cache& cache, const Matrix<S>& dy, Vector<S>* grad, bool need_input) const {
    check_stamp(cache.stamp, this, generation_);
    if (grad && grad->size() != params_.size()) throw ShapeError("gradient buffer size mismatch");
    if (dy.rows() != spec_.output_dim || dy.cols() != cache.inputs.front().cols())
      throw ShapeError("output gradient shape mismatch");
    Matrix<S> g = dy;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& d = layers_[l];
      const auto& in = cache.inputs[l];
      if (grad) {
        weight(*grad, d).noalias() += g * in.transpose();
        bias(*grad, d) += g.rowwise().sum();
      }
      if (l == 0 && !need_input) return {};
      Matrix<S> gin = weight(params_, d).transpose() * g;
      if (l > 0) relu_backward_inplace(gin, in);
      g = std::move(gin);
    }
    return g;
  }

  MlpSpec spec_;
  std::vector<DenseShape> layers_;
  Vector<S> params_;
  std::uint64_t generation_ = 0;
};

}  // namespace pickplace::nn
