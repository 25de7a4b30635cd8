#pragma once

#include <string>
#include <vector>

#include "pickplace/nn/layers.hpp"

namespace pickplace::nn {

struct ConvSpec {
  int in_channels = 3;
  int height = 64;
  int width = 64;
  std::vector<int> channels{64, 64, 4};
  int kernel = 3;
  int stride = 2;
};

/// Valid (unpadded) strided convolutions with ReLU after each layer.
/// Input columns are CHW-flattened images; the output column is the CHW-flattened last feature map.
template <class S>
class ConvEncoder {
 public:
  struct Geometry {
    int cin, h, w, cout, ho, wo;
    DenseShape dense;  // kernel as a (cout x cin*k*k) matrix plus bias
  };
  struct Cache {
    CacheStamp stamp;
    Eigen::Index batch = 0;
    std::vector<Matrix<S>> cols;     // per layer: (batch*ho*wo) x (cin*k*k)
    std::vector<Matrix<S>> outputs;  // per layer: (batch*ho*wo) x cout, post-ReLU
  };

  ConvEncoder() = default;
  explicit ConvEncoder(ConvSpec spec) : spec_(std::move(spec)) {
    if (spec_.kernel < 1 || spec_.stride < 1 || spec_.channels.empty()) throw ConstructionError("invalid conv spec");
    int c = spec_.in_channels, h = spec_.height, w = spec_.width;
    std::size_t offset = 0;
    for (int cout : spec_.channels) {
      const int ho = (h - spec_.kernel) / spec_.stride + 1;
      const int wo = (w - spec_.kernel) / spec_.stride + 1;
      if (ho < 1 || wo < 1 || cout < 1) throw ConstructionError("conv stack shrinks the image below one pixel");
      DenseShape d{static_cast<Eigen::Index>(c) * spec_.kernel * spec_.kernel, cout, offset};
      geometry_.push_back({c, h, w, cout, ho, wo, d});
      offset += d.size();
      c = cout;
      h = ho;
      w = wo;
    }
    params_ = Vector<S>::Zero(static_cast<Eigen::Index>(offset));
  }

  [[nodiscard]] const ConvSpec& spec() const { return spec_; }
  [[nodiscard]] int input_dim() const { return spec_.in_channels * spec_.height * spec_.width; }
  [[nodiscard]] int output_dim() const {
    const auto& g = geometry_.back();
    return g.cout * g.ho * g.wo;
  }
  [[nodiscard]] const std::vector<Geometry>& geometry() const { return geometry_; }
  [[nodiscard]] std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
  [[nodiscard]] const Vector<S>& params() const { return params_; }
  Vector<S>& mutable_params() {
    ++generation_;
    return params_;
  }

  void init(Rng& rng) {
    auto& p = mutable_params();
    for (const auto& g : geometry_) fan_in_uniform(p, g.dense, rng);
  }

  Matrix<S> forward(const Matrix<S>& x, Cache* cache = nullptr) const {
    if (x.rows() != input_dim()) throw ShapeError("conv input has " + std::to_string(x.rows()) + " rows, expected " + std::to_string(input_dim()));
    const Eigen::Index batch = x.cols();
    const int k = spec_.kernel, s = spec_.stride;
    if (cache) {
      cache->stamp = {this, generation_};
      cache->batch = batch;
      cache->cols.clear();
      cache->outputs.clear();
    }
    Matrix<S> act;  // (batch*h*w) x c of the previous layer; the input is read straight from x
    for (std::size_t l = 0; l < geometry_.size(); ++l) {
      const auto& g = geometry_[l];
      const Eigen::Index per = static_cast<Eigen::Index>(g.ho) * g.wo;
      Matrix<S> col(batch * per, g.dense.in);
      for (Eigen::Index b = 0; b < batch; ++b) {
        for (int ci = 0; ci < g.cin; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const Eigen::Index column = (static_cast<Eigen::Index>(ci) * k + ky) * k + kx;
              for (int oy = 0; oy < g.ho; ++oy) {
                for (int ox = 0; ox < g.wo; ++ox) {
                  const int iy = oy * s + ky, ix = ox * s + kx;
                  const Eigen::Index pixel = static_cast<Eigen::Index>(iy) * g.w + ix;
                  const S v = l == 0 ? x(static_cast<Eigen::Index>(ci) * g.h * g.w + pixel, b)
                                     : act(b * g.h * g.w + pixel, ci);
                  col(b * per + static_cast<Eigen::Index>(oy) * g.wo + ox, column) = v;
                }
              }
            }
          }
        }
      }
      Matrix<S> y = col * weight(params_, g.dense).transpose();
      y.rowwise() += bias(params_, g.dense).transpose();
      relu_inplace(y);
      if (cache) {
        cache->cols.push_back(std::move(col));
        cache->outputs.push_back(y);
      }
      act = std::move(y);
    }
    const auto& last = geometry_.back();
    const Eigen::Index per = static_cast<Eigen::Index>(last.ho) * last.wo;
    Matrix<S> out(output_dim(), batch);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < last.cout; ++c) out.col(b).segment(c * per, per) = act.block(b * per, c, per, 1);
    return out;
  }

  /// Accumulates parameter gradients and returns dL/dx (CHW columns).
  Matrix<S> backward(const Cache& cache, const Matrix<S>& dy, Vector<S>& grad) const {
    check_stamp(cache.stamp, this, generation_);
    if (grad.size() != params_.size()) throw ShapeError("gradient buffer size mismatch");
    const Eigen::Index batch = cache.batch;
    if (dy.rows() != output_dim() || dy.cols() != batch) throw ShapeError("conv output gradient shape mismatch");
    const int k = spec_.kernel, s = spec_.stride;
    const auto& last = geometry_.back();
    Eigen::Index per = static_cast<Eigen::Index>(last.ho) * last.wo;
    Matrix<S> g(batch * per, last.cout);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int c = 0; c < last.cout; ++c) g.block(b * per, c, per, 1) = dy.col(b).segment(c * per, per);

    Matrix<S> dx;
    for (std::size_t l = geometry_.size(); l-- > 0;) {
      const auto& geo = geometry_[l];
      per = static_cast<Eigen::Index>(geo.ho) * geo.wo;
      relu_backward_inplace(g, cache.outputs[l]);
      weight(grad, geo.dense).noalias() += g.transpose() * cache.cols[l];
      bias(grad, geo.dense) += g.colwise().sum().transpose();
      const Matrix<S> dcol = g * weight(params_, geo.dense);
      const Eigen::Index in_per = static_cast<Eigen::Index>(geo.h) * geo.w;
      Matrix<S> din = Matrix<S>::Zero(batch * in_per, geo.cin);
      for (Eigen::Index b = 0; b < batch; ++b)
        for (int ci = 0; ci < geo.cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const Eigen::Index column = (static_cast<Eigen::Index>(ci) * k + ky) * k + kx;
              for (int oy = 0; oy < geo.ho; ++oy)
                for (int ox = 0; ox < geo.wo; ++ox)
                  din(b * in_per + static_cast<Eigen::Index>(oy * s + ky) * geo.w + ox * s + kx, ci) +=
                      dcol(b * per + static_cast<Eigen::Index>(oy) * geo.wo + ox, column);
            }
      if (l == 0) {
        dx.resize(input_dim(), batch);
        for (Eigen::Index b = 0; b < batch; ++b)
          for (int ci = 0; ci < geo.cin; ++ci) dx.col(b).segment(ci * in_per, in_per) = din.block(b * in_per, ci, in_per, 1);
      } else {
        g = std::move(din);
      }
    }
    return dx;
  }

 private:
  ConvSpec spec_;
  std::vector<Geometry> geometry_;
  Vector<S> params_;
  std::uint64_t generation_ = 0;
};

}  // namespace pickplace::nn
