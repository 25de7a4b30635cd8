#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pickplace/common/error.hpp"
#include "pickplace/common/random.hpp"

namespace pickplace::nn {

/// Column-major; one sample per column.
template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using Vector = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Shaped buffer; used where a flat batch has to be re-read with a known layout.
template <class S>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(element_count(shape), S(0)) {}
  Tensor(std::vector<std::size_t> s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count(shape)) throw ShapeError("tensor data does not match its shape");
  }
  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }
};

/// Identifies the parameter version a cache was produced with.
struct CacheStamp {
  const void* owner = nullptr;
  std::uint64_t generation = 0;
};

inline void check_stamp(const CacheStamp& stamp, const void* owner, std::uint64_t generation) {
  if (stamp.owner != owner || stamp.generation != generation)
    throw StaleCacheError("backward called with a cache from another network or older parameters");
}

/// Dense layer view over a flat parameter buffer: W (out x in, column-major) followed by b (out).
struct DenseShape {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  std::size_t offset = 0;
  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(in * out + out); }
};

template <class S>
Eigen::Map<const Matrix<S>> weight(const Vector<S>& flat, const DenseShape& d) {
  return {flat.data() + d.offset, d.out, d.in};
}
template <class S>
Eigen::Map<const Vector<S>> bias(const Vector<S>& flat, const DenseShape& d) {
  return {flat.data() + d.offset + d.in * d.out, d.out};
}
template <class S>
Eigen::Map<Matrix<S>> weight(Vector<S>& flat, const DenseShape& d) {
  return {flat.data() + d.offset, d.out, d.in};
}
template <class S>
Eigen::Map<Vector<S>> bias(Vector<S>& flat, const DenseShape& d) {
  return {flat.data() + d.offset + d.in * d.out, d.out};
}

/// PyTorch-style fan-in uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
template <class S>
void fan_in_uniform(Vector<S>& flat, const DenseShape& d, Rng& rng, double scale = 1.0) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d.in));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (std::size_t k = 0; k < d.size(); ++k) flat[static_cast<Eigen::Index>(d.offset + k)] = static_cast<S>(scale * u(rng));
}

template <class S>
void relu_inplace(Matrix<S>& m) {
  m = m.cwiseMax(S(0));
}

/// dY * 1[activation > 0]
template <class S>
void relu_backward_inplace(Matrix<S>& grad, const Matrix<S>& activation) {
  grad = (activation.array() > S(0)).select(grad, S(0));
}

}  // namespace pickplace::nn
