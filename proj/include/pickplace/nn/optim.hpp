#pragma once

#include <cmath>
#include <cstdint>

#include "pickplace/nn/layers.hpp"

namespace pickplace::nn {

template <class S>
struct AdamState {
  Vector<S> m;
  Vector<S> v;
  std::int64_t step = 0;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(Eigen::Index n, double learning_rate = 3e-4)
      : m(Vector<S>::Zero(n)), v(Vector<S>::Zero(n)), lr(learning_rate) {}
};

/// Bias-corrected Adam. Throws NumericalError (leaving params untouched) on a non-finite gradient.
template <class S>
void adam_step(Vector<S>& params, const Vector<S>& grads, AdamState<S>& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam: parameter, gradient and moment sizes differ");
  if (!grads.allFinite()) throw NumericalError("non-finite gradient");
  ++state.step;
  const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const S step_size = static_cast<S>(state.lr / c1);
  const S root_c2 = static_cast<S>(std::sqrt(c2));
  const S eps = static_cast<S>(state.eps);
  state.m = b1 * state.m + (S(1) - b1) * grads;
  state.v = b2 * state.v + (S(1) - b2) * grads.cwiseAbs2();
  // lr * m_hat / (sqrt(v_hat) + eps) with m_hat = m / c1, v_hat = v / c2
  params.array() -= step_size * state.m.array() / (state.v.array().sqrt() / root_c2 + eps);
}

/// target <- (1 - tau) * target + tau * source
template <class S>
void polyak_update(Vector<S>& target, const Vector<S>& source, double tau) {
  if (target.size() != source.size()) throw ShapeError("polyak: size mismatch");
  const S t = static_cast<S>(tau);
  target = (S(1) - t) * target + t * source;
}

}  // namespace pickplace::nn
