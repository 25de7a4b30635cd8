#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "pickplace/nn/layers.hpp"

namespace pickplace::nn {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// log(1 - tanh(u)^2), evaluated without cancellation.
template <class S>
S log_one_minus_tanh_sq(S u) {
  const S z = S(-2) * u;
  const S softplus = std::max(z, S(0)) + std::log1p(std::exp(-std::abs(z)));
  return S(2) * (static_cast<S>(std::numbers::ln2) - u - softplus);
}

/// Reparameterized tanh-squashed diagonal Gaussian sample; every matrix is (dim x batch).
template <class S>
struct SquashedSample {
  Matrix<S> action;
  Matrix<S> log_prob;  // 1 x batch
  Matrix<S> noise;
  Matrix<S> std;
  Matrix<S> log_std;     // clamped
  Matrix<S> clamp_open;  // 1 where the raw log-std lies inside the clamp range
};

template <class S>
Matrix<S> standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<S> out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = static_cast<S>(n(rng));
  return out;
}

template <class S>
SquashedSample<S> squashed_sample(const Matrix<S>& mean, const Matrix<S>& log_std_raw, const Matrix<S>& noise) {
  if (mean.rows() != log_std_raw.rows() || mean.cols() != log_std_raw.cols() || noise.rows() != mean.rows() ||
      noise.cols() != mean.cols())
    throw ShapeError("gaussian head: mean, log-std and noise shapes differ");
  SquashedSample<S> s;
  const S lo = static_cast<S>(kLogStdMin), hi = static_cast<S>(kLogStdMax);
  s.log_std = log_std_raw.cwiseMax(lo).cwiseMin(hi);
  s.clamp_open = ((log_std_raw.array() > lo) && (log_std_raw.array() < hi)).template cast<S>();
  s.std = s.log_std.array().exp();
  s.noise = noise;
  const Matrix<S> u = mean.array() + s.std.array() * noise.array();
  s.action = u.array().tanh();
  const S half_log_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));
  s.log_prob.resize(1, mean.cols());
  for (Eigen::Index j = 0; j < mean.cols(); ++j) {
    S lp = 0;
    for (Eigen::Index i = 0; i < mean.rows(); ++i)
      lp += S(-0.5) * noise(i, j) * noise(i, j) - s.log_std(i, j) - half_log_2pi - log_one_minus_tanh_sq(u(i, j));
    s.log_prob(0, j) = lp;
  }
  return s;
}

template <class S>
struct HeadGradients {
  Matrix<S> mean;
  Matrix<S> log_std_raw;
};

/// Chain rule through the sample given dL/daction (dim x batch) and dL/dlog_prob (1 x batch).
template <class S>
HeadGradients<S> squashed_backward(const SquashedSample<S>& s, const Matrix<S>& g_action, const Matrix<S>& g_log_prob) {
  if (g_action.rows() != s.action.rows() || g_action.cols() != s.action.cols() || g_log_prob.rows() != 1 ||
      g_log_prob.cols() != s.action.cols())
    throw ShapeError("gaussian head: gradient shapes differ from the sample");
  HeadGradients<S> g;
  const auto a = s.action.array();
  const Matrix<S> glp = g_log_prob.replicate(s.action.rows(), 1);
  // d log_prob / du = 2 tanh(u) from the Jacobian correction.
  const Matrix<S> gu = g_action.array() * (S(1) - a * a) + glp.array() * S(2) * a;
  g.mean = gu;
  g.log_std_raw = (gu.array() * s.std.array() * s.noise.array() - glp.array()) * s.clamp_open.array();
  return g;
}

template <class S>
Matrix<S> deterministic_action(const Matrix<S>& mean) {
  return mean.array().tanh();
}

}  // namespace pickplace::nn
