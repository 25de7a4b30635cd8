#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pickplace/physics/body.hpp"

namespace pickplace::physics {

inline constexpr double kDivergenceLimit = 1e3;
inline constexpr double kContactTolerance = 1e-9;

namespace detail {

/// One Gauss-Seidel sweep over the distance constraints, acting on `positions`.
inline void project_sweep(std::span<Vec3> positions, std::span<const Particle> particles,
                          std::span<const DistanceConstraint> constraints) {
  for (const auto& c : constraints) {
    const double wa = particles[c.a].inverse_mass;
    const double wb = particles[c.b].inverse_mass;
    const double w = wa + wb;
    if (w <= 0.0) continue;
    Vec3 delta = positions[c.b] - positions[c.a];
    const double len = delta.norm();
    if (len <= std::numeric_limits<double>::epsilon() * c.rest_length) continue;  // coincident endpoints
    const Vec3 correction = (c.stiffness * (len - c.rest_length) / (w * len)) * delta;
    positions[c.a] += wa * correction;
    positions[c.b] -= wb * correction;
  }
}

inline void check_divergence(const DeformableBody& body) {
  for (const auto& p : body.particles) {
    if (!p.position.allFinite() || p.position.cwiseAbs().maxCoeff() > kDivergenceLimit)
      throw SimulationInstability("particle position diverged beyond 1e3 m");
  }
}

}  // namespace detail

/// Projects the body's current positions onto the distance constraints in place (no ground, no integration).
inline void project_constraints(DeformableBody& body, int iterations) {
  std::vector<Vec3> positions(body.particles.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = body.particles[i].position;
  for (int it = 0; it < iterations; ++it) detail::project_sweep(positions, body.particles, body.constraints);
  for (std::size_t i = 0; i < positions.size(); ++i) body.particles[i].position = positions[i];
}

/// One position-based-dynamics step. Pinned particles keep whatever position/velocity the caller set.
inline void step(DeformableBody& body, const PhysicsParams& params) {
  const auto n = body.particles.size();
  const double dt = params.dt;
  const Vec3 gravity_dv(0.0, 0.0, -params.gravity * dt);
  const double keep = 1.0 - body.damping;

  std::vector<Vec3> predicted(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = body.particles[i];
    if (p.inverse_mass > 0.0) {
      p.velocity = (p.velocity + gravity_dv) * keep;
      predicted[i] = p.position + p.velocity * dt;
    } else {
      predicted[i] = p.position;
    }
  }

  for (int it = 0; it < params.solver_iterations; ++it) {
    detail::project_sweep(predicted, body.particles, body.constraints);
    for (std::size_t i = 0; i < n; ++i) {
      if (body.particles[i].inverse_mass > 0.0 && predicted[i].z() < 0.0) predicted[i].z() = 0.0;
    }
  }

  const double tangential_keep = std::max(0.0, 1.0 - body.friction_coeff);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = body.particles[i];
    if (p.inverse_mass <= 0.0) continue;
    p.velocity = (predicted[i] - p.position) / dt;
    if (predicted[i].z() <= kContactTolerance) {
      p.velocity.x() *= tangential_keep;
      p.velocity.y() *= tangential_keep;
      p.velocity.z() = std::max(p.velocity.z(), 0.0);
    }
    p.position = predicted[i];
  }
  detail::check_divergence(body);
}

/// max over constraints of |dist - rest| / rest.
inline double max_relative_residual(const DeformableBody& body) {
  double worst = 0.0;
  for (const auto& c : body.constraints) {
    const double d = (body.particles[c.b].position - body.particles[c.a].position).norm();
    worst = std::max(worst, std::abs(d - c.rest_length) / c.rest_length);
  }
  return worst;
}

inline constexpr double kStabilizationTolerance = 1e-6;

namespace detail {

/// Damped Gauss-Newton on the relative constraint residuals over the free particle coordinates.
/// Particles resting on the table keep z fixed for the step; the result is clamped to z >= 0.
/// Used when Gauss-Seidel stalls on tent-like cloth configurations.
inline void global_project(DeformableBody& body, int max_iterations) {
  const auto n = body.particles.size();
  const auto dim = static_cast<Eigen::Index>(3 * n);
  Eigen::VectorXd x(dim);
  for (std::size_t i = 0; i < n; ++i) x.segment<3>(3 * i) = body.particles[i].position;

  const auto cost = [&](const Eigen::VectorXd& q, double* worst) {
    double sum = 0.0, w = 0.0;
    for (const auto& c : body.constraints) {
      const double r = ((q.segment<3>(3 * c.b) - q.segment<3>(3 * c.a)).norm() - c.rest_length) / c.rest_length;
      sum += r * r;
      w = std::max(w, std::abs(r));
    }
    if (worst) *worst = w;
    return sum;
  };

  double worst = 0.0;
  double current = cost(x, &worst);
  double lambda = 1e-6;
  Eigen::MatrixXd normal(dim, dim);
  Eigen::VectorXd gradient(dim);
  std::vector<bool> fixed(static_cast<std::size_t>(dim), false);
  for (int it = 0; it < max_iterations && worst > kStabilizationTolerance; ++it) {
    // Steepest-descent direction decides which resting particles may leave the table this step.
    gradient.setZero();
    for (const auto& c : body.constraints) {
      const Vec3 delta = x.segment<3>(3 * c.b) - x.segment<3>(3 * c.a);
      const double len = delta.norm();
      if (len <= 0.0) continue;
      const double gz = (len - c.rest_length) / (c.rest_length * c.rest_length) * delta.z() / len;
      gradient[3 * c.b + 2] += gz;
      gradient[3 * c.a + 2] -= gz;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const bool pinned = body.particles[i].inverse_mass <= 0.0;
      for (int k = 0; k < 3; ++k) fixed[3 * i + k] = pinned;
      if (x[3 * i + 2] <= 0.0 && gradient[3 * i + 2] >= 0.0) fixed[3 * i + 2] = true;
    }
    normal.setZero();
    gradient.setZero();
    for (const auto& c : body.constraints) {
      const Vec3 delta = x.segment<3>(3 * c.b) - x.segment<3>(3 * c.a);
      const double len = delta.norm();
      if (len <= 0.0) continue;
      const double r = (len - c.rest_length) / c.rest_length;
      Eigen::Matrix<double, 6, 1> row;
      row.head<3>() = -delta / (len * c.rest_length);
      row.tail<3>() = -row.head<3>();
      const std::size_t base[2] = {3 * c.a, 3 * c.b};
      for (int u = 0; u < 6; ++u) {
        const auto gu = static_cast<Eigen::Index>(base[u / 3] + u % 3);
        if (fixed[gu]) continue;
        gradient[gu] += row[u] * r;
        for (int v = 0; v < 6; ++v) {
          const auto gv = static_cast<Eigen::Index>(base[v / 3] + v % 3);
          if (!fixed[gv]) normal(gu, gv) += row[u] * row[v];
        }
      }
    }
    for (Eigen::Index k = 0; k < dim; ++k) normal(k, k) += fixed[k] ? 1.0 : lambda;
    const Eigen::VectorXd dx = -normal.ldlt().solve(gradient);
    Eigen::VectorXd trial = x + dx;
    for (std::size_t i = 0; i < n; ++i) trial[3 * i + 2] = std::max(trial[3 * i + 2], 0.0);
    double trial_worst = 0.0;
    const double trial_cost = cost(trial, &trial_worst);
    if (trial.allFinite() && trial_cost < current) {
      x = trial;
      current = trial_cost;
      worst = trial_worst;
      lambda = std::max(lambda * 0.3, 1e-12);
    } else {
      lambda *= 10.0;
    }
  }
  for (std::size_t i = 0; i < n; ++i) body.particles[i].position = x.segment<3>(3 * i);
}

}  // namespace detail

inline constexpr int kGlobalProjectionIterations = 400;

/// Position-only projection with ground clamping; velocities are left untouched.
/// Gauss-Seidel sweeps run first; if they stall above 1e-4 a global Gauss-Newton pass finishes the job.
inline void stabilize(DeformableBody& body, int max_sweeps) {
  const auto n = body.particles.size();
  std::vector<Vec3> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = body.particles[i].position;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    if (sweep % 10 == 0) {
      for (std::size_t i = 0; i < n; ++i) body.particles[i].position = positions[i];
      if (max_relative_residual(body) < kStabilizationTolerance) return;
    }
    detail::project_sweep(positions, body.particles, body.constraints);
    for (std::size_t i = 0; i < n; ++i)
      if (body.particles[i].inverse_mass > 0.0 && positions[i].z() < 0.0) positions[i].z() = 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) body.particles[i].position = positions[i];
  if (max_sweeps > 0 && max_relative_residual(body) > 1e-4) detail::global_project(body, kGlobalProjectionIterations);
}

inline void settle(DeformableBody& body, const PhysicsParams& params, int steps) {
  for (int s = 0; s < steps; ++s) step(body, params);
  stabilize(body, params.stabilization_sweeps);
}

/// Kinetic energy of the free particles, 1/2 sum m |v|^2.
inline double kinetic_energy(const DeformableBody& body) {
  double e = 0.0;
  for (const auto& p : body.particles)
    if (p.inverse_mass > 0.0) e += 0.5 * p.velocity.squaredNorm() / p.inverse_mass;
  return e;
}

inline double min_height(const DeformableBody& body) {
  double z = std::numeric_limits<double>::infinity();
  for (const auto& p : body.particles) z = std::min(z, p.position.z());
  return z;
}

inline bool all_in_contact(const DeformableBody& body) {
  return std::all_of(body.particles.begin(), body.particles.end(),
                     [](const Particle& p) { return p.position.z() <= kContactTolerance; });
}

struct PickMoveOptions {
  double max_radius = std::numeric_limits<double>::infinity();
  /// Called after every passive (post-release) settle step.
  std::function<void(const DeformableBody&)> on_passive_step;
};

struct PickMoveReport {
  bool clamped = false;
  Vec2 applied_displacement = Vec2::Zero();
};

/// Grasps one particle, lifts it to the grasp height, carries it in a straight line by `displacement`,
/// lowers it onto the table, holds it there while the rest relaxes, releases it and lets the body settle.
/// A closing stabilization pass removes the remaining constraint residual.
/// A zero displacement is a null action: no grasp happens and the body only settles.
inline PickMoveReport pick_move(DeformableBody& body, std::size_t pick_index, const Vec2& displacement,
                                const PhysicsParams& params, const PickMoveOptions& options = {}) {
  if (pick_index >= body.particles.size()) throw std::out_of_range("pick index out of range");
  PickMoveReport report;
  report.applied_displacement = displacement;
  const double magnitude = displacement.norm();
  if (!std::isfinite(magnitude)) throw std::invalid_argument("non-finite displacement");
  if (magnitude > options.max_radius) {
    report.applied_displacement = displacement * (options.max_radius / magnitude);
    report.clamped = true;
  }

  const auto passive = [&](int steps) {
    for (int s = 0; s < steps; ++s) {
      step(body, params);
      if (options.on_passive_step) options.on_passive_step(body);
    }
  };

  if (report.applied_displacement.norm() == 0.0) {
    passive(params.release_settle_steps);
    stabilize(body, params.stabilization_sweeps);
    return report;
  }

  auto& grasped = body.particles[pick_index];
  const double saved_inverse_mass = grasped.inverse_mass;
  grasped.inverse_mass = 0.0;
  const Vec3 start = grasped.position;
  const Vec2 d = report.applied_displacement;

  const auto drive_to = [&](const Vec3& target) {
    auto& p = body.particles[pick_index];
    p.velocity = (target - p.position) / params.dt;
    p.position = target;
    step(body, params);
  };

  const double h = params.grasp_height;
  for (int k = 1; k <= params.lift_steps; ++k) {
    const double f = static_cast<double>(k) / params.lift_steps;
    drive_to({start.x(), start.y(), start.z() + (h - start.z()) * f});
  }
  for (int k = 1; k <= params.substeps_per_action; ++k) {
    const double f = static_cast<double>(k) / params.substeps_per_action;
    drive_to({start.x() + d.x() * f, start.y() + d.y() * f, h});
  }
  for (int k = 1; k <= params.lift_steps; ++k) {
    const double f = static_cast<double>(k) / params.lift_steps;
    drive_to({start.x() + d.x(), start.y() + d.y(), h * (1.0 - f)});
  }
  for (int k = 0; k < params.hold_steps; ++k) drive_to({start.x() + d.x(), start.y() + d.y(), 0.0});

  auto& released = body.particles[pick_index];
  released.inverse_mass = saved_inverse_mass;
  released.velocity.setZero();
  passive(params.release_settle_steps);
  stabilize(body, params.stabilization_sweeps);
  return report;
}

}  // namespace pickplace::physics
