#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "pickplace/common/error.hpp"

namespace pickplace::physics {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

struct Particle {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double inverse_mass = 1.0;  // 0 pins the particle
};

struct DistanceConstraint {
  std::size_t a = 0;
  std::size_t b = 0;
  double rest_length = 1.0;
  double stiffness = 1.0;
};

struct Chain {
  std::size_t n = 0;
  friend bool operator==(const Chain&, const Chain&) = default;
};

struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Grid&, const Grid&) = default;
};

using Topology = std::variant<Chain, Grid>;

/// A rope or cloth: particles coupled by distance constraints, resting on the table plane z = 0.
struct DeformableBody {
  std::vector<Particle> particles;
  std::vector<DistanceConstraint> constraints;
  Topology topology = Chain{};
  double spacing = 0.0;  // structural rest length
  double friction_coeff = 0.3;
  double damping = 0.05;

  [[nodiscard]] std::size_t size() const noexcept { return particles.size(); }
  [[nodiscard]] bool is_chain() const noexcept { return std::holds_alternative<Chain>(topology); }
};

/// Integration and actuation settings. The grasp fields describe the pin-and-carry pick model.
struct PhysicsParams {
  double gravity = 9.81;
  int substeps_per_action = 40;
  int solver_iterations = 30;
  double dt = 0.01;
  double grasp_height = 0.03;
  int lift_steps = 10;
  int hold_steps = 10;  // pinned at the place point before release
  int release_settle_steps = 30;
  int stabilization_sweeps = 200;  // upper bound for the closing position-only projection
};

inline constexpr double kDefaultParticleMass = 0.01;

inline void validate(const PhysicsParams& p) {
  if (!(p.dt > 0.0)) throw ConstructionError("dt must be positive");
  if (p.solver_iterations < 1) throw ConstructionError("solver_iterations must be >= 1");
  if (p.substeps_per_action < 1) throw ConstructionError("substeps_per_action must be >= 1");
  if (p.lift_steps < 1 || p.hold_steps < 0 || p.release_settle_steps < 0 || p.stabilization_sweeps < 0) throw ConstructionError("invalid grasp phase lengths");
  if (!(p.grasp_height >= 0.0)) throw ConstructionError("grasp_height must be non-negative");
}

inline void validate(const DeformableBody& body) {
  const auto n = body.particles.size();
  for (const auto& p : body.particles) {
    if (!p.position.allFinite()) throw ConstructionError("non-finite particle position");
    if (!(p.inverse_mass >= 0.0)) throw ConstructionError("negative inverse mass");
  }
  for (const auto& c : body.constraints) {
    if (c.a >= n || c.b >= n || c.a == c.b) throw ConstructionError("constraint endpoints invalid");
    if (!(c.rest_length > 0.0)) throw ConstructionError("rest length must be positive");
    if (!(c.stiffness > 0.0 && c.stiffness <= 1.0)) throw ConstructionError("stiffness must lie in (0, 1]");
  }
  if (!(body.friction_coeff >= 0.0)) throw ConstructionError("friction must be non-negative");
  if (!(body.damping >= 0.0 && body.damping <= 1.0)) throw ConstructionError("damping must lie in [0, 1]");
}

/// Straight chain of `n_particles` along +x starting at `origin`.
inline DeformableBody build_rope(std::size_t n_particles, double spacing, const Vec3& origin,
                                 double particle_mass = kDefaultParticleMass) {
  if (n_particles < 2) throw ConstructionError("rope needs at least 2 particles");
  if (!(spacing > 0.0)) throw ConstructionError("rope spacing must be positive");
  if (!(particle_mass > 0.0)) throw ConstructionError("particle mass must be positive");

  DeformableBody body;
  body.topology = Chain{n_particles};
  body.spacing = spacing;
  body.particles.resize(n_particles);
  for (std::size_t i = 0; i < n_particles; ++i) {
    auto& p = body.particles[i];
    p.position = origin + Vec3(static_cast<double>(i) * spacing, 0.0, 0.0);
    p.inverse_mass = 1.0 / particle_mass;
  }
  body.constraints.reserve(n_particles - 1);
  for (std::size_t i = 0; i + 1 < n_particles; ++i) body.constraints.push_back({i, i + 1, spacing, 1.0});
  return body;
}

/// Flat rows x cols grid in the plane z = origin.z; particle (r, c) has index r * cols + c and sits at
/// origin + (c, r) * spacing. Structural links are horizontal/vertical, shear links both cell diagonals.
inline DeformableBody build_cloth(std::size_t rows, std::size_t cols, double spacing, const Vec3& origin,
                                  double particle_mass = kDefaultParticleMass) {
  if (rows < 2 || cols < 2) throw ConstructionError("cloth needs at least 2 rows and 2 cols");
  if (!(spacing > 0.0)) throw ConstructionError("cloth spacing must be positive");
  if (!(particle_mass > 0.0)) throw ConstructionError("particle mass must be positive");

  DeformableBody body;
  body.topology = Grid{rows, cols};
  body.spacing = spacing;
  body.particles.resize(rows * cols);
  const auto idx = [cols](std::size_t r, std::size_t c) { return r * cols + c; };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      auto& p = body.particles[idx(r, c)];
      p.position = origin + Vec3(static_cast<double>(c) * spacing, static_cast<double>(r) * spacing, 0.0);
      p.inverse_mass = 1.0 / particle_mass;
    }
  }
  const double diagonal = spacing * std::numbers::sqrt2;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c + 1 < cols; ++c) body.constraints.push_back({idx(r, c), idx(r, c + 1), spacing, 1.0});
  for (std::size_t r = 0; r + 1 < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) body.constraints.push_back({idx(r, c), idx(r + 1, c), spacing, 1.0});
  for (std::size_t r = 0; r + 1 < rows; ++r) {
    for (std::size_t c = 0; c + 1 < cols; ++c) {
      body.constraints.push_back({idx(r, c), idx(r + 1, c + 1), diagonal, 1.0});
      body.constraints.push_back({idx(r, c + 1), idx(r + 1, c), diagonal, 1.0});
    }
  }
  return body;
}

/// Number of structural (non-diagonal) constraints implied by the topology.
inline std::size_t structural_constraint_count(const Topology& topology) {
  if (const auto* chain = std::get_if<Chain>(&topology)) return chain->n - 1;
  const auto& g = std::get<Grid>(topology);
  return g.rows * (g.cols - 1) + (g.rows - 1) * g.cols;
}

inline void scale_masses(DeformableBody& body, double mass_scale) {
  if (!(mass_scale > 0.0)) throw ConstructionError("mass scale must be positive");
  for (auto& p : body.particles) p.inverse_mass /= mass_scale;
}

}  // namespace pickplace::physics
