#pragma once

#include <cmath>
#include <cstddef>

#include "pickplace/common/error.hpp"
#include "pickplace/physics/body.hpp"
#include "pickplace/render/render.hpp"

namespace pickplace::envs {

inline constexpr int kRopeCentreRow = 32;

/// Row weight of the rope reward: exponential penalty away from the centre row.
inline double rope_row_weight(int row) { return std::exp(-0.5 * std::abs(row - kRopeCentreRow)); }

inline double rope_reward(const render::Mask& seg) {
  double total = 0.0;
  for (int r = 0; r < seg.height; ++r) {
    std::size_t on = 0;
    for (int c = 0; c < seg.width; ++c) on += seg.at(r, c) ? 1 : 0;
    if (on) total += rope_row_weight(r) * static_cast<double>(on);
  }
  return total;
}

inline std::size_t intersection_count(const render::Mask& a, const render::Mask& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("mask shapes differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += (a.bits[i] && b.bits[i]) ? 1 : 0;
  return n;
}

/// |seg AND goal|, divided by |goal| when `normalize` is set.
inline double cloth_reward(const render::Mask& seg, const render::Mask& goal, bool normalize = true) {
  const auto goal_area = goal.count();
  if (goal_area == 0) throw ConstructionError("goal mask has zero area");
  const auto hit = static_cast<double>(intersection_count(seg, goal));
  return normalize ? hit / static_cast<double>(goal_area) : hit;
}

inline constexpr std::size_t kRopeParticles = 25;
inline constexpr double kRopeSpacing = 0.02;
inline constexpr std::size_t kClothSide = 9;
inline constexpr double kClothSpacing = 0.03;

inline physics::DeformableBody centred_rope() {
  const double half = 0.5 * kRopeSpacing * static_cast<double>(kRopeParticles - 1);
  return physics::build_rope(kRopeParticles, kRopeSpacing, physics::Vec3(-half, 0.0, 0.0));
}

inline physics::DeformableBody centred_cloth() {
  const double half = 0.5 * kClothSpacing * static_cast<double>(kClothSide - 1);
  return physics::build_cloth(kClothSide, kClothSide, kClothSpacing, physics::Vec3(-half, -half, 0.0));
}

/// Three-pixel band on rows 31..33 spanning the straight rope's rest length.
inline render::Mask rope_goal_mask(const render::Camera& cam = {}) {
  const double half = 0.5 * kRopeSpacing * static_cast<double>(kRopeParticles - 1);
  render::Mask goal(cam.height, cam.width);
  for (int r = kRopeCentreRow - 1; r <= kRopeCentreRow + 1; ++r) {
    for (int c = 0; c < cam.width; ++c) {
      const double x = render::pixel_center_world(cam, {r, c}).x();
      if (x >= -half - 1e-12 && x <= half + 1e-12) goal.set(r, c);
    }
  }
  return goal;
}

inline render::Mask cloth_goal_mask(const render::Camera& cam = {}) { return render::footprint(centred_cloth(), cam); }

inline double coverage(const physics::DeformableBody& body, const render::Mask& goal, const render::Camera& cam = {}) {
  return cloth_reward(render::footprint(body, cam), goal, true);
}

}  // namespace pickplace::envs
