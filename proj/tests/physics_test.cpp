#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pickplace/physics/body.hpp"
#include "pickplace/physics/serialize.hpp"
#include "pickplace/physics/solver.hpp"

using namespace pickplace;
using namespace pickplace::physics;

namespace {

double total_rest_length(const DeformableBody& body) {
  double sum = 0.0;
  for (const auto& c : body.constraints) sum += c.rest_length;
  return sum;
}

DeformableBody two_particles(double distance, double inverse_mass_a, double inverse_mass_b) {
  DeformableBody body = build_rope(2, 1.0, Vec3::Zero());
  body.particles[1].position = Vec3(distance, 0.0, 0.0);
  body.particles[0].inverse_mass = inverse_mass_a;
  body.particles[1].inverse_mass = inverse_mass_b;
  return body;
}

}  // namespace

TEST(BuildRope, TwentyFiveParticles) {
  const auto rope = build_rope(25, 0.02, Vec3::Zero());
  EXPECT_EQ(rope.particles.size(), 25u);
  EXPECT_EQ(rope.constraints.size(), 24u);
  EXPECT_NEAR(total_rest_length(rope), 0.48, 1e-12);
  EXPECT_EQ(std::get<Chain>(rope.topology).n, 25u);
  for (std::size_t i = 0; i < rope.size(); ++i) {
    EXPECT_DOUBLE_EQ(rope.particles[i].position.y(), 0.0);
    EXPECT_NEAR(rope.particles[i].position.x(), 0.02 * i, 1e-15);
    EXPECT_EQ(rope.particles[i].velocity, Vec3::Zero());
  }
}

TEST(BuildRope, MinimalChain) {
  const auto rope = build_rope(2, 1.0, Vec3::Zero());
  EXPECT_EQ(rope.particles[0].position, Vec3(0, 0, 0));
  EXPECT_EQ(rope.particles[1].position, Vec3(1, 0, 0));
  ASSERT_EQ(rope.constraints.size(), 1u);
  EXPECT_DOUBLE_EQ(rope.constraints[0].rest_length, 1.0);
}

TEST(BuildRope, RejectsInvalidArguments) {
  EXPECT_THROW(build_rope(1, 0.02, Vec3::Zero()), ConstructionError);
  EXPECT_THROW(build_rope(5, 0.0, Vec3::Zero()), ConstructionError);
  EXPECT_THROW(build_rope(5, -1.0, Vec3::Zero()), ConstructionError);
}

TEST(BuildCloth, NineByNineCounts) {
  const auto cloth = build_cloth(9, 9, 0.03, Vec3::Zero());
  EXPECT_EQ(cloth.particles.size(), 81u);
  std::size_t structural = 0, shear = 0;
  for (const auto& c : cloth.constraints) {
    if (std::abs(c.rest_length - 0.03) < 1e-12) ++structural;
    else if (std::abs(c.rest_length - 0.03 * std::sqrt(2.0)) < 1e-12) ++shear;
  }
  EXPECT_EQ(structural, 144u);
  EXPECT_EQ(shear, 128u);
  EXPECT_EQ(structural_constraint_count(cloth.topology), 144u);
  for (const auto& p : cloth.particles) EXPECT_DOUBLE_EQ(p.position.z(), 0.0);
  EXPECT_DOUBLE_EQ(max_relative_residual(cloth), 0.0);
}

TEST(BuildCloth, UnitCell) {
  const auto cloth = build_cloth(2, 2, 1.0, Vec3::Zero());
  EXPECT_EQ(cloth.particles.size(), 4u);
  EXPECT_EQ(cloth.constraints.size(), 6u);
  EXPECT_EQ(structural_constraint_count(cloth.topology), 4u);
}

TEST(BuildCloth, RejectsDegenerateGrid) {
  EXPECT_THROW(build_cloth(1, 9, 0.03, Vec3::Zero()), ConstructionError);
  EXPECT_THROW(build_cloth(9, 1, 0.03, Vec3::Zero()), ConstructionError);
}

TEST(ProjectConstraints, SymmetricPair) {
  auto body = two_particles(2.0, 1.0, 1.0);
  project_constraints(body, 1);
  EXPECT_NEAR(body.particles[0].position.x(), 0.5, 1e-15);
  EXPECT_NEAR(body.particles[1].position.x(), 1.5, 1e-15);
}

TEST(ProjectConstraints, PinnedParticleDoesNotMove) {
  auto body = two_particles(2.0, 0.0, 1.0);
  project_constraints(body, 1);
  EXPECT_EQ(body.particles[0].position, Vec3::Zero());
  EXPECT_NEAR(body.particles[1].position.x(), 1.0, 1e-15);
}

TEST(ProjectConstraints, CoincidentEndpointsAreSkipped) {
  auto body = two_particles(0.0, 1.0, 1.0);
  project_constraints(body, 3);
  EXPECT_TRUE(body.particles[0].position.allFinite());
  EXPECT_TRUE(body.particles[1].position.allFinite());
}

TEST(ProjectConstraints, RandomChainConverges) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  for (int trial = 0; trial < 20; ++trial) {
    auto body = build_rope(5, 1.0, Vec3::Zero());
    for (auto& p : body.particles) p.position += Vec3(jitter(rng), jitter(rng), jitter(rng));
    project_constraints(body, 50);
    EXPECT_LT(max_relative_residual(body), 1e-3);
  }
}

TEST(Settle, FreeParticleFallsToTable) {
  DeformableBody body;
  body.particles.push_back({Vec3(0, 0, 1), Vec3::Zero(), 1.0});
  settle(body, PhysicsParams{}, 100);
  EXPECT_DOUBLE_EQ(body.particles[0].position.z(), 0.0);
}

TEST(Settle, RopeAtRestStaysPut) {
  auto rope = build_rope(25, 0.02, Vec3(-0.24, 0, 0));
  const auto before = rope;
  settle(rope, PhysicsParams{}, 100);
  for (std::size_t i = 0; i < rope.size(); ++i)
    EXPECT_LT((rope.particles[i].position - before.particles[i].position).norm(), 1e-6);
}

TEST(Settle, ScrambledRopeDissipates) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  std::uniform_real_distribution<double> lift(0.0, 0.05);
  auto rope = build_rope(25, 0.02, Vec3(-0.24, 0, 0));
  for (auto& p : rope.particles) p.position += Vec3(jitter(rng), jitter(rng), lift(rng));
  const PhysicsParams params;
  std::vector<double> energy;
  for (int s = 0; s < 200; ++s) {
    step(rope, params);
    energy.push_back(kinetic_energy(rope));
    EXPECT_GE(min_height(rope), -1e-9);
  }
  for (std::size_t s = 151; s < energy.size(); ++s) EXPECT_LE(energy[s], energy[s - 1] + 1e-9) << "step " << s;
  EXPECT_LT(max_relative_residual(rope), 1e-3);
}

TEST(Settle, DivergenceIsReported) {
  auto rope = build_rope(3, 0.02, Vec3::Zero());
  rope.particles[1].velocity = Vec3(1e6, 0, 0);
  EXPECT_THROW(step(rope, PhysicsParams{}), SimulationInstability);
}

TEST(PickMove, DragsRopeEnd) {
  auto rope = build_rope(25, 0.02, Vec3(-0.24, 0, 0));
  const Vec3 start = rope.particles[24].position;
  const Vec3 neighbour_start = rope.particles[20].position;
  const auto report = pick_move(rope, 24, Vec2(0.1, 0.0), PhysicsParams{});
  EXPECT_FALSE(report.clamped);
  const Vec3 end = rope.particles[24].position;
  EXPECT_LT((end.head<2>() - (start.head<2>() + Vec2(0.1, 0.0))).norm(), 0.01);
  EXPECT_GT(rope.particles[20].position.x(), neighbour_start.x() + 0.05);
  EXPECT_LT(max_relative_residual(rope), 1e-3);
}

TEST(PickMove, NullDisplacementLeavesBodyUnchanged) {
  auto rope = build_rope(25, 0.02, Vec3(-0.24, 0, 0));
  const auto before = rope;
  pick_move(rope, 12, Vec2::Zero(), PhysicsParams{});
  for (std::size_t i = 0; i < rope.size(); ++i)
    EXPECT_LT((rope.particles[i].position - before.particles[i].position).norm(), 1e-3);
}

TEST(PickMove, ClothCentreTranslatesPartially) {
  auto cloth = build_cloth(9, 9, 0.03, Vec3(-0.12, -0.12, 0));
  const auto centroid = [](const DeformableBody& b) {
    Vec3 c = Vec3::Zero();
    for (const auto& p : b.particles) c += p.position;
    return Vec3(c / static_cast<double>(b.size()));
  };
  const Vec3 before = centroid(cloth);
  pick_move(cloth, 40, Vec2(0.05, 0.05), PhysicsParams{});
  const Vec3 shift = centroid(cloth) - before;
  EXPECT_GT(shift.x(), 0.0);
  EXPECT_GT(shift.y(), 0.0);
  // The grasped particle drags the sheet almost rigidly; allow 1 cm of slide past the command.
  EXPECT_LT(shift.x(), 0.06);
  EXPECT_LT(shift.y(), 0.06);
  EXPECT_LT(max_relative_residual(cloth), 1e-3);
  EXPECT_GE(min_height(cloth), -1e-9);
}

TEST(PickMove, ClampsToRadiusAndRejectsBadIndex) {
  auto rope = build_rope(5, 0.02, Vec3::Zero());
  PickMoveOptions options;
  options.max_radius = 0.05;
  const auto report = pick_move(rope, 0, Vec2(0.3, 0.4), PhysicsParams{}, options);
  EXPECT_TRUE(report.clamped);
  EXPECT_NEAR(report.applied_displacement.norm(), 0.05, 1e-12);
  EXPECT_THROW(pick_move(rope, 5, Vec2(0.01, 0), PhysicsParams{}), std::out_of_range);
}

TEST(PickMove, RestoresInverseMassAndIsDeterministic) {
  auto a = build_cloth(9, 9, 0.03, Vec3(-0.12, -0.12, 0));
  auto b = a;
  for (int k = 0; k < 3; ++k) {
    pick_move(a, 10 + k, Vec2(0.03, -0.02 * k), PhysicsParams{});
    pick_move(b, 10 + k, Vec2(0.03, -0.02 * k), PhysicsParams{});
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.particles[i].position, b.particles[i].position);
    EXPECT_DOUBLE_EQ(a.particles[i].inverse_mass, 1.0 / kDefaultParticleMass);
  }
}

TEST(PickMove, PassiveEnergyNonIncreasingAfterContact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto rope = build_rope(25, 0.02, Vec3(-0.24, 0, 0));
  for (int action = 0; action < 40; ++action) {
    double previous = -1.0;
    bool contact_seen = false;
    PickMoveOptions options;
    options.on_passive_step = [&](const DeformableBody& body) {
      const double e = kinetic_energy(body);
      if (contact_seen) {
        EXPECT_LE(e, previous + 1e-9) << "action " << action;
      }
      if (all_in_contact(body)) contact_seen = true;
      previous = e;
    };
    pick_move(rope, rng() % 25, Vec2(0.08 * u(rng), 0.08 * u(rng)), PhysicsParams{}, options);
  }
}

TEST(PickMove, ClothResidualStaysSmallUnderRandomActions) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto cloth = build_cloth(9, 9, 0.03, Vec3(-0.12, -0.12, 0));
  PickMoveOptions options;
  options.max_radius = 0.08;
  for (int action = 0; action < 150; ++action) {
    pick_move(cloth, rng() % cloth.size(), Vec2(0.08 * u(rng), 0.08 * u(rng)), PhysicsParams{}, options);
    ASSERT_LT(max_relative_residual(cloth), 1e-3) << "action " << action;
    ASSERT_GE(min_height(cloth), -1e-9);
  }
}

TEST(BodyRecord, RoundTripAndCorruption) {
  auto cloth = build_cloth(3, 4, 0.03, Vec3(0.1, 0.2, 0));
  pick_move(cloth, 5, Vec2(0.02, 0.01), PhysicsParams{});
  const auto bytes = to_bytes(cloth);
  const auto back = from_bytes(bytes);
  EXPECT_EQ(to_bytes(back), bytes);
  EXPECT_EQ(std::get<Grid>(back.topology), (Grid{3, 4}));

  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(from_bytes(truncated), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xff;
  EXPECT_THROW(from_bytes(bad_magic), FormatError);
}
