#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pickplace/envs/env.hpp"
#include "pickplace/envs/rewards.hpp"

using namespace pickplace;
using namespace pickplace::envs;

namespace {

EnvConfig quick(EnvKind kind, int scramble = 0, int horizon = 5) {
  auto c = default_config(kind);
  c.init_scramble_steps = scramble;
  c.horizon = horizon;
  return c;
}

}  // namespace

TEST(RopeReward, ClosedFormCases) {
  render::Mask m;
  EXPECT_EQ(rope_reward(m), 0.0);
  for (int c = 0; c < 7; ++c) m.set(32, c);
  EXPECT_DOUBLE_EQ(rope_reward(m), 7.0);
  render::Mask single;
  single.set(40, 3);
  EXPECT_NEAR(rope_reward(single), 0.0183156, 1e-7);
}

TEST(RopeReward, WeightsDecreaseAwayFromCentre) {
  for (int d = 0; d < 31; ++d) {
    EXPECT_GT(rope_row_weight(32 + d), rope_row_weight(32 + d + 1));
    EXPECT_GT(rope_row_weight(32 - d), rope_row_weight(32 - d - 1));
  }
}

TEST(ClothReward, IntersectionCases) {
  const auto goal = cloth_goal_mask();
  EXPECT_DOUBLE_EQ(cloth_reward(goal, goal), 1.0);
  render::Mask disjoint;
  disjoint.set(0, 0);
  EXPECT_DOUBLE_EQ(cloth_reward(disjoint, goal), 0.0);

  render::Mask square, left;
  for (int r = 10; r < 20; ++r)
    for (int c = 10; c < 20; ++c) {
      square.set(r, c);
      if (c < 15) left.set(r, c);
    }
  EXPECT_DOUBLE_EQ(cloth_reward(left, square), 0.5);
  EXPECT_DOUBLE_EQ(cloth_reward(left, square, false), 50.0);
  EXPECT_THROW(cloth_reward(square, render::Mask{}), ConstructionError);
}

TEST(Goals, RopeBandAndFlatClothCoverage) {
  EXPECT_EQ(rope_goal_mask().count(), 3u * 49u);
  EXPECT_GE(coverage(centred_cloth(), cloth_goal_mask()), 0.95);
  EXPECT_DOUBLE_EQ(coverage(centred_rope(), rope_goal_mask()), 1.0);
}

TEST(Reset, NoScrambleGivesStraightCentredRope) {
  PickPlaceEnv env(quick(EnvKind::Rope));
  const auto obs = env.reset(3);
  ASSERT_EQ(obs.state.size(), 50u);
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_NEAR(obs.state[2 * i], -0.24 + 0.02 * static_cast<double>(i), 1e-12);
    EXPECT_DOUBLE_EQ(obs.state[2 * i + 1], 0.0);
  }
}

TEST(Reset, SameSeedSameObservation) {
  PickPlaceEnv a(quick(EnvKind::Rope, 50)), b(quick(EnvKind::Rope, 50));
  EXPECT_EQ(a.reset(7).state, b.reset(7).state);
  EXPECT_NE(a.reset(8).state, b.reset(7).state);
}

TEST(Reset, ScrambledClothLosesCoverage) {
  PickPlaceEnv env(quick(EnvKind::Cloth, 130));
  env.reset(0);
  EXPECT_LT(env.coverage(), 1.0);
  PickPlaceEnv flat(quick(EnvKind::Cloth));
  flat.reset(0);
  EXPECT_LT(env.coverage(), flat.coverage());
}

TEST(Step, HorizonBookkeeping) {
  PickPlaceEnv env(quick(EnvKind::Rope, 0, 3));
  env.reset(1);
  for (int t = 0; t < 3; ++t) {
    const auto r = env.step({ParticlePick{0}, Vec2(0.01, 0)});
    EXPECT_EQ(r.done, t == 2);
  }
  EXPECT_THROW(env.step({ParticlePick{0}, Vec2::Zero()}), std::logic_error);
  env.reset(1);
  EXPECT_EQ(env.episode_step(), 0);
}

TEST(Step, NullActionOnStraightRopeGivesMaxReward) {
  PickPlaceEnv env(quick(EnvKind::Rope));
  env.reset(0);
  const auto r = env.step({ParticlePick{12}, Vec2::Zero()});
  // Oracle: rows 31..33, columns 7..57 of the 1.5 px stroke.
  const double expected = 51.0 * (1.0 + 2.0 * std::exp(-0.5));
  EXPECT_NEAR(r.reward, expected, 1e-9);
}

TEST(Step, ClampsPlaceAndFlagsIt) {
  PickPlaceEnv env(quick(EnvKind::Rope));
  env.reset(0);
  EXPECT_TRUE(env.step({ParticlePick{0}, Vec2(0.3, 0.0)}).info.clamped);
  EXPECT_FALSE(env.step({ParticlePick{0}, Vec2(0.03, 0.0)}).info.clamped);
}

TEST(Step, ImagePickOffObjectIsNoOpWithoutBonus) {
  auto cfg = quick(EnvKind::Rope);
  cfg.obs_mode = ObsMode::Image;
  cfg.pick_bonus = 11.0;
  PickPlaceEnv env(cfg);
  env.reset(0);
  const auto before = env.body().particles;
  const auto off = env.step({render::Pixel{5, 5}, Vec2(0.05, 0.0)});
  EXPECT_FALSE(off.info.pick_on_object);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(env.body().particles[i].position, before[i].position);
  EXPECT_NEAR(off.reward, env.reward(), 1e-12);

  const auto on = env.step({render::Pixel{32, 10}, Vec2(0.0, 0.0)});
  EXPECT_TRUE(on.info.pick_on_object);
  EXPECT_NEAR(on.reward, env.reward() + 11.0, 1e-12);
  ASSERT_TRUE(on.info.particle.has_value());
  EXPECT_EQ(*on.info.particle, 1u);  // pixel column 10 centre is x = -0.22
}

TEST(Step, PointPickResolvesWithinOneAndAHalfSpacings) {
  PickPlaceEnv env(quick(EnvKind::Rope));
  env.reset(0);
  EXPECT_EQ(env.resolve(PointPick{Vec2(-0.24, 0.0)}), std::optional<std::size_t>(0));
  EXPECT_EQ(env.resolve(PointPick{Vec2(-0.24, 0.029)}), std::optional<std::size_t>(0));
  EXPECT_FALSE(env.resolve(PointPick{Vec2(-0.24, 0.031)}).has_value());
  EXPECT_FALSE(env.resolve(PointPick{Vec2(0.2, 0.2)}).has_value());
}

TEST(Candidates, CountsPerEnvironment) {
  EXPECT_EQ(PickPlaceEnv(quick(EnvKind::Rope)).pick_candidates().size(), 25u);
  EXPECT_EQ(PickPlaceEnv(quick(EnvKind::Cloth)).pick_candidates().size(), 81u);
  PickPlaceEnv simplified(quick(EnvKind::ClothSimplified));
  const auto corners = simplified.pick_candidates();
  ASSERT_EQ(corners.size(), 4u);
  EXPECT_EQ(std::get<ParticlePick>(corners[3]).index, 80u);
  EXPECT_THROW((void)simplified.resolve(ParticlePick{40}), std::out_of_range);

  render::Mask one;
  one.set(12, 40);
  const auto img = render::paint(one, render::VisualStyle{});
  EXPECT_EQ(render::mask_pixels(render::segment(img, render::VisualStyle{})).size(), 1u);

  auto cfg = quick(EnvKind::Rope);
  cfg.obs_mode = ObsMode::Image;
  PickPlaceEnv img_env(cfg);
  img_env.reset(0);
  EXPECT_EQ(img_env.pick_candidates().size(), 153u);
}

TEST(Config, RejectsBadValues) {
  auto c = default_config(EnvKind::Cloth);
  EXPECT_EQ(c.horizon, 120);
  EXPECT_EQ(c.init_scramble_steps, 130);
  EXPECT_EQ(default_config(EnvKind::Rope).horizon, 200);
  EXPECT_EQ(default_config(EnvKind::Rope).init_scramble_steps, 50);
  c.horizon = 0;
  EXPECT_THROW(validate(c), ConfigError);
  auto s = default_config(EnvKind::ClothSimplified);
  s.obs_mode = ObsMode::Image;
  EXPECT_THROW(validate(s), ConfigError);
  auto d = default_config(EnvKind::Rope);
  d.dr.mass_scale = {0.0, 1.0};
  EXPECT_THROW(validate(d), ConfigError);
}

TEST(Randomize, DegenerateRangesGiveIdenticalEpisodes) {
  auto cfg = quick(EnvKind::Rope, 3, 3);
  cfg.dr.enabled = true;
  cfg.dr.mass_scale = {1.5, 1.5};
  cfg.dr.friction = {0.2, 0.2};
  cfg.dr.color_jitter = {0.05, 0.05};
  cfg.dr.light_gain = {0.9, 0.9};
  Rng r1(1), r2(99);
  const auto a = randomize(cfg, r1), b = randomize(cfg, r2);
  EXPECT_EQ(a.mass_scale, b.mass_scale);
  EXPECT_EQ(a.friction, b.friction);
  EXPECT_EQ(a.style.object_color, b.style.object_color);
  EXPECT_EQ(a.style.light_gain, b.style.light_gain);

  cfg.init_scramble_steps = 0;
  PickPlaceEnv e1(cfg), e2(cfg);
  e1.reset(1);
  e2.reset(2);
  for (int t = 0; t < 3; ++t) {
    const PickPlaceAction act{ParticlePick{static_cast<std::size_t>(5 * t)}, Vec2(0.02, -0.03)};
    EXPECT_EQ(e1.step(act).observation.state, e2.step(act).observation.state);
  }
}

TEST(Randomize, MassScaleHalvesInverseMass) {
  auto cfg = quick(EnvKind::Rope);
  cfg.dr.enabled = true;
  cfg.dr.mass_scale = {2.0, 2.0};
  PickPlaceEnv env(cfg);
  env.reset(4);
  for (const auto& p : env.body().particles) EXPECT_DOUBLE_EQ(p.inverse_mass, 0.5 / physics::kDefaultParticleMass);
}

TEST(Randomize, FrictionDrawStatistics) {
  auto cfg = quick(EnvKind::Rope);
  cfg.dr.enabled = true;
  Rng rng(17);
  double lo = 1.0, hi = 0.0, sum = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double f = randomize(cfg, rng).friction;
    lo = std::min(lo, f);
    hi = std::max(hi, f);
    sum += f;
  }
  EXPECT_GE(lo, 0.1);
  EXPECT_LE(hi, 0.5);
  EXPECT_GE(sum / 100.0, 0.25);
  EXPECT_LE(sum / 100.0, 0.35);
}

TEST(Episode, RandomPolicyIsReproducibleAndRunsFullHorizon) {
  const auto run = [] {
    PickPlaceEnv env(quick(EnvKind::Rope, 10, 15));
    env.reset(21);
    Rng rng(4);
    std::vector<double> rewards;
    bool done = false;
    int steps = 0;
    while (!done) {
      const auto c = env.pick_candidates();
      const auto r = env.step({c[uniform_index(rng, c.size())], uniform_disk(rng, 0.08)});
      EXPECT_GT(env.segmentation().count(), 0u);
      EXPECT_GE(r.reward, 0.0);
      EXPECT_LE(r.reward, static_cast<double>(env.segmentation().count()));
      EXPECT_GE(r.info.coverage, 0.0);
      EXPECT_LE(r.info.coverage, 1.0);
      rewards.push_back(r.reward);
      done = r.done;
      ++steps;
    }
    EXPECT_EQ(steps, 15);
    return rewards;
  };
  EXPECT_EQ(run(), run());
}
