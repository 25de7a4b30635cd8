#include <gtest/gtest.h>

#include <cmath>

#include "pickplace/sac/learner.hpp"

using namespace pickplace;
using namespace pickplace::sac;

namespace {

Transition make_transition(float tag, int state_dim = 2) {
  Transition t;
  t.obs.state.assign(static_cast<std::size_t>(state_dim), tag);
  t.next_obs.state.assign(static_cast<std::size_t>(state_dim), tag + 0.5f);
  t.action = {0.1f, -0.2f};
  t.reward = tag;
  return t;
}

SacConfig small_config(ActorKind kind, int pick_dim = 0, int state_dim = 2) {
  SacConfig c;
  c.actor_kind = kind;
  c.obs.state_dim = state_dim;
  c.obs.state_scale = 1.0;
  c.pick_dim = pick_dim;
  c.hidden = {16, 16};
  c.tile = 3;
  c.batch_size = 8;
  return c;
}

template <class S>
Matrix<S> uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix<S> m(rows, cols);
  for (auto& v : m.reshaped()) v = static_cast<S>(uniform(rng, lo, hi));
  return m;
}

template <class S>
Batch<S> random_batch(const SacLearner<S>& l, Eigen::Index n, Rng& rng) {
  const auto& c = l.config();
  Batch<S> b;
  b.obs = uniform_matrix<S>(c.obs.input_dim(), n, rng);
  b.next_obs = uniform_matrix<S>(c.obs.input_dim(), n, rng);
  b.pick_enc = uniform_matrix<S>(l.actor().pick_dim(), n, rng, 0.0, 1.0);
  b.next_pick_enc = uniform_matrix<S>(l.actor().pick_dim(), n, rng, 0.0, 1.0);
  b.action = uniform_matrix<S>(l.actor().action_dim(), n, rng, -0.9, 0.9);
  b.reward = uniform_matrix<S>(1, n, rng);
  b.done = Matrix<S>::Zero(1, n);
  return b;
}

double max_abs_diff(const Vector<double>& a, const Vector<double>& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(ReplayBuffer, FifoEvictsOldestFirst) {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) buf.add(make_transition(static_cast<float>(i)));
  ASSERT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.total_added(), 5u);
  EXPECT_FLOAT_EQ(buf.at(0).reward, 2.0f);
  EXPECT_FLOAT_EQ(buf.at(2).reward, 4.0f);
  EXPECT_THROW((void)buf.at(3), std::out_of_range);
}

TEST(ReplayBuffer, RejectsBadTransitions) {
  ReplayBuffer buf(2);
  auto t = make_transition(0.0f);
  t.reward = std::nanf("");
  EXPECT_THROW(buf.add(t), NumericalError);
  t = make_transition(0.0f);
  t.action = {1.5f, 0.0f};
  EXPECT_THROW(buf.add(t), std::invalid_argument);
  EXPECT_THROW(ReplayBuffer(0), ConstructionError);
}

TEST(ReplayBuffer, RoundTripPreservesOrder) {
  ReplayBuffer buf(4);
  for (int i = 0; i < 6; ++i) buf.add(make_transition(static_cast<float>(i)));
  BinaryWriter w;
  buf.write(w);
  ReplayBuffer back(4);
  BinaryReader r(w.bytes());
  back.read(r);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_EQ(back.total_added(), 6u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back.at(i).obs, buf.at(i).obs);
    EXPECT_EQ(back.at(i).reward, buf.at(i).reward);
  }
  ReplayBuffer wrong(5);
  BinaryReader r2(w.bytes());
  EXPECT_THROW(wrong.read(r2), FormatError);
}

TEST(ReplayBuffer, SampleIndicesInRange) {
  ReplayBuffer buf(10);
  Rng rng(3);
  EXPECT_THROW((void)buf.sample_indices(4, rng), std::logic_error);
  for (int i = 0; i < 7; ++i) buf.add(make_transition(static_cast<float>(i)));
  for (auto i : buf.sample_indices(1000, rng)) EXPECT_LT(i, 7u);
}

TEST(Networks, TileAndUntileAreAdjoint) {
  Matrix<double> m = Matrix<double>::Random(2, 3);
  const Matrix<double> t = tile_rows(m, 4);
  ASSERT_EQ(t.rows(), 8);
  EXPECT_EQ(t.block(6, 0, 2, 3), m);
  Matrix<double> g = Matrix<double>::Random(8, 3);
  // <tile(m), g> == <m, untile(g)>
  EXPECT_NEAR((t.array() * g.array()).sum(), (m.array() * untile_rows<double>(g, 2, 4).array()).sum(), 1e-12);
}

TEST(Networks, ObsMatrixScalesStateAndImage) {
  EncodedObs s;
  s.state = {0.1f, -0.2f};
  const Matrix<double> x = obs_matrix<double>(ObsLayout{false, 2, 10.0}, {&s});
  EXPECT_NEAR(x(0, 0), 1.0, 1e-6);
  EXPECT_NEAR(x(1, 0), -2.0, 1e-6);
  EncodedObs img;
  img.pixels.assign(3 * 64 * 64, 255);
  img.pixels[5] = 0;
  const Matrix<float> xi = obs_matrix<float>(ObsLayout{true, 0, 10.0}, {&img});
  EXPECT_FLOAT_EQ(xi(0, 0), 1.0f);
  EXPECT_FLOAT_EQ(xi(5, 0), 0.0f);
  EXPECT_THROW((void)obs_matrix<double>(ObsLayout{false, 3, 10.0}, {&s}), ShapeError);
}

TEST(Networks, CriticInputGradientsMatchFiniteDifferences) {
  Rng rng(5);
  Critic<double> q(ObsLayout{false, 3, 1.0}, 2, 2, {8, 8}, 3);
  q.init(rng);
  const Matrix<double> x = Matrix<double>::Random(3, 4);
  Matrix<double> pick = Matrix<double>::Random(2, 4);
  Matrix<double> place = Matrix<double>::Random(2, 4);
  typename Critic<double>::Cache c;
  (void)q.forward(x, pick, place, &c);
  const auto g = q.input_grads(c, Matrix<double>::Ones(1, 4));
  const double h = 1e-6;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) {
      Matrix<double> p = pick, m = pick;
      p(i, j) += h;
      m(i, j) -= h;
      const double fd = (q.forward(x, p, place).sum() - q.forward(x, m, place).sum()) / (2 * h);
      EXPECT_NEAR(g.pick_enc(i, j), fd, 1e-6);
      Matrix<double> pp = place, pm = place;
      pp(i, j) += h;
      pm(i, j) -= h;
      const double fd2 = (q.forward(x, pick, pp).sum() - q.forward(x, pick, pm).sum()) / (2 * h);
      EXPECT_NEAR(g.place(i, j), fd2, 1e-6);
    }
}

TEST(Networks, CriticRejectsWrongShapes) {
  Critic<double> q(ObsLayout{false, 3, 1.0}, 2, 2, {8}, 3);
  EXPECT_THROW((void)q.forward(Matrix<double>::Zero(3, 2), Matrix<double>::Zero(1, 2), Matrix<double>::Zero(2, 2)), ShapeError);
  EXPECT_THROW((void)q.forward(Matrix<double>::Zero(4, 2), Matrix<double>::Zero(2, 2), Matrix<double>::Zero(2, 2)), ShapeError);
}

TEST(Networks, ActorDeterministicWithZeroNoise) {
  Rng rng(2);
  for (auto kind : {ActorKind::Place, ActorKind::Joint, ActorKind::Factored}) {
    Actor<double> a(kind, ObsLayout{false, 3, 1.0}, 2, {8, 8}, 3);
    a.init(rng, 1.0);
    const Matrix<double> x = Matrix<double>::Random(3, 5);
    const Matrix<double> pick = Matrix<double>::Random(2, 5);
    const Matrix<double> z = Matrix<double>::Zero(a.noise_dim(), 5);
    const auto o1 = a.forward(x, &pick, z);
    const auto o2 = a.forward(x, &pick, z);
    EXPECT_EQ(o1.action, o2.action);
    EXPECT_LT(o1.action.cwiseAbs().maxCoeff(), 1.0);
    EXPECT_EQ(o1.place.rows(), 2);
    if (kind != ActorKind::Place) {
      EXPECT_GE(o1.pick_enc.minCoeff(), 0.0);
      EXPECT_LE(o1.pick_enc.maxCoeff(), 1.0);
    }
  }
}

TEST(Learner, ZeroGammaTargetIsScaledReward) {
  auto cfg = small_config(ActorKind::Place);
  cfg.gamma = 0.0;
  cfg.reward_scale = 0.5;
  SacLearner<double> l(cfg, 1);
  Rng rng(1);
  const auto b = random_batch(l, 6, rng);
  const Matrix<double> y = l.critic_targets(b, nn::standard_normal<double>(2, 6, rng));
  for (int j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(y(0, j), 0.5 * b.reward(0, j));
}

TEST(Learner, DoneMasksBootstrap) {
  auto cfg = small_config(ActorKind::Joint);
  cfg.fixed_alpha = 0.2;
  SacLearner<double> l(cfg, 1);
  Rng rng(4);
  auto b = random_batch(l, 6, rng);
  b.done.setOnes();
  const Matrix<double> y = l.critic_targets(b, nn::standard_normal<double>(4, 6, rng));
  for (int j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(y(0, j), b.reward(0, j));
  b.done.setZero();
  const Matrix<double> noise = Matrix<double>::Zero(4, 6);
  const Matrix<double> y2 = l.critic_targets(b, noise);
  // Oracle assembled from the target networks directly.
  const auto next = l.actor().forward(b.next_obs, nullptr, noise);
  const Matrix<double> q = l.target1().forward(b.next_obs, next.pick_enc, next.place).cwiseMin(l.target2().forward(b.next_obs, next.pick_enc, next.place));
  for (int j = 0; j < 6; ++j) EXPECT_NEAR(y2(0, j), b.reward(0, j) + 0.99 * (q(0, j) - 0.2 * next.log_prob(0, j)), 1e-12);
}

TEST(Learner, CriticLossDecreasesOnZeroRewardTerminalData) {
  auto cfg = small_config(ActorKind::Place);
  cfg.critic_lr = 1e-3;
  SacLearner<double> l(cfg, 3);
  Rng rng(3);
  auto b = random_batch(l, 32, rng);
  b.reward.setZero();
  b.done.setOnes();
  const Matrix<double> y = l.critic_targets(b, nn::standard_normal<double>(2, 32, rng));
  const auto first = l.critic_step(b, y);
  std::pair<double, double> last{};
  for (int i = 0; i < 200; ++i) last = l.critic_step(b, y);
  EXPECT_LT(last.first, 0.1 * first.first);
  EXPECT_LT(last.second, 0.1 * first.second);
}

TEST(Learner, CriticGradientMatchesFiniteDifferences) {
  auto cfg = small_config(ActorKind::Factored);
  SacLearner<double> l(cfg, 8);
  Rng rng(8);
  const auto b = random_batch(l, 5, rng);
  const Matrix<double> y = Matrix<double>::Random(1, 5);
  const Matrix<double> place = b.action.bottomRows(2);
  auto& q = l.mutable_critic1();
  const auto loss = [&] {
    const Matrix<double> e = q.forward(b.obs, b.pick_enc, place) - y;
    return 0.5 * e.squaredNorm() / 5.0;
  };
  typename Critic<double>::Cache c;
  const Matrix<double> e = q.forward(b.obs, b.pick_enc, place, &c) - y;
  auto grads = zero_grads(q.blocks());
  q.accumulate(c, Matrix<double>(e / 5.0), grads);
  auto& p = *q.mutable_blocks()[1];
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < p.size(); i += 7) {
    const double keep = p[i];
    p[i] = keep + h;
    const double lp = loss();
    p[i] = keep - h;
    const double lm = loss();
    p[i] = keep;
    EXPECT_NEAR(grads[1][i], (lp - lm) / (2 * h), 1e-7) << i;
  }
}

// Actor loss gradient against central differences, for each factorization.
class ActorGradient : public ::testing::TestWithParam<ActorKind> {};

TEST_P(ActorGradient, MatchesFiniteDifferences) {
  const auto kind = GetParam();
  auto cfg = small_config(kind, kind == ActorKind::Place ? 2 : 0);
  cfg.fixed_alpha = 0.3;
  cfg.policy_final_scale = 1.0;
  SacLearner<double> l(cfg, 21);
  Rng rng(21);
  const auto b = random_batch(l, 6, rng);
  const Matrix<double> noise = nn::standard_normal<double>(l.actor().noise_dim(), 6, rng);
  auto grads = zero_grads(l.actor().blocks());
  (void)l.actor_loss(b, noise, &grads);
  auto blocks = l.mutable_actor().mutable_blocks();
  const double h = 1e-6;
  int checked = 0;
  for (std::size_t k = 1; k < blocks.size(); ++k) {
    auto& p = *blocks[k];
    for (Eigen::Index i = 0; i < p.size(); i += 5) {
      const double keep = p[i];
      p[i] = keep + h;
      const double lp = l.actor_loss(b, noise, nullptr);
      p[i] = keep - h;
      const double lm = l.actor_loss(b, noise, nullptr);
      p[i] = keep;
      EXPECT_NEAR(grads[k][i], (lp - lm) / (2 * h), 1e-6) << "block " << k << " index " << i;
      ++checked;
    }
  }
  EXPECT_GT(checked, 20);
}

INSTANTIATE_TEST_SUITE_P(Kinds, ActorGradient, ::testing::Values(ActorKind::Place, ActorKind::Joint, ActorKind::Factored));

TEST(Learner, ImageActorGradientMatchesFiniteDifferences) {
  auto cfg = small_config(ActorKind::Joint);
  cfg.obs = ObsLayout{true, 0, 10.0};
  cfg.hidden = {8};
  cfg.fixed_alpha = 0.1;
  cfg.policy_final_scale = 1.0;
  SacLearner<double> l(cfg, 4);
  Rng rng(4);
  Batch<double> b;
  b.obs = (Matrix<double>::Random(3 * 64 * 64, 2).array() + 1.0) * 0.5;
  b.pick_enc = Matrix<double>::Zero(2, 2);
  b.action = Matrix<double>::Zero(4, 2);
  const Matrix<double> noise = nn::standard_normal<double>(4, 2, rng);
  auto grads = zero_grads(l.actor().blocks());
  (void)l.actor_loss(b, noise, &grads);
  auto& trunk = *l.mutable_actor().mutable_blocks()[0];
  const double h = 1e-5;
  for (int s = 0; s < 12; ++s) {
    const auto i = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(trunk.size())));
    const double keep = trunk[i];
    trunk[i] = keep + h;
    const double lp = l.actor_loss(b, noise, nullptr);
    trunk[i] = keep - h;
    const double lm = l.actor_loss(b, noise, nullptr);
    trunk[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    EXPECT_NEAR(grads[0][i], fd, 1e-5 + 1e-3 * std::abs(fd)) << i;
  }
}

TEST(Learner, ZeroCriticRaisesPolicyEntropy) {
  auto cfg = small_config(ActorKind::Place);
  cfg.fixed_alpha = 1.0;
  cfg.actor_lr = 1e-2;
  SacLearner<double> l(cfg, 6);
  // Start narrow (std ~ 0.05); with a flat critic the policy should widen.
  auto& head = l.mutable_actor().mutable_head();
  nn::bias(head.mutable_params(), head.layers().back()).tail(2).setConstant(-3.0);
  for (auto* p : l.mutable_critic1().mutable_blocks()) p->setZero();
  for (auto* p : l.mutable_critic2().mutable_blocks()) p->setZero();
  Rng rng(6);
  const auto b = random_batch(l, 32, rng);
  Matrix<double> lp0, lp1;
  (void)l.actor_loss(b, nn::standard_normal<double>(2, 32, rng), nullptr, &lp0);
  for (int i = 0; i < 100; ++i) (void)l.actor_step(b, nn::standard_normal<double>(2, 32, rng), nullptr);
  (void)l.actor_loss(b, nn::standard_normal<double>(2, 32, rng), nullptr, &lp1);
  EXPECT_LT(lp1.mean(), lp0.mean() - 0.5);
}

TEST(Learner, TemperatureMovesAgainstEntropyGap) {
  auto cfg = small_config(ActorKind::Place);
  cfg.alpha_lr = 1e-2;
  {
    SacLearner<double> l(cfg, 1);
    // log-prob above minus the target entropy means the policy is too narrow: alpha rises.
    (void)l.alpha_step(Matrix<double>::Constant(1, 4, 5.0));
    EXPECT_GT(l.log_alpha(), 0.0);
  }
  {
    SacLearner<double> l(cfg, 1);
    (void)l.alpha_step(Matrix<double>::Constant(1, 4, -5.0));
    EXPECT_LT(l.log_alpha(), 0.0);
  }
  {
    SacLearner<double> l(cfg, 1);
    EXPECT_DOUBLE_EQ(l.target_entropy(), -2.0);
    (void)l.alpha_step(Matrix<double>::Constant(1, 4, 2.0));
    EXPECT_DOUBLE_EQ(l.log_alpha(), 0.0);
  }
  SacLearner<double> joint(small_config(ActorKind::Factored), 1);
  EXPECT_DOUBLE_EQ(joint.target_entropy(), -4.0);
  cfg.fixed_alpha = 0.05;
  SacLearner<double> fixed(cfg, 1);
  (void)fixed.alpha_step(Matrix<double>::Constant(1, 4, 5.0));
  EXPECT_DOUBLE_EQ(fixed.alpha(), 0.05);
}

TEST(Learner, PolyakSyncEndpointsAndDecay) {
  SacLearner<double> l(small_config(ActorKind::Place), 2);
  for (auto* p : l.mutable_critic1().mutable_blocks()) p->array() += 1.0;
  const Vector<double> target0 = *l.target1().blocks()[1];
  l.sync_targets(0.0);
  EXPECT_EQ(*l.target1().blocks()[1], target0);
  const Vector<double> online = *l.critic1().blocks()[1];
  const double gap0 = max_abs_diff(target0, online);
  const double tau = 0.1;
  for (int k = 0; k < 10; ++k) l.sync_targets(tau);
  EXPECT_NEAR(max_abs_diff(*l.target1().blocks()[1], online), gap0 * std::pow(1 - tau, 10), 1e-12);
  l.sync_targets(1.0);
  EXPECT_EQ(*l.target1().blocks()[1], online);
}

TEST(Learner, TargetsStayBehindOnlineAfterUpdates) {
  auto cfg = small_config(ActorKind::Joint);
  cfg.tau = 0.0;
  SacLearner<double> l(cfg, 9);
  Rng rng(9);
  const Vector<double> before = *l.target2().blocks()[1];
  for (int i = 0; i < 5; ++i) (void)l.update(random_batch(l, 8, rng));
  EXPECT_EQ(*l.target2().blocks()[1], before);
  EXPECT_NE(*l.critic2().blocks()[1], before);
  EXPECT_EQ(l.updates(), 5u);
}

TEST(Learner, DeterministicForSeedAndSaveLoadResumes) {
  Rng r1(12), r2(12);
  SacLearner<double> a(small_config(ActorKind::Factored), 5), b(small_config(ActorKind::Factored), 5);
  for (int i = 0; i < 3; ++i) {
    (void)a.update(random_batch(a, 8, r1));
    (void)b.update(random_batch(b, 8, r2));
  }
  EXPECT_EQ(*a.actor().blocks()[2], *b.actor().blocks()[2]);
  BinaryWriter w;
  a.write(w);
  SacLearner<double> c(small_config(ActorKind::Factored), 99);
  BinaryReader rd(w.bytes());
  c.read(rd);
  EXPECT_EQ(rd.remaining(), 0u);
  Rng r3 = r1;
  const auto sa = a.update(random_batch(a, 8, r1));
  const auto sc = c.update(random_batch(c, 8, r3));
  EXPECT_DOUBLE_EQ(sa.actor_loss, sc.actor_loss);
  EXPECT_EQ(*a.critic1().blocks()[1], *c.critic1().blocks()[1]);
}

TEST(Learner, MakeBatchGathersTransitions) {
  ReplayBuffer buf(8);
  for (int i = 0; i < 4; ++i) {
    auto t = make_transition(static_cast<float>(i) * 0.1f);
    t.pick_enc = {0.25f, static_cast<float>(i) * 0.1f};
    t.done = i == 2;
    buf.add(t);
  }
  const auto b = make_batch<double>(buf, {2, 0}, ObsLayout{false, 2, 10.0});
  EXPECT_NEAR(b.obs(0, 0), 2.0, 1e-6);
  EXPECT_NEAR(b.next_obs(0, 1), 5.0, 1e-6);
  EXPECT_NEAR(b.pick_enc(1, 0), 0.2, 1e-6);
  EXPECT_DOUBLE_EQ(b.done(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(b.done(0, 1), 0.0);
  EXPECT_NEAR(b.reward(0, 0), 0.2, 1e-6);
}

// Single-step bandit with reward 1 - |a - a*|^2: the critic should recover the reward surface
// and the policy mean should settle near a*.
TEST(Learner, QuadraticBanditCriticWithinFivePercent) {
  SacConfig cfg;
  cfg.actor_kind = ActorKind::Place;
  cfg.obs = ObsLayout{false, 2, 1.0};
  cfg.hidden = {64, 64};
  cfg.batch_size = 128;
  cfg.gamma = 0.0;
  cfg.actor_lr = cfg.critic_lr = 1e-3;
  cfg.fixed_alpha = 0.01;
  SacLearner<float> l(cfg, 17);
  Rng rng(17);
  const Eigen::Vector2f a_star(0.3f, -0.4f);
  const auto reward = [&](const Matrix<float>& a) {
    return Matrix<float>(1.0f - (a.colwise() - a_star).colwise().squaredNorm().array());
  };
  Batch<float> b;
  b.obs = Matrix<float>::Zero(2, cfg.batch_size);
  b.next_obs = b.obs;
  b.pick_enc = Matrix<float>::Zero(0, cfg.batch_size);
  b.next_pick_enc = b.pick_enc;
  b.done = Matrix<float>::Ones(1, cfg.batch_size);
  for (int it = 0; it < 3000; ++it) {
    // Half the batch from the current policy, half uniform for coverage.
    const auto out = l.actor().forward(b.obs, &b.pick_enc, nn::standard_normal<float>(2, cfg.batch_size, rng));
    b.action = out.action;
    for (int j = 0; j < cfg.batch_size; j += 2)
      for (int i = 0; i < 2; ++i) b.action(i, j) = static_cast<float>(uniform(rng, -1.0, 1.0));
    b.reward = reward(b.action);
    (void)l.update(b);
  }
  const Matrix<float> no_pick = Matrix<float>::Zero(0, 1);
  const auto det = l.actor().forward(b.obs.leftCols(1), &no_pick, Matrix<float>::Zero(2, 1));
  EXPECT_NEAR(det.place(0, 0), a_star.x(), 0.05);
  EXPECT_NEAR(det.place(1, 0), a_star.y(), 0.05);
  Matrix<float> probe(2, 5);
  probe << 0.3f, 0.1f, 0.5f, 0.3f, 0.0f, -0.4f, -0.4f, -0.2f, -0.6f, -0.1f;
  const Matrix<float> q = l.min_q(Matrix<float>::Zero(2, 5), Matrix<float>::Zero(0, 5), probe);
  const Matrix<float> r = reward(probe);
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(q(0, j), r(0, j), 0.05f * std::abs(r(0, j))) << j;
}
