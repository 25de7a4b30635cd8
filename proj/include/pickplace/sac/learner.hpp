#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pickplace/common/binary_io.hpp"
#include "pickplace/common/random.hpp"
#include "pickplace/sac/networks.hpp"

namespace pickplace::sac {

struct SacConfig {
  ActorKind actor_kind = ActorKind::Place;
  ObsLayout obs;
  int pick_dim = 0;  // encoding width for the Place kind; Joint/Factored always use 2
  std::vector<int> hidden{256, 256};
  int tile = kPickTile;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double gamma = 0.99;
  double tau = 5e-3;
  int batch_size = 256;
  double reward_scale = 1.0;
  std::optional<double> target_entropy;  // default: minus the action dimension
  double init_log_alpha = 0.0;
  std::optional<double> fixed_alpha;     // disables temperature learning
  double policy_final_scale = 1e-2;
};

template <class S>
struct Batch {
  Matrix<S> obs;
  Matrix<S> pick_enc;
  Matrix<S> action;
  Matrix<S> reward;  // 1 x B, unscaled
  Matrix<S> next_obs;
  Matrix<S> done;           // 1 x B, 1 for terminal
  Matrix<S> next_pick_enc;  // Place kind: pick encodings drawn for the next observations
  [[nodiscard]] Eigen::Index size() const { return obs.cols(); }
};

struct UpdateStats {
  double critic1_loss = 0.0;
  double critic2_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double mean_q = 0.0;
  double mean_log_prob = 0.0;
};

/// Twin-critic soft actor-critic with Polyak targets and automatic temperature.
template <class S>
class SacLearner {
 public:
  SacLearner(SacConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), rng_(mix_seed(seed, 11)) {
    if (cfg_.batch_size < 1 || !(cfg_.gamma >= 0.0 && cfg_.gamma <= 1.0) || !(cfg_.tau >= 0.0 && cfg_.tau <= 1.0))
      throw ConstructionError("invalid SAC hyperparameters");
    actor_ = Actor<S>(cfg_.actor_kind, cfg_.obs, cfg_.pick_dim, cfg_.hidden, cfg_.tile);
    const int critic_pick = actor_.pick_dim();
    q1_ = Critic<S>(cfg_.obs, critic_pick, Actor<S>::kPlaceDim, cfg_.hidden, cfg_.tile);
    q2_ = q1_;
    Rng init_rng(mix_seed(seed, 7));
    actor_.init(init_rng, cfg_.policy_final_scale);
    q1_.init(init_rng);
    q2_.init(init_rng);
    q1_target_ = q1_;
    q2_target_ = q2_;
    target_entropy_ = cfg_.target_entropy.value_or(-static_cast<double>(actor_.action_dim()));
    log_alpha_ = Vector<S>::Constant(1, static_cast<S>(cfg_.init_log_alpha));
    actor_opt_ = make_opt(actor_.blocks(), cfg_.actor_lr);
    q1_opt_ = make_opt(q1_.blocks(), cfg_.critic_lr);
    q2_opt_ = make_opt(q2_.blocks(), cfg_.critic_lr);
    alpha_opt_ = nn::AdamState<S>(1, cfg_.alpha_lr);
  }

  [[nodiscard]] const SacConfig& config() const { return cfg_; }
  [[nodiscard]] const Actor<S>& actor() const { return actor_; }
  Actor<S>& mutable_actor() { return actor_; }
  [[nodiscard]] const Critic<S>& critic1() const { return q1_; }
  [[nodiscard]] const Critic<S>& critic2() const { return q2_; }
  Critic<S>& mutable_critic1() { return q1_; }
  Critic<S>& mutable_critic2() { return q2_; }
  [[nodiscard]] const Critic<S>& target1() const { return q1_target_; }
  [[nodiscard]] const Critic<S>& target2() const { return q2_target_; }
  [[nodiscard]] double alpha() const { return cfg_.fixed_alpha ? *cfg_.fixed_alpha : std::exp(static_cast<double>(log_alpha_[0])); }
  [[nodiscard]] double log_alpha() const { return static_cast<double>(log_alpha_[0]); }
  [[nodiscard]] double target_entropy() const { return target_entropy_; }
  [[nodiscard]] std::uint64_t updates() const { return updates_; }
  Rng& rng() { return rng_; }

  /// min over the twin critics (online networks).
  Matrix<S> min_q(const Matrix<S>& x, const Matrix<S>& pick_enc, const Matrix<S>& place) const {
    return q1_.forward(x, pick_enc, place).cwiseMin(q2_.forward(x, pick_enc, place));
  }

  /// Bootstrapped target y = scale*r + gamma*(1 - done)*(min target Q(o', pick', a') - alpha*log pi(a'|o', pick')).
  Matrix<S> critic_targets(const Batch<S>& b, const Matrix<S>& noise) const {
    const Matrix<S>* given = actor_.kind() == ActorKind::Place ? &b.next_pick_enc : nullptr;
    const auto next = actor_.forward(b.next_obs, given, noise);
    const Matrix<S> q_next =
        q1_target_.forward(b.next_obs, next.pick_enc, next.place).cwiseMin(q2_target_.forward(b.next_obs, next.pick_enc, next.place));
    const S a = static_cast<S>(alpha());
    const Matrix<S> soft = q_next - a * next.log_prob;
    return static_cast<S>(cfg_.reward_scale) * b.reward.array() +
           static_cast<S>(cfg_.gamma) * (S(1) - b.done.array()) * soft.array();
  }

  /// One Adam step on each critic toward `y`; returns the two losses 0.5 * mean (Q - y)^2.
  std::pair<double, double> critic_step(const Batch<S>& b, const Matrix<S>& y, double* mean_q = nullptr) {
    const S inv_b = S(1) / static_cast<S>(b.size());
    const Matrix<S> place = b.action.bottomRows(Actor<S>::kPlaceDim);
    double losses[2];
    Critic<S>* nets[2] = {&q1_, &q2_};
    std::vector<nn::AdamState<S>>* opts[2] = {&q1_opt_, &q2_opt_};
    double q_sum = 0.0;
    for (int k = 0; k < 2; ++k) {
      typename Critic<S>::Cache cache;
      const Matrix<S> q = nets[k]->forward(b.obs, b.pick_enc, place, &cache);
      const Matrix<S> err = q - y;
      losses[k] = 0.5 * static_cast<double>(err.squaredNorm()) / static_cast<double>(b.size());
      if (!std::isfinite(losses[k])) throw NumericalError("critic loss is not finite");
      q_sum += static_cast<double>(q.sum());
      auto grads = zero_grads(nets[k]->blocks());
      nets[k]->accumulate(cache, Matrix<S>(err * inv_b), grads);
      apply(nets[k]->mutable_blocks(), grads, *opts[k]);
    }
    if (mean_q) *mean_q = q_sum / (2.0 * static_cast<double>(b.size()));
    return {losses[0], losses[1]};
  }

  /// Actor loss mean(alpha * log pi - min Q) with reparameterized samples; gradients go to `grads` when given.
  double actor_loss(const Batch<S>& b, const Matrix<S>& noise, Grads<S>* grads, Matrix<S>* log_prob_out = nullptr) const {
    typename Actor<S>::Cache ac;
    const Matrix<S>* given = actor_.kind() == ActorKind::Place ? &b.pick_enc : nullptr;
    const auto out = actor_.forward(b.obs, given, noise, &ac);
    typename Critic<S>::Cache c1, c2;
    const Matrix<S> v1 = q1_.forward(b.obs, out.pick_enc, out.place, &c1);
    const Matrix<S> v2 = q2_.forward(b.obs, out.pick_enc, out.place, &c2);
    const S a = static_cast<S>(alpha());
    const Eigen::Index n = b.size();
    const S inv_b = S(1) / static_cast<S>(n);
    double loss = 0.0;
    Matrix<S> d1 = Matrix<S>::Zero(1, n), d2 = Matrix<S>::Zero(1, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool first = v1(0, j) <= v2(0, j);
      loss += static_cast<double>(a * out.log_prob(0, j) - (first ? v1(0, j) : v2(0, j)));
      (first ? d1 : d2)(0, j) = -inv_b;
    }
    loss /= static_cast<double>(n);
    if (log_prob_out) *log_prob_out = out.log_prob;
    if (!grads) return loss;
    const auto g1 = q1_.input_grads(c1, d1);
    const auto g2 = q2_.input_grads(c2, d2);
    const Matrix<S> d_place = g1.place + g2.place;
    const Matrix<S> d_pick = actor_.kind() == ActorKind::Place ? Matrix<S>() : Matrix<S>(g1.pick_enc + g2.pick_enc);
    const Matrix<S> d_logp = Matrix<S>::Constant(1, n, a * inv_b);
    actor_.backward(ac, d_place, d_pick, d_logp, *grads);
    return loss;
  }

  double actor_step(const Batch<S>& b, const Matrix<S>& noise, Matrix<S>* log_prob_out) {
    auto grads = zero_grads(actor_.blocks());
    const double loss = actor_loss(b, noise, &grads, log_prob_out);
    if (!std::isfinite(loss)) throw NumericalError("actor loss is not finite");
    apply(actor_.mutable_blocks(), grads, actor_opt_);
    return loss;
  }

  /// Temperature loss -log(alpha) * mean(log pi + target entropy); one Adam step on log(alpha).
  double alpha_step(const Matrix<S>& log_prob) {
    const double m = static_cast<double>(log_prob.mean()) + target_entropy_;
    const double loss = -static_cast<double>(log_alpha_[0]) * m;
    if (cfg_.fixed_alpha) return loss;
    Vector<S> g = Vector<S>::Constant(1, static_cast<S>(-m));
    nn::adam_step(log_alpha_, g, alpha_opt_);
    return loss;
  }

  void sync_targets(double tau) {
    sync(q1_target_, q1_, tau);
    sync(q2_target_, q2_, tau);
  }

  /// Full SAC iteration: critics, actor, temperature, then Polyak targets.
  UpdateStats update(const Batch<S>& b) {
    const Eigen::Index n = b.size();
    UpdateStats st;
    const Matrix<S> y = critic_targets(b, nn::standard_normal<S>(actor_.noise_dim(), n, rng_));
    std::tie(st.critic1_loss, st.critic2_loss) = critic_step(b, y, &st.mean_q);
    Matrix<S> log_prob;
    st.actor_loss = actor_step(b, nn::standard_normal<S>(actor_.noise_dim(), n, rng_), &log_prob);
    st.mean_log_prob = static_cast<double>(log_prob.mean());
    st.alpha_loss = alpha_step(log_prob);
    sync_targets(cfg_.tau);
    st.alpha = alpha();
    ++updates_;
    return st;
  }

  void write(BinaryWriter& out) const {
    const auto put_blocks = [&](const std::vector<const Vector<S>*>& blocks) {
      for (const auto* p : blocks) out.write_array(std::span<const S>(p->data(), static_cast<std::size_t>(p->size())));
    };
    const auto put_opt = [&](const std::vector<nn::AdamState<S>>& opts) {
      for (const auto& o : opts) put_adam(out, o);
    };
    put_blocks(actor_.blocks());
    put_blocks(q1_.blocks());
    put_blocks(q2_.blocks());
    put_blocks(q1_target_.blocks());
    put_blocks(q2_target_.blocks());
    put_opt(actor_opt_);
    put_opt(q1_opt_);
    put_opt(q2_opt_);
    put_adam(out, alpha_opt_);
    out.write(static_cast<double>(log_alpha_[0]));
    out.write<std::uint64_t>(updates_);
    out.write_string(rng_state(rng_));
  }

  void read(BinaryReader& in) {
    const auto get_blocks = [&](const std::vector<Vector<S>*>& blocks) {
      for (auto* p : blocks) {
        const auto v = in.read_array<S>();
        if (static_cast<Eigen::Index>(v.size()) != p->size()) throw FormatError("parameter block size mismatch");
        *p = Eigen::Map<const Vector<S>>(v.data(), p->size());
      }
    };
    const auto get_opt = [&](std::vector<nn::AdamState<S>>& opts) {
      for (auto& o : opts) get_adam(in, o);
    };
    get_blocks(actor_.mutable_blocks());
    get_blocks(q1_.mutable_blocks());
    get_blocks(q2_.mutable_blocks());
    get_blocks(q1_target_.mutable_blocks());
    get_blocks(q2_target_.mutable_blocks());
    get_opt(actor_opt_);
    get_opt(q1_opt_);
    get_opt(q2_opt_);
    get_adam(in, alpha_opt_);
    log_alpha_[0] = static_cast<S>(in.read<double>());
    updates_ = in.read<std::uint64_t>();
    restore_rng_state(rng_, in.read_string());
  }

 private:
  static std::vector<nn::AdamState<S>> make_opt(const std::vector<const Vector<S>*>& blocks, double lr) {
    std::vector<nn::AdamState<S>> out;
    for (const auto* b : blocks) out.emplace_back(b->size(), lr);
    return out;
  }

  static void apply(const std::vector<Vector<S>*>& blocks, const Grads<S>& grads, std::vector<nn::AdamState<S>>& opts) {
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      if (blocks[k]->size() == 0) continue;
      nn::adam_step(*blocks[k], grads[k], opts[k]);
    }
  }

  static void sync(Critic<S>& target, const Critic<S>& source, double tau) {
    auto dst = target.mutable_blocks();
    const auto src = source.blocks();
    for (std::size_t k = 0; k < dst.size(); ++k) nn::polyak_update(*dst[k], *src[k], tau);
  }

  static void put_adam(BinaryWriter& out, const nn::AdamState<S>& o) {
    out.write_array(std::span<const S>(o.m.data(), static_cast<std::size_t>(o.m.size())));
    out.write_array(std::span<const S>(o.v.data(), static_cast<std::size_t>(o.v.size())));
    out.write<std::int64_t>(o.step);
  }

  static void get_adam(BinaryReader& in, nn::AdamState<S>& o) {
    const auto m = in.read_array<S>();
    const auto v = in.read_array<S>();
    if (static_cast<Eigen::Index>(m.size()) != o.m.size() || static_cast<Eigen::Index>(v.size()) != o.v.size())
      throw FormatError("optimizer state size mismatch");
    o.m = Eigen::Map<const Vector<S>>(m.data(), o.m.size());
    o.v = Eigen::Map<const Vector<S>>(v.data(), o.v.size());
    o.step = in.read<std::int64_t>();
  }

  SacConfig cfg_;
  Rng rng_;
  Actor<S> actor_;
  Critic<S> q1_, q2_, q1_target_, q2_target_;
  double target_entropy_ = -2.0;
  Vector<S> log_alpha_;
  std::vector<nn::AdamState<S>> actor_opt_, q1_opt_, q2_opt_;
  nn::AdamState<S> alpha_opt_;
  std::uint64_t updates_ = 0;
};

/// Assembles a learner batch from replay indices.
template <class S>
Batch<S> make_batch(const ReplayBuffer& buffer, const std::vector<std::size_t>& indices, const ObsLayout& layout) {
  std::vector<const EncodedObs*> obs, next;
  obs.reserve(indices.size());
  next.reserve(indices.size());
  for (auto i : indices) {
    obs.push_back(&buffer.at(i).obs);
    next.push_back(&buffer.at(i).next_obs);
  }
  Batch<S> b;
  b.obs = obs_matrix<S>(layout, obs);
  b.next_obs = obs_matrix<S>(layout, next);
  const auto n = static_cast<Eigen::Index>(indices.size());
  const auto& first = buffer.at(indices.front());
  b.pick_enc.resize(static_cast<Eigen::Index>(first.pick_enc.size()), n);
  b.next_pick_enc.resize(static_cast<Eigen::Index>(first.next_pick_enc.size()), n);
  b.action.resize(static_cast<Eigen::Index>(first.action.size()), n);
  b.reward.resize(1, n);
  b.done.resize(1, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = buffer.at(indices[static_cast<std::size_t>(j)]);
    if (static_cast<Eigen::Index>(t.pick_enc.size()) != b.pick_enc.rows() || static_cast<Eigen::Index>(t.action.size()) != b.action.rows())
      throw ShapeError("replay transitions have inconsistent widths");
    for (Eigen::Index i = 0; i < b.pick_enc.rows(); ++i) b.pick_enc(i, j) = static_cast<S>(t.pick_enc[static_cast<std::size_t>(i)]);
    if (static_cast<Eigen::Index>(t.next_pick_enc.size()) != b.next_pick_enc.rows())
      throw ShapeError("replay transitions have inconsistent widths");
    for (Eigen::Index i = 0; i < b.next_pick_enc.rows(); ++i)
      b.next_pick_enc(i, j) = static_cast<S>(t.next_pick_enc[static_cast<std::size_t>(i)]);
    for (Eigen::Index i = 0; i < b.action.rows(); ++i) b.action(i, j) = static_cast<S>(t.action[static_cast<std::size_t>(i)]);
    b.reward(0, j) = static_cast<S>(t.reward);
    b.done(0, j) = t.done ? S(1) : S(0);
  }
  return b;
}

}  // namespace pickplace::sac
