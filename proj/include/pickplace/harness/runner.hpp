#pragma once

#include <chrono>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <thread>

#include "pickplace/harness/checkpoint.hpp"
#include "pickplace/harness/config.hpp"
#include "pickplace/harness/metrics.hpp"
#include "pickplace/harness/trace.hpp"
#include "pickplace/policies/policies.hpp"

namespace pickplace::harness {

using Learner = sac::SacLearner<float>;

inline sac::SacConfig sac_config_for(const ExperimentConfig& cfg, const envs::PickPlaceEnv& env) {
  sac::SacConfig s;
  s.actor_kind = policies::actor_kind_for(cfg.policy);
  s.obs = policies::layout_for(cfg.env, env.body().size());
  s.pick_dim = s.actor_kind == sac::ActorKind::Place ? policies::PickEncoder(env).dim() : 0;
  s.hidden = cfg.sac.hidden;
  s.actor_lr = s.critic_lr = s.alpha_lr = cfg.sac.lr;
  s.gamma = cfg.sac.gamma;
  s.tau = cfg.sac.tau;
  s.batch_size = cfg.sac.batch_size;
  s.reward_scale = cfg.sac.reward_scale;
  s.target_entropy = cfg.sac.target_entropy;
  s.init_log_alpha = cfg.sac.init_log_alpha;
  s.fixed_alpha = cfg.sac.fixed_alpha;
  return s;
}

inline std::unique_ptr<Learner> make_learner(const ExperimentConfig& cfg, const envs::PickPlaceEnv& env) {
  if (cfg.policy == policies::PolicyKind::Random) return nullptr;
  return std::make_unique<Learner>(sac_config_for(cfg, env), cfg.seed);
}

inline policies::AgentOptions agent_options(const ExperimentConfig& cfg) {
  return {cfg.mvp_samples, static_cast<std::size_t>(cfg.mvp_max_candidates)};
}

/// Seeds of the evaluation episodes; shared by every policy evaluated under the same seed (paired comparisons).
inline std::uint64_t eval_episode_seed(std::uint64_t seed, int episode) {
  return mix_seed(mix_seed(seed, 0x6576616cULL), static_cast<std::uint64_t>(episode));
}

struct EvalStats {
  std::vector<double> returns;
  std::vector<double> coverages;  // at the end of each episode
  double mean_return = 0.0, std_return = 0.0;
  double mean_coverage = 0.0, std_coverage = 0.0;
};

inline std::pair<double, double> mean_and_sample_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Noise-off rollouts without the pick bonus. Episode i starts from eval_episode_seed(seed, i).
inline EvalStats evaluate(const ExperimentConfig& cfg, const Learner* learner, policies::PolicyKind kind, int episodes,
                          std::uint64_t seed, std::vector<Trace>* traces = nullptr) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  ExperimentConfig eval_cfg = cfg;
  eval_cfg.env.pick_bonus = 0.0;
  eval_cfg.policy = kind;
  envs::PickPlaceEnv env(eval_cfg.env);
  const policies::Agent agent(kind, env, learner, agent_options(cfg));
  const std::string cfg_text = traces ? to_config_text(eval_cfg) : std::string();
  EvalStats st;
  for (int ep = 0; ep < episodes; ++ep) {
    const auto episode_seed = eval_episode_seed(seed, ep);
    env.reset(episode_seed);
    Rng rng(mix_seed(episode_seed, 3));
    Trace trace{cfg_text, episode_seed, {}};
    double ret = 0.0;
    while (!env.done()) {
      const auto d = agent.act(env, rng, true);
      const auto r = env.step(d.action);
      ret += r.reward;
      if (traces) trace.steps.push_back({d.action.pick, d.action.place, r.reward, r.info.coverage, r.info.pick_on_object});
    }
    st.returns.push_back(ret);
    st.coverages.push_back(env.coverage());
    if (traces) traces->push_back(std::move(trace));
  }
  std::tie(st.mean_return, st.std_return) = mean_and_sample_std(st.returns);
  std::tie(st.mean_coverage, st.std_coverage) = mean_and_sample_std(st.coverages);
  return st;
}

struct TrainOptions {
  bool write_files = true;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::uint64_t env_steps = 0;
  std::uint64_t transitions = 0;
  std::uint64_t gradient_updates = 0;
  std::uint64_t episodes = 0;
  std::string checkpoint_path;
  Checkpoint checkpoint;
};

namespace detail {

struct Sampler {
  std::unique_ptr<envs::PickPlaceEnv> env;
  Rng rng;
  std::uint64_t episode = 0;
  sac::EncodedObs obs;
  // Output of the current round.
  sac::Transition transition;
  bool finished_episode = false;
};

inline std::uint64_t train_episode_seed(std::uint64_t seed, std::size_t sampler, std::uint64_t episode) {
  return mix_seed(mix_seed(seed, 0x747261696eULL + sampler), episode);
}

}  // namespace detail

/// Serializes a learner into checkpoint form.
inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, const Learner* learner, std::uint64_t env_steps, std::uint64_t episodes,
                                  std::uint64_t updates, std::vector<std::string> sampler_rng) {
  Checkpoint ck;
  ck.config_text = to_config_text(cfg);
  ck.config_hash = config_hash(cfg);
  ck.compat_hash = compat_hash(cfg);
  ck.env_steps = env_steps;
  ck.episodes = episodes;
  ck.gradient_updates = updates;
  ck.sampler_rng = std::move(sampler_rng);
  if (learner) {
    BinaryWriter w;
    learner->write(w);
    ck.learner = w.take();
  }
  return ck;
}

/// Rebuilds the learner stored in a checkpoint.
inline std::pair<ExperimentConfig, std::unique_ptr<Learner>> restore(const Checkpoint& ck) {
  auto cfg = parse_config_text(ck.config_text);
  if (config_hash(cfg) != ck.config_hash || compat_hash(cfg) != ck.compat_hash)
    throw FormatError("checkpoint config does not match its recorded hash");
  const envs::PickPlaceEnv env(cfg.env);
  auto learner = make_learner(cfg, env);
  if (learner) {
    if (ck.learner.empty()) throw FormatError("checkpoint has no learner state");
    BinaryReader r(ck.learner);
    learner->read(r);
    if (r.remaining() != 0) throw FormatError("trailing bytes in learner state");
  }
  return {std::move(cfg), std::move(learner)};
}

/// Off-policy training with synchronous samplers. With several samplers each round steps all of them on their own
/// threads against the same policy snapshot, then adds their transitions in sampler order, so runs stay reproducible.
inline TrainResult train(const ExperimentConfig& cfg, const TrainOptions& opt = {}) {
  validate(cfg);
  if (cfg.policy == policies::PolicyKind::MVP)
    throw ConfigError("mvp is an evaluation-time picker: train uniform_pick and evaluate its checkpoint with --policy mvp");
  const auto t0 = std::chrono::steady_clock::now();
  namespace fs = std::filesystem;
  std::unique_ptr<MetricsWriter> metrics;
  std::ofstream timing;
  TrainResult result;
  if (opt.write_files) {
    fs::create_directories(cfg.output_dir);
    std::ofstream(cfg.output_dir + "/config.txt") << to_config_text(cfg);
    metrics = std::make_unique<MetricsWriter>(cfg.output_dir + "/metrics.csv");
    timing.open(cfg.output_dir + "/timing.csv", std::ios::trunc);
    timing << "env_steps,wall_seconds\n";
    result.checkpoint_path = cfg.output_dir + "/checkpoint.ppck";
  }

  const auto n = static_cast<std::size_t>(cfg.n_parallel_envs);
  std::vector<detail::Sampler> samplers(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = samplers[i];
    s.env = std::make_unique<envs::PickPlaceEnv>(cfg.env);
    s.rng = Rng(mix_seed(cfg.seed, 100 + i));
    s.obs = policies::encode_observation(s.env->reset(detail::train_episode_seed(cfg.seed, i, 0)));
  }
  auto learner = make_learner(cfg, *samplers[0].env);
  const policies::Agent agent(cfg.policy, *samplers[0].env, learner.get(), agent_options(cfg));
  const bool place_kind = learner && learner->actor().kind() == sac::ActorKind::Place;
  sac::ReplayBuffer buffer(static_cast<std::size_t>(cfg.sac.replay_capacity));
  const auto layout = agent.layout();

  std::uint64_t steps = 0, updates = 0, episodes = 0;
  sac::UpdateStats sum;
  long long since_row = 0;
  const auto sampler_states = [&] {
    std::vector<std::string> out;
    for (const auto& s : samplers) out.push_back(rng_state(s.rng));
    return out;
  };
  const auto emit = [&] {
    const auto ev = evaluate(cfg, learner.get(), cfg.policy, cfg.eval_episodes, cfg.seed);
    MetricsRow row;
    row.env_steps = static_cast<long long>(steps);
    row.episodes = static_cast<long long>(episodes);
    row.gradient_updates = static_cast<long long>(updates);
    row.eval_return_mean = ev.mean_return;
    row.eval_return_std = ev.std_return;
    row.eval_coverage_mean = ev.mean_coverage;
    row.eval_coverage_std = ev.std_coverage;
    if (since_row > 0) {
      const double k = static_cast<double>(since_row);
      row.critic1_loss = sum.critic1_loss / k;
      row.critic2_loss = sum.critic2_loss / k;
      row.actor_loss = sum.actor_loss / k;
      row.alpha_loss = sum.alpha_loss / k;
    }
    row.alpha = learner ? learner->alpha() : 0.0;
    row.config_hash = config_hash(cfg);
    sum = {};
    since_row = 0;
    result.rows.push_back(row);
    result.checkpoint = make_checkpoint(cfg, learner.get(), steps, episodes, updates, sampler_states());
    if (opt.write_files) {
      metrics->append(row);
      save_checkpoint(result.checkpoint_path, result.checkpoint);
      timing << steps << "," << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << "\n";
      timing.flush();
    }
    if (opt.log)
      *opt.log << "[" << policies::to_string(cfg.policy) << " seed " << cfg.seed << "] steps " << steps << " updates " << updates
               << " eval return " << row.eval_return_mean << " coverage " << row.eval_coverage_mean << " alpha " << row.alpha << std::endl;
  };

  emit();
  const auto total = static_cast<std::uint64_t>(cfg.total_env_steps);
  const auto every = static_cast<std::uint64_t>(cfg.eval_every);
  while (steps < total) {
    const std::size_t k = static_cast<std::size_t>(std::min<std::uint64_t>(n, total - steps));
    // Acting and simulation only read the learner, so samplers can run concurrently.
    const auto run = [&](std::size_t i) {
      auto& s = samplers[i];
      const auto d = agent.act(*s.env, s.rng, false);
      const auto r = s.env->step(d.action);
      auto& t = s.transition;
      t.obs = std::move(s.obs);
      t.pick_enc = d.pick_enc;
      t.action = d.raw;
      t.reward = static_cast<float>(r.reward);
      t.next_obs = policies::encode_observation(r.observation);
      t.done = false;  // the horizon is a time limit, not a terminal state
      t.next_pick_enc = place_kind ? agent.sample_pick_enc(*s.env, s.rng) : std::vector<float>{};
      s.finished_episode = r.done;
      if (r.done) {
        ++s.episode;
        s.obs = policies::encode_observation(s.env->reset(detail::train_episode_seed(cfg.seed, i, s.episode)));
      } else {
        s.obs = t.next_obs;
      }
    };
    if (k == 1) {
      run(0);
    } else {
      std::vector<std::exception_ptr> errors(k);
      std::vector<std::thread> threads;
      for (std::size_t i = 0; i < k; ++i)
        threads.emplace_back([&, i] {
          try {
            run(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        });
      for (auto& th : threads) th.join();
      for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (learner) buffer.add(std::move(samplers[i].transition));
      ++result.transitions;
      if (samplers[i].finished_episode) ++episodes;
    }
    const auto before = steps;
    steps += k;
    if (learner && buffer.size() >= static_cast<std::size_t>(cfg.sac.min_pool)) {
      for (std::size_t u = 0; u < k * static_cast<std::size_t>(cfg.sac.updates_per_step); ++u) {
        const auto idx = buffer.sample_indices(static_cast<std::size_t>(cfg.sac.batch_size), learner->rng());
        const auto st = learner->update(sac::make_batch<float>(buffer, idx, layout));
        if (!std::isfinite(st.critic1_loss) || !std::isfinite(st.actor_loss) || !std::isfinite(st.alpha))
          throw NumericalError("non-finite training statistics at update " + std::to_string(updates));
        sum.critic1_loss += st.critic1_loss;
        sum.critic2_loss += st.critic2_loss;
        sum.actor_loss += st.actor_loss;
        sum.alpha_loss += st.alpha_loss;
        ++since_row;
        ++updates;
      }
    }
    if (steps / every != before / every) emit();
  }
  if (result.rows.back().env_steps != static_cast<long long>(steps)) emit();
  result.env_steps = steps;
  result.gradient_updates = updates;
  result.episodes = episodes;
  return result;
}

/// Evaluates a stored learner under `kind`. When `expected` is given its environment and network settings must
/// match the checkpoint. Random ignores the learner; the other kinds need the factorization the learner was trained with.
inline EvalStats evaluate_checkpoint(const std::string& path, policies::PolicyKind kind, int episodes, std::uint64_t seed,
                                     const ExperimentConfig* expected = nullptr, std::vector<Trace>* traces = nullptr) {
  const auto ck = load_checkpoint(path);
  auto [cfg, learner] = restore(ck);
  if (kind != policies::PolicyKind::Random) {
    if (!learner || policies::actor_kind_for(kind) != learner->actor().kind())
      throw ConfigError("checkpoint '" + path + "' holds a " + policies::to_string(cfg.policy) + " learner, which cannot act as " +
                        policies::to_string(kind));
  }
  if (expected) {
    ExperimentConfig probe = *expected;
    probe.policy = cfg.policy;  // the factorization was checked above
    if (compat_hash(probe) != ck.compat_hash)
      throw ConfigError("checkpoint '" + path + "' was trained with different environment or network settings");
  }
  if (expected) {
    cfg.mvp_samples = expected->mvp_samples;
    cfg.mvp_max_candidates = expected->mvp_max_candidates;
  }
  return evaluate(cfg, kind == policies::PolicyKind::Random ? nullptr : learner.get(), kind, episodes, seed, traces);
}

}  // namespace pickplace::harness
