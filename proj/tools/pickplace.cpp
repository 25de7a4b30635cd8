// pickplace: train, evaluate and inspect pick-and-place SAC agents.
//
// Exit codes: 0 success, 1 other failure, 2 configuration or usage error, 3 numerical abort.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pickplace/harness/config.hpp"
#include "pickplace/harness/metrics.hpp"
#include "pickplace/harness/runner.hpp"
#include "pickplace/harness/trace.hpp"
#include "pickplace/render/png.hpp"

namespace fs = std::filesystem;
using namespace pickplace;
using namespace pickplace::harness;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

// Flags that mirror config keys. Each is appended as a `key = value` line after the config file.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> mirrored;  // (key, value), only when the flag was given
  std::vector<std::string> sets;

  void add_to(CLI::App* app) {
    app->add_option("-c,--config", config_path, "config file of `key = value` lines")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override any config key: --set sac.gamma=0.95 (repeatable)");
  }
};

struct Mirror {
  const char* flag;
  const char* key;
  const char* help;
};

const std::vector<Mirror>& mirrors() {
  static const std::vector<Mirror> m = {
      {"--env", "env.kind", "rope | cloth | cloth_simplified"},
      {"--obs-mode", "env.obs_mode", "state | image"},
      {"--horizon", "env.horizon", "actions per episode"},
      {"--pick-bonus", "env.pick_bonus", "training reward bonus for picking the object"},
      {"--policy", "policy", "random | independent | conditional | uniform_pick | mvp"},
      {"--hidden", "sac.hidden", "hidden width"},
      {"--lr", "sac.lr", "learning rate of actor, critics and temperature"},
      {"--gamma", "sac.gamma", "discount"},
      {"--tau", "sac.tau", "Polyak coefficient"},
      {"--batch-size", "sac.batch_size", "minibatch size"},
      {"--reward-scale", "sac.reward_scale", "reward multiplier inside the critic target"},
      {"--min-pool", "sac.min_pool", "transitions collected before the first update"},
      {"--replay-capacity", "sac.replay_capacity", "replay buffer capacity"},
      {"--steps", "train.total_env_steps", "environment steps"},
      {"--eval-every", "train.eval_every", "env steps between evaluations"},
      {"--eval-episodes", "train.eval_episodes", "episodes per evaluation"},
      {"--n-envs", "train.n_parallel_envs", "synchronous samplers"},
      {"--seed", "seed", "experiment seed"},
      {"--mvp-samples", "mvp.samples", "place samples per candidate"},
      {"--mvp-max-candidates", "mvp.max_candidates", "candidate subsample size, 0 for all"},
      {"-o,--output-dir", "output_dir", "run directory (also PICKPLACE_OUTPUT_DIR)"},
  };
  return m;
}

// Precedence: defaults < checkpoint config < config file < PICKPLACE_OUTPUT_DIR < mirrored flags < --set.
// `base_text` (a checkpoint's own config) goes below the config file.
ExperimentConfig build_config(const ConfigFlags& f, const std::vector<std::pair<std::string, std::string*>>& given,
                              const std::string& base_text = {}) {
  std::string text = base_text;
  if (!f.config_path.empty()) text += read_text_file(f.config_path) + "\n";
  if (const char* dir = std::getenv("PICKPLACE_OUTPUT_DIR"); dir && *dir) text += std::string("output_dir = ") + dir + "\n";
  for (const auto& [key, value] : given) text += key + " = " + *value + "\n";
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    text += s.substr(0, eq) + " = " + s.substr(eq + 1) + "\n";
  }
  auto cfg = parse_config_text(text);
  validate(cfg);
  return cfg;
}

// Registers the mirrored flags and returns storage that build_config reads for the ones actually given.
struct MirrorStorage {
  std::vector<std::string> values;
  std::vector<CLI::Option*> options;

  void add_to(CLI::App* app) {
    values.resize(mirrors().size());
    for (std::size_t i = 0; i < mirrors().size(); ++i)
      options.push_back(app->add_option(mirrors()[i].flag, values[i], std::string(mirrors()[i].help) + " [" + mirrors()[i].key + "]"));
  }
  std::vector<std::pair<std::string, std::string*>> given() {
    std::vector<std::pair<std::string, std::string*>> out;
    for (std::size_t i = 0; i < options.size(); ++i)
      if (options[i]->count() > 0) out.emplace_back(mirrors()[i].key, &values[i]);
    return out;
  }
};

void print_stats(const std::string& label, const EvalStats& st) {
  std::printf("%s: return %.6f +- %.6f, coverage %.6f +- %.6f over %zu episodes\n", label.c_str(), st.mean_return, st.std_return,
              st.mean_coverage, st.std_coverage, st.returns.size());
}

void write_eval_csv(const std::string& path, const EvalStats& st, std::uint64_t seed) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << "episode,episode_seed,return,coverage\n";
  for (std::size_t i = 0; i < st.returns.size(); ++i)
    f << i << "," << eval_episode_seed(seed, static_cast<int>(i)) << "," << detail::fmt_double(st.returns[i]) << ","
      << detail::fmt_double(st.coverages[i]) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pick-and-place reinforcement learning"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "run SAC training and write config.txt, metrics.csv, timing.csv, checkpoint.ppck");
  ConfigFlags train_flags;
  MirrorStorage train_mirror;
  bool quiet = false;
  train_flags.add_to(train_cmd);
  train_mirror.add_to(train_cmd);
  train_cmd->add_flag("-q,--quiet", quiet, "no progress lines");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (or the random policy) with noise off and no pick bonus");
  ConfigFlags eval_flags;
  MirrorStorage eval_mirror;
  std::string eval_checkpoint, eval_traces, eval_csv;
  int eval_episodes = -1;
  eval_flags.add_to(eval_cmd);
  eval_mirror.add_to(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate (or `checkpoint` in the config)");
  eval_cmd->add_option("-n,--episodes", eval_episodes, "episodes (default train.eval_episodes)");
  eval_cmd->add_option("--trace-dir", eval_traces, "write one replayable trace per episode here");
  eval_cmd->add_option("--csv", eval_csv, "write per-episode returns and coverage");

  // export-curves
  auto* curves_cmd = app.add_subcommand("export-curves", "merge metrics.csv files into one curve table with mean and std");
  std::vector<std::string> curve_files;
  std::string curve_column = "eval_return_mean", curve_out;
  curves_cmd->add_option("files", curve_files, "metrics.csv files")->required()->check(CLI::ExistingFile);
  curves_cmd->add_option("--column", curve_column, "metric column to export");
  curves_cmd->add_option("-o,--out", curve_out, "output CSV (default stdout)");

  // render-heatmap
  auto* heat_cmd = app.add_subcommand("render-heatmap", "paint V(o, pick) over every pick candidate as a PNG");
  std::string heat_checkpoint, heat_out = "heatmap.png";
  std::uint64_t heat_seed = 0;
  int heat_episode = 0, heat_steps = 0, heat_scale = 4, heat_samples = -1;
  heat_cmd->add_option("--checkpoint", heat_checkpoint, "place-conditioned checkpoint (uniform_pick training)")->required();
  heat_cmd->add_option("--seed", heat_seed, "evaluation seed");
  heat_cmd->add_option("--episode", heat_episode, "evaluation episode index; the state is its reset state");
  heat_cmd->add_option("--advance", heat_steps, "MVP actions to take before rendering");
  heat_cmd->add_option("--mvp-samples", heat_samples, "place samples per candidate (default from the checkpoint)");
  heat_cmd->add_option("--scale", heat_scale, "integer upscale factor")->check(CLI::Range(1, 64));
  heat_cmd->add_option("-o,--out", heat_out, "output PNG");

  // replay
  auto* replay_cmd = app.add_subcommand("replay", "re-simulate a trace and compare rewards and coverage");
  std::string replay_trace_path, replay_frames;
  int replay_scale = 4;
  replay_cmd->add_option("trace", replay_trace_path, "trace file written by eval --trace-dir")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--frames", replay_frames, "write frame_NNNN.png per state into this directory");
  replay_cmd->add_option("--scale", replay_scale, "integer upscale factor")->check(CLI::Range(1, 64));

  // print-config
  auto* print_cmd = app.add_subcommand("print-config", "print the resolved config (defaults, file, environment, flags)");
  ConfigFlags print_flags;
  MirrorStorage print_mirror;
  print_flags.add_to(print_cmd);
  print_mirror.add_to(print_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train_cmd) {
      const auto cfg = build_config(train_flags, train_mirror.given());
      TrainOptions opt;
      opt.log = quiet ? nullptr : &std::cout;
      const auto res = train(cfg, opt);
      std::printf("trained %llu env steps, %llu updates, %llu episodes; checkpoint %s\n",
                  static_cast<unsigned long long>(res.env_steps), static_cast<unsigned long long>(res.gradient_updates),
                  static_cast<unsigned long long>(res.episodes), res.checkpoint_path.c_str());
    } else if (*eval_cmd) {
      auto cfg = build_config(eval_flags, eval_mirror.given());
      const std::string ck = eval_checkpoint.empty() ? cfg.checkpoint : eval_checkpoint;
      // A checkpoint supplies the defaults; overrides of its environment or network keys fail the compat check.
      if (!ck.empty()) cfg = build_config(eval_flags, eval_mirror.given(), load_checkpoint(ck).config_text + "\n");
      if (eval_cmd->count("--episodes") && eval_episodes < 1) throw ConfigError("--episodes must be >= 1");
      const int episodes = eval_cmd->count("--episodes") ? eval_episodes : cfg.eval_episodes;
      std::vector<Trace> traces;
      auto* tr = eval_traces.empty() ? nullptr : &traces;
      EvalStats st;
      if (ck.empty()) {
        if (cfg.policy != policies::PolicyKind::Random) throw ConfigError(policies::to_string(cfg.policy) + " evaluation needs --checkpoint");
        st = evaluate(cfg, nullptr, cfg.policy, episodes, cfg.seed, tr);
      } else {
        st = evaluate_checkpoint(ck, cfg.policy, episodes, cfg.seed, &cfg, tr);
      }
      print_stats(policies::to_string(cfg.policy), st);
      if (!eval_csv.empty()) write_eval_csv(eval_csv, st, cfg.seed);
      if (tr) {
        fs::create_directories(eval_traces);
        for (std::size_t i = 0; i < traces.size(); ++i) {
          char name[40];
          std::snprintf(name, sizeof name, "/episode_%04zu.trace", i);
          write_trace(eval_traces + name, traces[i]);
        }
      }
    } else if (*curves_cmd) {
      const auto table = export_curves(curve_files, curve_column);
      if (curve_out.empty()) {
        std::cout << table;
      } else {
        std::ofstream f(curve_out, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write '" + curve_out + "'");
        f << table;
      }
    } else if (*heat_cmd) {
      auto [cfg, learner] = restore(load_checkpoint(heat_checkpoint));
      if (!learner || learner->actor().kind() != sac::ActorKind::Place)
        throw ConfigError("render-heatmap needs a place-conditioned (uniform_pick) checkpoint");
      if (heat_samples > 0) cfg.mvp_samples = heat_samples;
      cfg.env.pick_bonus = 0.0;
      envs::PickPlaceEnv env(cfg.env);
      const auto episode_seed = eval_episode_seed(heat_seed, heat_episode);
      env.reset(episode_seed);
      const policies::Agent agent(policies::PolicyKind::MVP, env, learner.get(), agent_options(cfg));
      Rng rng(mix_seed(episode_seed, 3));
      for (int i = 0; i < heat_steps && !env.done(); ++i) env.step(agent.act(env, rng, true).action);
      const auto values = agent.candidate_values(env, rng);
      render::write_png(heat_out, render::upscale(policies::value_heatmap(env, env.pick_candidates(), values), heat_scale));
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      std::printf("wrote %s (%zu candidates, V in [%.6f, %.6f])\n", heat_out.c_str(), values.size(), *lo, *hi);
    } else if (*replay_cmd) {
      const auto trace = read_trace(replay_trace_path);
      if (!replay_frames.empty()) fs::create_directories(replay_frames);
      const auto r = replay_trace(trace, replay_frames, replay_scale);
      std::printf("replayed %zu steps: max |reward error| %.3g, max |coverage error| %.3g%s\n", r.steps, r.max_reward_error,
                  r.max_coverage_error, r.exact() ? " (exact)" : "");
      if (!r.exact()) return kExitFailure;
    } else if (*print_cmd) {
      std::cout << to_config_text(build_config(print_flags, print_mirror.given()));
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const SimulationInstability& e) {
    std::cerr << "numerical abort (simulation): " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return 0;
}
