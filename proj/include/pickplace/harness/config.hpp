#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pickplace/common/binary_io.hpp"
#include "pickplace/envs/env.hpp"
#include "pickplace/policies/policies.hpp"

namespace pickplace::harness {

struct SacSettings {
  std::vector<int> hidden{256, 256};
  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 5e-3;
  int batch_size = 256;
  double reward_scale = 1.0;
  int min_pool = 2000;
  int replay_capacity = 1000000;
  int updates_per_step = 1;
  double init_log_alpha = 0.0;
  std::optional<double> target_entropy;  // unset: minus the action dimension
  std::optional<double> fixed_alpha;
};

struct ExperimentConfig {
  envs::EnvConfig env;
  policies::PolicyKind policy = policies::PolicyKind::UniformPickLearnedPlace;
  SacSettings sac;
  long long total_env_steps = 150000;
  long long eval_every = 5000;
  int eval_episodes = 10;
  int n_parallel_envs = 1;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string checkpoint;  // required for MVP
  int mvp_samples = 10;
  int mvp_max_candidates = 0;
};

/// Defaults that depend on the environment kind and policy.
inline ExperimentConfig default_experiment(envs::EnvKind kind, policies::PolicyKind policy) {
  ExperimentConfig c;
  c.env = envs::default_config(kind);
  c.policy = policy;
  const bool rope = kind == envs::EnvKind::Rope;
  c.sac.min_pool = rope ? 2000 : 1200;
  c.sac.reward_scale = rope ? 0.01 : 1.0;
  // Shaping for the baselines that choose their own pick point.
  if (policy == policies::PolicyKind::Independent || policy == policies::PolicyKind::Conditional)
    c.env.pick_bonus = rope ? 1.0 : 0.01;
  return c;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

template <class I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline envs::Interval parse_interval(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != 2) throw ConfigError(key + ": expected 'lo,hi'");
  return {parse_double(key, parts[0]), parse_double(key, parts[1])};
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  bool identity;  // part of the experiment identity hash
};

template <class T>
Field number(std::string key, T ExperimentConfig::*member, bool identity = true) {
  return {key,
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member, key](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_floating_point_v<T>) c.*member = parse_double(key, v);
            else c.*member = parse_int<T>(key, v);
          },
          identity};
}

// Accessor-based numeric field for nested members.
template <class T>
Field nested(std::string key, std::function<T&(ExperimentConfig&)> ref, bool identity = true) {
  return {key,
          [ref](const ExperimentConfig& c) {
            const T& v = ref(const_cast<ExperimentConfig&>(c));
            if constexpr (std::is_same_v<T, bool>) return std::string(v ? "true" : "false");
            else if constexpr (std::is_floating_point_v<T>) return fmt_double(v);
            else return std::to_string(v);
          },
          [ref, key](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, bool>) ref(c) = parse_bool(key, v);
            else if constexpr (std::is_floating_point_v<T>) ref(c) = parse_double(key, v);
            else ref(c) = parse_int<T>(key, v);
          },
          identity};
}

inline Field interval(std::string key, std::function<envs::Interval&(ExperimentConfig&)> ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            const auto& i = ref(const_cast<ExperimentConfig&>(c));
            return fmt_double(i.lo) + "," + fmt_double(i.hi);
          },
          [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_interval(key, v); }, true};
}

inline Field optional_number(std::string key, std::function<std::optional<double>&(ExperimentConfig&)> ref, const char* unset) {
  return {key,
          [ref, unset](const ExperimentConfig& c) {
            const auto& o = ref(const_cast<ExperimentConfig&>(c));
            return o ? fmt_double(*o) : std::string(unset);
          },
          [ref, key, unset](ExperimentConfig& c, const std::string& v) {
            if (v == unset) ref(c).reset();
            else ref(c) = parse_double(key, v);
          },
          true};
}

inline Field rgb(std::string key, std::function<render::Rgb&(ExperimentConfig&)> ref) {
  return {key,
          [ref](const ExperimentConfig& c) {
            const auto& x = ref(const_cast<ExperimentConfig&>(c));
            return fmt_double(x[0]) + "," + fmt_double(x[1]) + "," + fmt_double(x[2]);
          },
          [ref, key](ExperimentConfig& c, const std::string& v) {
            const auto parts = split(v, ',');
            if (parts.size() != 3) throw ConfigError(key + ": expected 'r,g,b'");
            for (std::size_t i = 0; i < 3; ++i) ref(c)[i] = parse_double(key, parts[i]);
          },
          true};
}

inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"env.kind", [](const C& c) { return envs::to_string(c.env.kind); },
                 [](C& c, const std::string& v) { c.env.kind = envs::parse_env_kind(v); }, true});
    f.push_back({"env.obs_mode", [](const C& c) { return envs::to_string(c.env.obs_mode); },
                 [](C& c, const std::string& v) { c.env.obs_mode = envs::parse_obs_mode(v); }, true});
    f.push_back(nested<int>("env.horizon", [](C& c) -> int& { return c.env.horizon; }));
    f.push_back(nested<int>("env.init_scramble_steps", [](C& c) -> int& { return c.env.init_scramble_steps; }));
    f.push_back(nested<double>("env.max_place_radius", [](C& c) -> double& { return c.env.max_place_radius; }));
    f.push_back(nested<double>("env.pick_bonus", [](C& c) -> double& { return c.env.pick_bonus; }));
    f.push_back(nested<bool>("env.dr.enabled", [](C& c) -> bool& { return c.env.dr.enabled; }));
    f.push_back(interval("env.dr.mass_scale", [](C& c) -> envs::Interval& { return c.env.dr.mass_scale; }));
    f.push_back(interval("env.dr.friction", [](C& c) -> envs::Interval& { return c.env.dr.friction; }));
    f.push_back(interval("env.dr.color_jitter", [](C& c) -> envs::Interval& { return c.env.dr.color_jitter; }));
    f.push_back(interval("env.dr.light_gain", [](C& c) -> envs::Interval& { return c.env.dr.light_gain; }));
    f.push_back(rgb("env.style.object_color", [](C& c) -> render::Rgb& { return c.env.style.object_color; }));
    f.push_back(rgb("env.style.table_color", [](C& c) -> render::Rgb& { return c.env.style.table_color; }));
    f.push_back(nested<int>("physics.substeps_per_action", [](C& c) -> int& { return c.env.physics.substeps_per_action; }));
    f.push_back(nested<int>("physics.solver_iterations", [](C& c) -> int& { return c.env.physics.solver_iterations; }));
    f.push_back(nested<double>("physics.dt", [](C& c) -> double& { return c.env.physics.dt; }));
    f.push_back(nested<double>("physics.gravity", [](C& c) -> double& { return c.env.physics.gravity; }));
    f.push_back(nested<double>("physics.grasp_height", [](C& c) -> double& { return c.env.physics.grasp_height; }));
    f.push_back(nested<int>("physics.lift_steps", [](C& c) -> int& { return c.env.physics.lift_steps; }));
    f.push_back(nested<int>("physics.hold_steps", [](C& c) -> int& { return c.env.physics.hold_steps; }));
    f.push_back(nested<int>("physics.release_settle_steps", [](C& c) -> int& { return c.env.physics.release_settle_steps; }));
    f.push_back(nested<int>("physics.stabilization_sweeps", [](C& c) -> int& { return c.env.physics.stabilization_sweeps; }));
    f.push_back({"policy", [](const C& c) { return policies::to_string(c.policy); },
                 [](C& c, const std::string& v) { c.policy = policies::parse_policy_kind(v); }, true});
    f.push_back({"sac.hidden",
                 [](const C& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.sac.hidden.size(); ++i) s += (i ? "," : "") + std::to_string(c.sac.hidden[i]);
                   return s;
                 },
                 [](C& c, const std::string& v) {
                   c.sac.hidden.clear();
                   for (const auto& p : split(v, ',')) c.sac.hidden.push_back(parse_int<int>("sac.hidden", p));
                 },
                 true});
    f.push_back(nested<double>("sac.lr", [](C& c) -> double& { return c.sac.lr; }));
    f.push_back(nested<double>("sac.gamma", [](C& c) -> double& { return c.sac.gamma; }));
    f.push_back(nested<double>("sac.tau", [](C& c) -> double& { return c.sac.tau; }));
    f.push_back(nested<int>("sac.batch_size", [](C& c) -> int& { return c.sac.batch_size; }));
    f.push_back(nested<double>("sac.reward_scale", [](C& c) -> double& { return c.sac.reward_scale; }));
    f.push_back(nested<int>("sac.min_pool", [](C& c) -> int& { return c.sac.min_pool; }));
    f.push_back(nested<int>("sac.replay_capacity", [](C& c) -> int& { return c.sac.replay_capacity; }));
    f.push_back(nested<int>("sac.updates_per_step", [](C& c) -> int& { return c.sac.updates_per_step; }));
    f.push_back(nested<double>("sac.init_log_alpha", [](C& c) -> double& { return c.sac.init_log_alpha; }));
    f.push_back(optional_number("sac.target_entropy", [](C& c) -> std::optional<double>& { return c.sac.target_entropy; }, "auto"));
    f.push_back(optional_number("sac.fixed_alpha", [](C& c) -> std::optional<double>& { return c.sac.fixed_alpha; }, "none"));
    f.push_back(number("train.total_env_steps", &C::total_env_steps));
    f.push_back(number("train.eval_every", &C::eval_every));
    f.push_back(number("train.eval_episodes", &C::eval_episodes));
    f.push_back(number("train.n_parallel_envs", &C::n_parallel_envs));
    f.push_back(number("seed", &C::seed));
    f.push_back(number("mvp.samples", &C::mvp_samples));
    f.push_back(number("mvp.max_candidates", &C::mvp_max_candidates));
    f.push_back({"output_dir", [](const C& c) { return c.output_dir; }, [](C& c, const std::string& v) { c.output_dir = v; }, false});
    f.push_back({"checkpoint", [](const C& c) { return c.checkpoint; }, [](C& c, const std::string& v) { c.checkpoint = v; }, false});
    return f;
  }();
  return all;
}

inline const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::fields()) out.push_back(f.key);
  return out;
}

inline std::string get_value(const ExperimentConfig& c, const std::string& key) { return detail::field(key).get(c); }
inline void set_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  detail::field(key).set(c, detail::trim(value));
}

inline void validate(const ExperimentConfig& c) {
  envs::validate(c.env);
  physics::validate(c.env.physics);
  if (c.total_env_steps < 0) throw ConfigError("train.total_env_steps must be >= 0");
  if (c.eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  if (c.eval_episodes < 1) throw ConfigError("train.eval_episodes must be >= 1");
  if (c.n_parallel_envs < 1) throw ConfigError("train.n_parallel_envs must be >= 1");
  if (c.sac.hidden.empty()) throw ConfigError("sac.hidden needs at least one layer");
  for (int h : c.sac.hidden)
    if (h < 1) throw ConfigError("sac.hidden widths must be positive");
  if (!(c.sac.lr > 0.0)) throw ConfigError("sac.lr must be positive");
  if (!(c.sac.gamma >= 0.0 && c.sac.gamma <= 1.0)) throw ConfigError("sac.gamma must lie in [0, 1]");
  if (!(c.sac.tau >= 0.0 && c.sac.tau <= 1.0)) throw ConfigError("sac.tau must lie in [0, 1]");
  if (c.sac.batch_size < 1 || c.sac.min_pool < 1 || c.sac.replay_capacity < 1 || c.sac.updates_per_step < 0)
    throw ConfigError("sac batch, pool, capacity and update counts must be positive");
  if (!(c.sac.reward_scale > 0.0)) throw ConfigError("sac.reward_scale must be positive");
  if (c.sac.fixed_alpha && !(*c.sac.fixed_alpha >= 0.0)) throw ConfigError("sac.fixed_alpha must be non-negative");
  if (c.mvp_samples < 1 || c.mvp_max_candidates < 0) throw ConfigError("mvp settings out of range");
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

/// Parses `key = value` lines over `base`. Blank lines and `#` comments are skipped; unknown keys are errors.
inline ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    set_value(base, detail::trim(body.substr(0, eq)), body.substr(eq + 1));
  }
  return base;
}

/// Reads the env kind and policy first (they pick the defaults), then applies every line.
inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig probe = parse_config_text(text, ExperimentConfig{});
  return parse_config_text(text, default_experiment(probe.env.kind, probe.policy));
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline ExperimentConfig load_config_file(const std::string& path) { return parse_config_text(read_text_file(path)); }

/// Canonical text: every key in schema order. `identity_only` drops paths.
inline std::string to_config_text(const ExperimentConfig& c, bool identity_only = false) {
  std::string out;
  for (const auto& f : detail::fields()) {
    if (identity_only && !f.identity) continue;
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

/// Hash of everything that defines the experiment (paths excluded).
inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(to_config_text(c, true)); }

/// Hash of the settings a checkpoint must agree with to be evaluated: environment, observation and network shape.
/// The pick bonus only shapes training rewards and is left out.
inline std::uint64_t compat_hash(const ExperimentConfig& c) {
  std::string s;
  for (const auto& key : config_keys())
    if ((key.rfind("env.", 0) == 0 || key.rfind("physics.", 0) == 0 || key == "sac.hidden") && key != "env.pick_bonus")
      s += key + "=" + get_value(c, key) + ";";
  s += "learner=" + (c.policy == policies::PolicyKind::Random ? std::string("none") : std::to_string(static_cast<int>(policies::actor_kind_for(c.policy))));
  return fnv1a64(s);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace pickplace::harness
