#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "pickplace/common/error.hpp"
#include "pickplace/common/random.hpp"
#include "pickplace/envs/rewards.hpp"
#include "pickplace/physics/body.hpp"
#include "pickplace/physics/solver.hpp"
#include "pickplace/render/render.hpp"

namespace pickplace::envs {

using physics::Vec2;
using physics::Vec3;

enum class EnvKind { Rope, ClothSimplified, Cloth };
enum class ObsMode { State, Image };

inline std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::Rope: return "rope";
    case EnvKind::ClothSimplified: return "cloth_simplified";
    case EnvKind::Cloth: return "cloth";
  }
  return "?";
}

inline std::string to_string(ObsMode m) { return m == ObsMode::State ? "state" : "image"; }

inline EnvKind parse_env_kind(const std::string& s) {
  if (s == "rope") return EnvKind::Rope;
  if (s == "cloth_simplified") return EnvKind::ClothSimplified;
  if (s == "cloth") return EnvKind::Cloth;
  throw ConfigError("unknown env kind '" + s + "'");
}

inline ObsMode parse_obs_mode(const std::string& s) {
  if (s == "state") return ObsMode::State;
  if (s == "image") return ObsMode::Image;
  throw ConfigError("unknown observation mode '" + s + "'");
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct DomainRandomization {
  bool enabled = false;
  Interval mass_scale{0.5, 2.0};
  Interval friction{0.1, 0.5};
  Interval color_jitter{-0.1, 0.1};  // added per channel to object and table colors
  Interval light_gain{0.8, 1.2};
};

struct EnvConfig {
  EnvKind kind = EnvKind::Rope;
  int horizon = 200;
  int init_scramble_steps = 50;
  double max_place_radius = 0.08;
  ObsMode obs_mode = ObsMode::State;
  std::uint64_t seed = 0;
  DomainRandomization dr;
  double pick_bonus = 0.0;  // added to the reward whenever the pick lands on the object
  physics::PhysicsParams physics;
  render::VisualStyle style;  // nominal colors; also the segmentation reference
};

inline EnvConfig default_config(EnvKind kind) {
  EnvConfig c;
  c.kind = kind;
  c.horizon = kind == EnvKind::Rope ? 200 : 120;
  c.init_scramble_steps = kind == EnvKind::Rope ? 50 : 130;
  return c;
}

inline void validate(const EnvConfig& c) {
  if (c.horizon < 1) throw ConfigError("horizon must be >= 1");
  if (c.init_scramble_steps < 0) throw ConfigError("init_scramble_steps must be >= 0");
  if (!(c.max_place_radius > 0.0)) throw ConfigError("max_place_radius must be positive");
  if (c.kind == EnvKind::ClothSimplified && c.obs_mode == ObsMode::Image)
    throw ConfigError("cloth_simplified has no image variant");
  if (!(c.pick_bonus >= 0.0)) throw ConfigError("pick_bonus must be non-negative");
  const auto check = [](const Interval& i, bool positive, const char* name) {
    if (!(i.lo <= i.hi) || (positive && !(i.lo > 0.0))) throw ConfigError(std::string("invalid interval ") + name);
  };
  check(c.dr.mass_scale, true, "dr.mass_scale");
  check(c.dr.friction, false, "dr.friction");
  if (c.dr.friction.lo < 0.0) throw ConfigError("dr.friction must be non-negative");
  check(c.dr.color_jitter, false, "dr.color_jitter");
  check(c.dr.light_gain, true, "dr.light_gain");
  try {
    physics::validate(c.physics);
  } catch (const ConstructionError& e) {
    throw ConfigError(e.what());
  }
}

/// Per-episode physics and visual parameters.
struct EpisodeParams {
  double mass_scale = 1.0;
  double friction = 0.3;
  render::VisualStyle style;
};

inline EpisodeParams randomize(const EnvConfig& c, Rng& rng) {
  EpisodeParams p;
  p.style = c.style;
  if (!c.dr.enabled) return p;
  const auto draw = [&](const Interval& i) { return i.lo == i.hi ? i.lo : uniform(rng, i.lo, i.hi); };
  p.mass_scale = draw(c.dr.mass_scale);
  p.friction = draw(c.dr.friction);
  for (int k = 0; k < 3; ++k) {
    p.style.object_color[k] = std::clamp(p.style.object_color[k] + draw(c.dr.color_jitter), 0.0, 1.0);
    p.style.table_color[k] = std::clamp(p.style.table_color[k] + draw(c.dr.color_jitter), 0.0, 1.0);
  }
  p.style.light_gain = draw(c.dr.light_gain);
  return p;
}

struct Observation {
  ObsMode mode = ObsMode::State;
  std::vector<double> state;  // x0 y0 x1 y1 ...
  render::Image image;
};

struct ParticlePick {
  std::size_t index = 0;
  friend bool operator==(const ParticlePick&, const ParticlePick&) = default;
};

/// A table-plane point, resolved to the nearest pickable particle.
struct PointPick {
  Vec2 xy = Vec2::Zero();
  friend bool operator==(const PointPick& a, const PointPick& b) { return a.xy == b.xy; }
};

using Pick = std::variant<ParticlePick, render::Pixel, PointPick>;

struct PickPlaceAction {
  Pick pick = ParticlePick{};
  Vec2 place = Vec2::Zero();  // meters
};

struct StepInfo {
  bool clamped = false;
  double coverage = 0.0;
  bool pick_on_object = false;
  std::optional<std::size_t> particle;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

/// Maps a policy output in [-1, 1]^2 to a place displacement in meters.
inline Vec2 place_from_unit(const Vec2& unit, double radius) { return unit * radius; }

class PickPlaceEnv {
 public:
  explicit PickPlaceEnv(EnvConfig config, render::Camera camera = {}) : config_(std::move(config)), camera_(camera) {
    validate(config_);
    render::validate(camera_);
    goal_ = config_.kind == EnvKind::Rope ? rope_goal_mask(camera_) : cloth_goal_mask(camera_);
    body_ = fresh_body();
    refresh();
  }

  [[nodiscard]] const EnvConfig& config() const { return config_; }
  [[nodiscard]] const render::Camera& camera() const { return camera_; }
  [[nodiscard]] const physics::DeformableBody& body() const { return body_; }
  [[nodiscard]] const render::Mask& goal_mask() const { return goal_; }
  [[nodiscard]] const render::Mask& segmentation() const { return seg_; }
  [[nodiscard]] const EpisodeParams& episode_params() const { return params_; }
  [[nodiscard]] int episode_step() const { return step_count_; }
  [[nodiscard]] bool done() const { return step_count_ >= config_.horizon; }
  [[nodiscard]] double coverage() const { return cloth_reward(seg_, goal_, true); }

  /// Builds the body flat/straight at the table centre, applies domain randomization and the scramble.
  Observation reset(std::uint64_t episode_seed) {
    Rng dr_rng(mix_seed(episode_seed, 2));
    params_ = randomize(config_, dr_rng);
    body_ = fresh_body();
    physics::scale_masses(body_, params_.mass_scale);
    body_.friction_coeff = params_.friction;

    Rng rng(mix_seed(episode_seed, 1));
    const auto picks = pickable_particles();
    physics::PickMoveOptions options;
    options.max_radius = config_.max_place_radius;
    for (int s = 0; s < config_.init_scramble_steps; ++s) {
      const auto index = picks[uniform_index(rng, picks.size())];
      const Vec2 place = uniform_disk(rng, config_.max_place_radius);
      physics::pick_move(body_, index, place, config_.physics, options);
    }
    step_count_ = 0;
    refresh();
    return observation();
  }

  StepResult step(const PickPlaceAction& action) {
    if (done()) throw std::logic_error("step called on a finished episode");
    StepResult out;
    const auto particle = resolve(action.pick);
    out.info.particle = particle;
    out.info.pick_on_object = particle.has_value();
    if (particle) {
      physics::PickMoveOptions options;
      options.max_radius = config_.max_place_radius;
      const auto report = physics::pick_move(body_, *particle, action.place, config_.physics, options);
      out.info.clamped = report.clamped;
    } else {
      out.info.clamped = action.place.norm() > config_.max_place_radius;
    }
    ++step_count_;
    refresh();
    out.reward = reward() + (out.info.pick_on_object ? config_.pick_bonus : 0.0);
    out.info.coverage = coverage();
    out.done = done();
    out.observation = observation();
    return out;
  }

  /// Reward of the current state without the pick bonus.
  [[nodiscard]] double reward() const {
    return config_.kind == EnvKind::Rope ? rope_reward(seg_) : cloth_reward(seg_, goal_, true);
  }

  [[nodiscard]] Observation observation() const {
    Observation obs;
    obs.mode = config_.obs_mode;
    if (config_.obs_mode == ObsMode::State) {
      obs.state.resize(2 * body_.size());
      for (std::size_t i = 0; i < body_.size(); ++i) {
        obs.state[2 * i] = body_.particles[i].position.x();
        obs.state[2 * i + 1] = body_.particles[i].position.y();
      }
    } else {
      obs.image = image_;
    }
    return obs;
  }

  /// Particles a pick may resolve to: the four corners for cloth_simplified, all particles otherwise.
  [[nodiscard]] std::vector<std::size_t> pickable_particles() const {
    if (config_.kind == EnvKind::ClothSimplified) {
      const auto& g = std::get<physics::Grid>(body_.topology);
      return {0, g.cols - 1, (g.rows - 1) * g.cols, g.rows * g.cols - 1};
    }
    std::vector<std::size_t> all(body_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }

  /// State mode: pickable particles. Image mode: pixels of the segmentation mask.
  [[nodiscard]] std::vector<Pick> pick_candidates() const {
    std::vector<Pick> out;
    if (config_.obs_mode == ObsMode::State) {
      for (auto i : pickable_particles()) out.emplace_back(ParticlePick{i});
    } else {
      for (const auto& px : render::mask_pixels(seg_)) out.emplace_back(px);
    }
    if (out.empty()) throw std::runtime_error("object is not visible: no pick candidates");
    return out;
  }

  /// Particle a pick refers to, or nothing when it misses the object.
  [[nodiscard]] std::optional<std::size_t> resolve(const Pick& pick) const {
    if (const auto* p = std::get_if<ParticlePick>(&pick)) {
      const auto picks = pickable_particles();
      if (std::find(picks.begin(), picks.end(), p->index) == picks.end())
        throw std::out_of_range("particle pick is not a pickable particle");
      return p->index;
    }
    if (const auto* px = std::get_if<render::Pixel>(&pick)) {
      if (px->row < 0 || px->col < 0 || px->row >= seg_.height || px->col >= seg_.width) return std::nullopt;
      if (!seg_.at(px->row, px->col)) return std::nullopt;
      return nearest_pickable(render::pixel_center_world(camera_, *px));
    }
    return nearest_pickable(std::get<PointPick>(pick).xy);
  }

  [[nodiscard]] double resolve_radius() const { return 1.5 * body_.spacing; }

 private:
  [[nodiscard]] physics::DeformableBody fresh_body() const {
    auto b = config_.kind == EnvKind::Rope ? centred_rope() : centred_cloth();
    return b;
  }

  [[nodiscard]] std::optional<std::size_t> nearest_pickable(const Vec2& xy) const {
    std::optional<std::size_t> best;
    double best_d2 = resolve_radius() * resolve_radius();
    for (auto i : pickable_particles()) {
      const double d2 = (body_.particles[i].position.head<2>() - xy).squaredNorm();
      if (d2 <= best_d2) {
        if (!best || d2 < best_d2) best = i;
        best_d2 = std::min(best_d2, d2);
      }
    }
    return best;
  }

  void refresh() {
    image_ = render::rasterize(body_, camera_, params_.style);
    seg_ = render::segment(image_, config_.style);
  }

  EnvConfig config_;
  render::Camera camera_;
  render::Mask goal_;
  physics::DeformableBody body_;
  EpisodeParams params_;
  render::Image image_;
  render::Mask seg_;
  int step_count_ = 0;
};

}  // namespace pickplace::envs
