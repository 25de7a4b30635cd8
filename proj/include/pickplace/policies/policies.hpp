#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pickplace/envs/env.hpp"
#include "pickplace/render/render.hpp"
#include "pickplace/sac/learner.hpp"

namespace pickplace::policies {

using physics::Vec2;
using sac::Matrix;
using sac::Vector;

enum class PolicyKind { Random, Independent, Conditional, UniformPickLearnedPlace, MVP };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Random: return "random";
    case PolicyKind::Independent: return "independent";
    case PolicyKind::Conditional: return "conditional";
    case PolicyKind::UniformPickLearnedPlace: return "uniform_pick";
    case PolicyKind::MVP: return "mvp";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(const std::string& s) {
  for (auto k : {PolicyKind::Random, PolicyKind::Independent, PolicyKind::Conditional, PolicyKind::UniformPickLearnedPlace,
                 PolicyKind::MVP})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown policy kind '" + s + "'");
}

/// Learner factorization behind a policy kind. MVP reuses the uniform-pick placing learner.
inline sac::ActorKind actor_kind_for(PolicyKind k) {
  switch (k) {
    case PolicyKind::Independent: return sac::ActorKind::Joint;
    case PolicyKind::Conditional: return sac::ActorKind::Factored;
    case PolicyKind::UniformPickLearnedPlace:
    case PolicyKind::MVP: return sac::ActorKind::Place;
    case PolicyKind::Random: break;
  }
  throw ConfigError("the random policy has no learner");
}

inline sac::ObsLayout layout_for(const envs::EnvConfig& cfg, std::size_t particles) {
  sac::ObsLayout l;
  l.image = cfg.obs_mode == envs::ObsMode::Image;
  l.state_dim = l.image ? 0 : static_cast<int>(2 * particles);
  return l;
}

/// Observation in replay form: float xy for state, CHW bytes for images.
inline sac::EncodedObs encode_observation(const envs::Observation& obs) {
  sac::EncodedObs out;
  if (obs.mode == envs::ObsMode::State) {
    out.state.assign(obs.state.begin(), obs.state.end());
    return out;
  }
  const auto& img = obs.image;
  out.pixels.resize(static_cast<std::size_t>(3 * img.height * img.width));
  std::size_t k = 0;
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        out.pixels[k++] = static_cast<std::uint8_t>(std::lround(std::clamp(img.at(r, c, ch), 0.0f, 1.0f) * 255.0f));
  return out;
}

/// Normalized pick features seen by the networks, before tiling.
/// State picks: particle identity (arclength for rope, row/col for cloth) followed by its (u, v) location in the
/// camera window. Image picks: (u, v) of the pixel centre. Every component lies in [0, 1].
class PickEncoder {
 public:
  PickEncoder(const envs::EnvConfig& cfg, const render::Camera& cam, const physics::Topology& topology)
      : image_(cfg.obs_mode == envs::ObsMode::Image), cam_(cam), topology_(topology) {}

  explicit PickEncoder(const envs::PickPlaceEnv& env) : PickEncoder(env.config(), env.camera(), env.body().topology) {}

  [[nodiscard]] int dim() const {
    if (image_) return 2;
    return (std::holds_alternative<physics::Chain>(topology_) ? 1 : 2) + 2;
  }

  [[nodiscard]] Vec2 location(const Vec2& xy) const {
    const double u = (xy.x() - cam_.x_min) / (cam_.x_max - cam_.x_min);
    const double v = (cam_.y_max - xy.y()) / (cam_.y_max - cam_.y_min);
    return {std::clamp(u, 0.0, 1.0), std::clamp(v, 0.0, 1.0)};
  }

  [[nodiscard]] std::vector<float> encode(const envs::PickPlaceEnv& env, const envs::Pick& pick) const {
    std::vector<float> out;
    out.reserve(static_cast<std::size_t>(dim()));
    if (const auto* px = std::get_if<render::Pixel>(&pick)) {
      if (!image_) throw std::invalid_argument("pixel pick given to a state encoder");
      out.push_back(static_cast<float>((px->col + 0.5) / cam_.width));
      out.push_back(static_cast<float>((px->row + 0.5) / cam_.height));
      return out;
    }
    const auto* pp = std::get_if<envs::ParticlePick>(&pick);
    if (!pp || image_) throw std::invalid_argument("only particle picks have a state encoding");
    if (const auto* chain = std::get_if<physics::Chain>(&topology_)) {
      out.push_back(chain->n > 1 ? static_cast<float>(static_cast<double>(pp->index) / static_cast<double>(chain->n - 1)) : 0.0f);
    } else {
      const auto& g = std::get<physics::Grid>(topology_);
      const auto r = pp->index / g.cols, c = pp->index % g.cols;
      out.push_back(g.rows > 1 ? static_cast<float>(static_cast<double>(r) / static_cast<double>(g.rows - 1)) : 0.0f);
      out.push_back(g.cols > 1 ? static_cast<float>(static_cast<double>(c) / static_cast<double>(g.cols - 1)) : 0.0f);
    }
    const Vec2 uv = location(env.body().particles.at(pp->index).position.head<2>());
    out.push_back(static_cast<float>(uv.x()));
    out.push_back(static_cast<float>(uv.y()));
    return out;
  }

  /// Pick for a network output in [0, 1]^2: a table point (state) or the pixel under it (image).
  [[nodiscard]] envs::Pick pick_from_unit(const Vec2& uv) const {
    const double u = std::clamp(uv.x(), 0.0, 1.0), v = std::clamp(uv.y(), 0.0, 1.0);
    if (image_) {
      return render::Pixel{std::min(static_cast<int>(v * cam_.height), cam_.height - 1),
                           std::min(static_cast<int>(u * cam_.width), cam_.width - 1)};
    }
    return envs::PointPick{{cam_.x_min + u * (cam_.x_max - cam_.x_min), cam_.y_max - v * (cam_.y_max - cam_.y_min)}};
  }

 private:
  bool image_ = false;
  render::Camera cam_;
  physics::Topology topology_;
};

/// Uniform pick over the candidates, place uniform in the disk.
inline envs::PickPlaceAction act_random(const std::vector<envs::Pick>& candidates, double radius, Rng& rng) {
  if (candidates.empty()) throw std::invalid_argument("act_random: no pick candidates");
  envs::PickPlaceAction a;
  a.pick = candidates[uniform_index(rng, candidates.size())];
  a.place = uniform_disk(rng, radius);
  return a;
}

template <class S>
struct PlaceSample {
  Matrix<S> place;     // 2 x N in (-1, 1)
  Matrix<S> log_prob;  // 1 x N
};

/// Binds a place-conditioned learner to one observation for value_of_pick / mvp_pick.
/// Any type with the same three members can stand in (synthetic critics in tests).
template <class S>
class LearnerPlaceModel {
 public:
  LearnerPlaceModel(const sac::SacLearner<S>& learner, const Matrix<S>& x) : learner_(&learner) {
    if (learner.actor().kind() != sac::ActorKind::Place) throw std::invalid_argument("value of pick needs a place-conditioned learner");
    if (x.cols() != 1) throw ShapeError("bind exactly one observation");
    actor_feat_ = learner.actor().features(x);
    q1_feat_ = learner.critic1().features(x);
    q2_feat_ = learner.critic2().features(x);
  }

  PlaceSample<S> sample_place(const Matrix<S>& pick_enc, const Matrix<S>& noise) const {
    const auto out = learner_->actor().forward_features(actor_feat_.replicate(1, pick_enc.cols()), &pick_enc, noise);
    return {out.place, out.log_prob};
  }

  Matrix<S> min_q(const Matrix<S>& pick_enc, const Matrix<S>& place) const {
    const Eigen::Index n = pick_enc.cols();
    return learner_->critic1()
        .forward_features(q1_feat_.replicate(1, n), pick_enc, place)
        .cwiseMin(learner_->critic2().forward_features(q2_feat_.replicate(1, n), pick_enc, place));
  }

  [[nodiscard]] double alpha() const { return learner_->alpha(); }

 private:
  const sac::SacLearner<S>* learner_;
  Matrix<S> actor_feat_, q1_feat_, q2_feat_;
};

/// V(o, pick) = mean over K placements of [min Q - alpha log pi], one value per pick column.
/// The K noise draws are shared by every candidate.
template <class S, class Model>
std::vector<double> value_of_pick(const Model& model, const Matrix<S>& pick_encs, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("value_of_pick: K must be positive");
  const Eigen::Index c = pick_encs.cols();
  const Matrix<S> noise = nn::standard_normal<S>(2, k, rng);
  Matrix<S> picks(pick_encs.rows(), c * k);
  for (Eigen::Index i = 0; i < c; ++i) picks.middleCols(i * k, k) = pick_encs.col(i).replicate(1, k);
  const auto sample = model.sample_place(picks, noise.replicate(1, c));
  const Matrix<S> q = model.min_q(picks, sample.place);
  const double a = model.alpha();
  std::vector<double> v(static_cast<std::size_t>(c), 0.0);
  for (Eigen::Index i = 0; i < c; ++i) {
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      const auto col = i * k + j;
      sum += static_cast<double>(q(0, col)) - a * static_cast<double>(sample.log_prob(0, col));
    }
    v[static_cast<std::size_t>(i)] = sum / k;
  }
  return v;
}

/// Index of the largest value; ties go to the lowest index.
inline std::size_t argmax_lowest(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("mvp_pick: no pick candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <class S, class Model>
std::size_t mvp_pick(const Model& model, const Matrix<S>& pick_encs, int k, Rng& rng) {
  if (pick_encs.cols() == 0) throw std::invalid_argument("mvp_pick: no pick candidates");
  return argmax_lowest(value_of_pick<S>(model, pick_encs, k, rng));
}

/// Up to `limit` indices out of n, one uniform draw per equal-width stratum, in increasing order.
inline std::vector<std::size_t> stratified_subset(std::size_t n, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> out;
  if (limit == 0 || n <= limit) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  for (std::size_t s = 0; s < limit; ++s) {
    const std::size_t lo = s * n / limit, hi = (s + 1) * n / limit;
    out.push_back(lo + uniform_index(rng, hi - lo));
  }
  return out;
}

struct Decision {
  envs::PickPlaceAction action;
  std::vector<float> pick_enc;  // critic-facing pick features (untiled); empty for Random
  std::vector<float> raw;       // actor sample in (-1, 1), pick components first; empty for Random
};

struct AgentOptions {
  int mvp_samples = 10;
  std::size_t mvp_max_candidates = 0;  // 0 sweeps every candidate
};

/// Action selection for one policy kind over a (possibly absent) learner.
class Agent {
 public:
  Agent(PolicyKind kind, const envs::PickPlaceEnv& env, const sac::SacLearner<float>* learner, AgentOptions options = {})
      : kind_(kind), encoder_(env), layout_(layout_for(env.config(), env.body().size())), learner_(learner), options_(options) {
    if (kind_ != PolicyKind::Random) {
      if (!learner_) throw std::invalid_argument(to_string(kind_) + " policy needs a learner");
      if (learner_->actor().kind() != actor_kind_for(kind_)) throw std::invalid_argument("learner factorization does not match the policy kind");
    }
    if (options_.mvp_samples < 1) throw ConfigError("mvp_samples must be positive");
  }

  [[nodiscard]] PolicyKind kind() const { return kind_; }
  [[nodiscard]] const PickEncoder& encoder() const { return encoder_; }
  [[nodiscard]] const sac::ObsLayout& layout() const { return layout_; }

  /// `deterministic` switches the policy noise off; uniform and MVP pick randomness still draws from `rng`.
  Decision act(const envs::PickPlaceEnv& env, Rng& rng, bool deterministic) const {
    Decision d;
    const double radius = env.config().max_place_radius;
    if (kind_ == PolicyKind::Random) {
      d.action = act_random(env.pick_candidates(), radius, rng);
      return d;
    }
    const auto enc = encode_observation(env.observation());
    const Matrix<float> x = sac::obs_matrix<float>(layout_, {&enc});
    const auto& actor = learner_->actor();
    const auto noise = [&] {
      return deterministic ? Matrix<float>(Matrix<float>::Zero(actor.noise_dim(), 1)) : nn::standard_normal<float>(actor.noise_dim(), 1, rng);
    };
    if (kind_ == PolicyKind::UniformPickLearnedPlace || kind_ == PolicyKind::MVP) {
      const auto candidates = env.pick_candidates();
      std::size_t chosen;
      if (kind_ == PolicyKind::UniformPickLearnedPlace) {
        chosen = uniform_index(rng, candidates.size());
        d.pick_enc = encoder_.encode(env, candidates[chosen]);
      } else {
        const auto subset = stratified_subset(candidates.size(), options_.mvp_max_candidates, rng);
        Matrix<float> encs(encoder_.dim(), static_cast<Eigen::Index>(subset.size()));
        for (std::size_t i = 0; i < subset.size(); ++i) {
          const auto e = encoder_.encode(env, candidates[subset[i]]);
          for (int r = 0; r < encoder_.dim(); ++r) encs(r, static_cast<Eigen::Index>(i)) = e[static_cast<std::size_t>(r)];
        }
        const LearnerPlaceModel<float> model(*learner_, x);
        const auto best = mvp_pick<float>(model, encs, options_.mvp_samples, rng);
        chosen = subset[best];
        d.pick_enc.assign(encs.col(static_cast<Eigen::Index>(best)).data(), encs.col(static_cast<Eigen::Index>(best)).data() + encs.rows());
      }
      const Matrix<float> pick = Eigen::Map<const Matrix<float>>(d.pick_enc.data(), encoder_.dim(), 1);
      const auto out = actor.forward(x, &pick, noise());
      d.action.pick = candidates[chosen];
      d.raw.assign(out.action.data(), out.action.data() + out.action.size());
      d.action.place = envs::place_from_unit({out.place(0, 0), out.place(1, 0)}, radius);
      return d;
    }
    const auto out = actor.forward(x, nullptr, noise());
    d.pick_enc = {out.pick_enc(0, 0), out.pick_enc(1, 0)};
    d.raw.assign(out.action.data(), out.action.data() + out.action.size());
    d.action.pick = encoder_.pick_from_unit({out.pick_enc(0, 0), out.pick_enc(1, 0)});
    d.action.place = envs::place_from_unit({out.place(0, 0), out.place(1, 0)}, radius);
    return d;
  }

  /// Pick features of a uniformly drawn candidate; the bootstrap pick for place-conditioned targets.
  std::vector<float> sample_pick_enc(const envs::PickPlaceEnv& env, Rng& rng) const {
    const auto candidates = env.pick_candidates();
    return encoder_.encode(env, candidates[uniform_index(rng, candidates.size())]);
  }

  /// V(o, pick) for every candidate at the current state (place-conditioned learners only).
  std::vector<double> candidate_values(const envs::PickPlaceEnv& env, Rng& rng) const {
    if (!learner_ || learner_->actor().kind() != sac::ActorKind::Place) throw std::invalid_argument("candidate values need a place-conditioned learner");
    const auto candidates = env.pick_candidates();
    Matrix<float> encs(encoder_.dim(), static_cast<Eigen::Index>(candidates.size()));
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto e = encoder_.encode(env, candidates[i]);
      for (int r = 0; r < encoder_.dim(); ++r) encs(r, static_cast<Eigen::Index>(i)) = e[static_cast<std::size_t>(r)];
    }
    const auto enc = encode_observation(env.observation());
    const LearnerPlaceModel<float> model(*learner_, sac::obs_matrix<float>(layout_, {&enc}));
    return value_of_pick<float>(model, encs, options_.mvp_samples, rng);
  }

 private:
  PolicyKind kind_;
  PickEncoder encoder_;
  sac::ObsLayout layout_;
  const sac::SacLearner<float>* learner_;
  AgentOptions options_;
};

/// Candidate values normalized to [0, 1] and painted blue-to-red over a dimmed render of the scene.
inline render::Image value_heatmap(const envs::PickPlaceEnv& env, const std::vector<envs::Pick>& candidates,
                                   const std::vector<double>& values) {
  if (candidates.size() != values.size()) throw std::invalid_argument("one value per candidate expected");
  render::Image img = render::rasterize(env.body(), env.camera(), env.episode_params().style);
  for (auto& v : img.data) v *= 0.35f;
  if (values.empty()) return img;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  const auto put = [&](int r, int c, const render::Rgb& rgb) {
    if (r < 0 || c < 0 || r >= img.height || c >= img.width) return;
    for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = static_cast<float>(rgb[static_cast<std::size_t>(ch)]);
  };
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto rgb = render::heat_color(span > 0.0 ? (values[i] - lo) / span : 1.0);
    if (const auto* px = std::get_if<render::Pixel>(&candidates[i])) {
      put(px->row, px->col, rgb);
    } else if (const auto* pp = std::get_if<envs::ParticlePick>(&candidates[i])) {
      const auto& p = env.body().particles.at(pp->index).position;
      const auto px0 = render::world_to_pixel(env.camera(), p.x(), p.y());
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) put(px0.row + dr, px0.col + dc, rgb);
    }
  }
  return img;
}

}  // namespace pickplace::policies
