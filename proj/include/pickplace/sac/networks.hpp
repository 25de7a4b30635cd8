#pragma once

#include <string>
#include <vector>

#include "pickplace/nn/conv.hpp"
#include "pickplace/nn/gaussian.hpp"
#include "pickplace/nn/mlp.hpp"
#include "pickplace/nn/optim.hpp"
#include "pickplace/sac/replay.hpp"

namespace pickplace::sac {

using nn::Matrix;
using nn::Vector;

inline constexpr int kPickTile = 50;

/// Place: place head conditioned on a given pick encoding (uniform pick, MVP).
/// Joint: one head emits pick and place together. Factored: pick head, then a place head fed the sampled pick.
enum class ActorKind { Place, Joint, Factored };

struct ObsLayout {
  bool image = false;
  int state_dim = 0;
  double state_scale = 10.0;  // state inputs are particle xy in meters times this factor
  [[nodiscard]] int input_dim() const { return image ? 3 * 64 * 64 : state_dim; }
};

/// Network input columns for a batch of stored observations.
template <class S>
Matrix<S> obs_matrix(const ObsLayout& layout, const std::vector<const EncodedObs*>& batch) {
  Matrix<S> x(layout.input_dim(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    if (layout.image) {
      if (static_cast<int>(batch[b]->pixels.size()) != layout.input_dim()) throw ShapeError("image observation size mismatch");
      for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, col) = static_cast<S>(batch[b]->pixels[static_cast<std::size_t>(i)]) / S(255);
    } else {
      if (static_cast<int>(batch[b]->state.size()) != layout.state_dim) throw ShapeError("state observation size mismatch");
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        x(i, col) = static_cast<S>(batch[b]->state[static_cast<std::size_t>(i)] * layout.state_scale);
    }
  }
  return x;
}

template <class S>
Matrix<S> tile_rows(const Matrix<S>& m, int times) {
  return m.replicate(times, 1);
}

/// Sums the gradient of a row-tiled block back onto the untiled rows.
template <class S>
Matrix<S> untile_rows(const Matrix<S>& g, Eigen::Index rows, int times) {
  Matrix<S> out = Matrix<S>::Zero(rows, g.cols());
  for (int t = 0; t < times; ++t) out += g.middleRows(t * rows, rows);
  return out;
}

/// Stacks blocks vertically.
template <class S>
Matrix<S> vstack(std::initializer_list<const Matrix<S>*> parts) {
  Eigen::Index rows = 0, cols = -1;
  for (const auto* p : parts) {
    if (p->rows() == 0) continue;
    rows += p->rows();
    if (cols >= 0 && p->cols() != cols) throw ShapeError("vstack: column counts differ");
    cols = p->cols();
  }
  Matrix<S> out(rows, std::max<Eigen::Index>(cols, 0));
  Eigen::Index r = 0;
  for (const auto* p : parts) {
    if (p->rows() == 0) continue;
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

/// Identity for state inputs, the conv stack for images.
template <class S>
class Trunk {
 public:
  struct Cache {
    typename nn::ConvEncoder<S>::Cache conv;
  };

  Trunk() = default;
  explicit Trunk(const ObsLayout& layout) : image_(layout.image), in_dim_(layout.input_dim()) {
    if (image_) conv_ = nn::ConvEncoder<S>(nn::ConvSpec{});
  }
  [[nodiscard]] bool image() const { return image_; }
  [[nodiscard]] int feature_dim() const { return image_ ? conv_.output_dim() : in_dim_; }
  void init(Rng& rng) {
    if (image_) conv_.init(rng);
  }
  Matrix<S> forward(const Matrix<S>& x, Cache* cache) const {
    if (x.rows() != in_dim_) throw ShapeError("observation input has the wrong size");
    return image_ ? conv_.forward(x, cache ? &cache->conv : nullptr) : x;
  }
  void accumulate(const Cache& cache, const Matrix<S>& dfeat, Vector<S>& grad) const {
    if (image_) conv_.backward(cache.conv, dfeat, grad);
  }
  [[nodiscard]] const Vector<S>& params() const { return image_ ? conv_.params() : empty_; }
  Vector<S>& mutable_params() { return image_ ? conv_.mutable_params() : empty_; }

 private:
  bool image_ = false;
  int in_dim_ = 0;
  nn::ConvEncoder<S> conv_;
  Vector<S> empty_;
};

/// Parameter blocks of a network, in a fixed order.
template <class S>
using Grads = std::vector<Vector<S>>;

template <class S>
Grads<S> zero_grads(const std::vector<const Vector<S>*>& blocks) {
  Grads<S> g;
  for (const auto* b : blocks) g.push_back(Vector<S>::Zero(b->size()));
  return g;
}

/// Q(o, pick, place) on [features, pick encoding tiled, place].
template <class S>
class Critic {
 public:
  struct Cache {
    typename Trunk<S>::Cache trunk;
    typename nn::Mlp<S>::Cache mlp;
    Eigen::Index feature_rows = 0;
  };
  struct InputGrads {
    Matrix<S> pick_enc;
    Matrix<S> place;
  };

  Critic() = default;
  Critic(const ObsLayout& layout, int pick_dim, int place_dim, const std::vector<int>& hidden, int tile)
      : trunk_(layout), pick_dim_(pick_dim), place_dim_(place_dim), tile_(tile) {
    mlp_ = nn::Mlp<S>({trunk_.feature_dim() + pick_dim * tile + place_dim, hidden, 1});
  }

  void init(Rng& rng) {
    trunk_.init(rng);
    mlp_.init(rng);
  }

  Matrix<S> forward(const Matrix<S>& x, const Matrix<S>& pick_enc, const Matrix<S>& place, Cache* cache = nullptr) const {
    const Matrix<S> feat = trunk_.forward(x, cache ? &cache->trunk : nullptr);
    return head_forward(feat, pick_enc, place, cache);
  }

  /// Trunk output for observation columns; pairs with forward_features() when one observation is scored many times.
  Matrix<S> features(const Matrix<S>& x) const { return trunk_.forward(x, nullptr); }
  Matrix<S> forward_features(const Matrix<S>& feat, const Matrix<S>& pick_enc, const Matrix<S>& place) const {
    return head_forward(feat, pick_enc, place, nullptr);
  }

  void accumulate(const Cache& cache, const Matrix<S>& dq, Grads<S>& grads) const {
    if (trunk_.image()) {
      const Matrix<S> din = mlp_.backward(cache.mlp, dq, grads[1]);
      trunk_.accumulate(cache.trunk, din.topRows(cache.feature_rows), grads[0]);
    } else {
      mlp_.accumulate(cache.mlp, dq, grads[1]);
    }
  }

  /// d/d(pick_enc) (summed over tiles) and d/d(place); no parameter gradients.
  InputGrads input_grads(const Cache& cache, const Matrix<S>& dq) const {
    const Matrix<S> din = mlp_.backward_input(cache.mlp, dq);
    InputGrads g;
    g.pick_enc = untile_rows<S>(din.middleRows(cache.feature_rows, pick_dim_ * tile_), pick_dim_, tile_);
    g.place = din.bottomRows(place_dim_);
    return g;
  }

  [[nodiscard]] std::vector<const Vector<S>*> blocks() const { return {&trunk_.params(), &mlp_.params()}; }
  std::vector<Vector<S>*> mutable_blocks() { return {&trunk_.mutable_params(), &mlp_.mutable_params()}; }
  [[nodiscard]] int pick_dim() const { return pick_dim_; }

 private:
  Matrix<S> head_forward(const Matrix<S>& feat, const Matrix<S>& pick_enc, const Matrix<S>& place, Cache* cache) const {
    if (pick_enc.rows() != pick_dim_ || place.rows() != place_dim_ || pick_enc.cols() != feat.cols() || place.cols() != feat.cols())
      throw ShapeError("critic pick/place shape mismatch");
    const Matrix<S> tiled = tile_rows(pick_enc, tile_);
    const Matrix<S> in = vstack<S>({&feat, &tiled, &place});
    if (cache) cache->feature_rows = feat.rows();
    return mlp_.forward(in, cache ? &cache->mlp : nullptr);
  }

  Trunk<S> trunk_;
  nn::Mlp<S> mlp_;
  int pick_dim_ = 0;
  int place_dim_ = 2;
  int tile_ = kPickTile;
};

/// Squashed-Gaussian policy in one of the three factorizations.
template <class S>
class Actor {
 public:
  static constexpr int kPlaceDim = 2;
  static constexpr int kPickDim = 2;  // pick location for Joint/Factored

  struct Output {
    Matrix<S> pick_enc;  // what the critic is fed
    Matrix<S> action;    // raw sample in (-1, 1): [pick;] place
    Matrix<S> place;
    Matrix<S> log_prob;  // 1 x batch, joint over all sampled components
  };
  struct Cache {
    typename Trunk<S>::Cache trunk;
    Eigen::Index feature_rows = 0;
    typename nn::Mlp<S>::Cache head;
    nn::SquashedSample<S> first;
    typename nn::Mlp<S>::Cache place_head;
    nn::SquashedSample<S> second;
  };

  Actor() = default;
  Actor(ActorKind kind, const ObsLayout& layout, int given_pick_dim, const std::vector<int>& hidden, int tile)
      : kind_(kind), trunk_(layout), tile_(tile) {
    const int f = trunk_.feature_dim();
    switch (kind_) {
      case ActorKind::Place:
        pick_dim_ = given_pick_dim;
        head_ = nn::Mlp<S>({f + pick_dim_ * tile_, hidden, 2 * kPlaceDim});
        break;
      case ActorKind::Joint:
        pick_dim_ = kPickDim;
        head_ = nn::Mlp<S>({f, hidden, 2 * (kPickDim + kPlaceDim)});
        break;
      case ActorKind::Factored:
        pick_dim_ = kPickDim;
        head_ = nn::Mlp<S>({f, hidden, 2 * kPickDim});
        place_head_ = nn::Mlp<S>({f + kPickDim * tile_, hidden, 2 * kPlaceDim});
        break;
    }
  }

  [[nodiscard]] ActorKind kind() const { return kind_; }
  [[nodiscard]] int pick_dim() const { return pick_dim_; }
  [[nodiscard]] int action_dim() const { return kind_ == ActorKind::Place ? kPlaceDim : kPickDim + kPlaceDim; }
  /// Rows of the standard-normal noise matrix consumed by forward().
  [[nodiscard]] int noise_dim() const { return action_dim(); }

  void init(Rng& rng, double final_scale = 1e-2) {
    trunk_.init(rng);
    head_.init(rng, final_scale);
    if (kind_ == ActorKind::Factored) place_head_.init(rng, final_scale);
  }

  /// `given_pick_enc` is required for Place and ignored otherwise. Zero noise gives the deterministic action.
  Output forward(const Matrix<S>& x, const Matrix<S>* given_pick_enc, const Matrix<S>& noise, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    const Matrix<S> feat = trunk_.forward(x, &c.trunk);
    return head_forward(feat, given_pick_enc, noise, c);
  }

  Matrix<S> features(const Matrix<S>& x) const { return trunk_.forward(x, nullptr); }
  Output forward_features(const Matrix<S>& feat, const Matrix<S>* given_pick_enc, const Matrix<S>& noise) const {
    Cache local;
    return head_forward(feat, given_pick_enc, noise, local);
  }

  // Everything after the trunk.
  Output head_forward(const Matrix<S>& feat, const Matrix<S>* given_pick_enc, const Matrix<S>& noise, Cache& c) const {
    if (noise.rows() != noise_dim() || noise.cols() != feat.cols()) throw ShapeError("actor noise shape mismatch");
    c.feature_rows = feat.rows();
    Output out;
    if (kind_ == ActorKind::Place) {
      if (!given_pick_enc || given_pick_enc->rows() != pick_dim_ || given_pick_enc->cols() != feat.cols())
        throw ShapeError("place actor needs a pick encoding of matching shape");
      const Matrix<S> tiled = tile_rows(*given_pick_enc, tile_);
      const Matrix<S> in = vstack<S>({&feat, &tiled});
      const Matrix<S> h = head_.forward(in, &c.head);
      c.first = nn::squashed_sample<S>(h.topRows(kPlaceDim), h.bottomRows(kPlaceDim), noise);
      out.pick_enc = *given_pick_enc;
      out.action = c.first.action;
      out.place = c.first.action;
      out.log_prob = c.first.log_prob;
      return out;
    }
    if (kind_ == ActorKind::Joint) {
      const int d = kPickDim + kPlaceDim;
      const Matrix<S> h = head_.forward(feat, &c.head);
      c.first = nn::squashed_sample<S>(h.topRows(d), h.bottomRows(d), noise);
      out.action = c.first.action;
      out.pick_enc = (c.first.action.topRows(kPickDim).array() + S(1)) * S(0.5);
      out.place = c.first.action.bottomRows(kPlaceDim);
      out.log_prob = c.first.log_prob;
      return out;
    }
    const Matrix<S> h1 = head_.forward(feat, &c.head);
    c.first = nn::squashed_sample<S>(h1.topRows(kPickDim), h1.bottomRows(kPickDim), Matrix<S>(noise.topRows(kPickDim)));
    out.pick_enc = (c.first.action.array() + S(1)) * S(0.5);
    const Matrix<S> tiled = tile_rows(out.pick_enc, tile_);
    const Matrix<S> in = vstack<S>({&feat, &tiled});
    const Matrix<S> h2 = place_head_.forward(in, &c.place_head);
    c.second = nn::squashed_sample<S>(h2.topRows(kPlaceDim), h2.bottomRows(kPlaceDim), Matrix<S>(noise.bottomRows(kPlaceDim)));
    out.place = c.second.action;
    out.action = vstack<S>({&c.first.action, &c.second.action});
    out.log_prob = c.first.log_prob + c.second.log_prob;
    return out;
  }

  /// Accumulates parameter gradients for upstream gradients on the critic-facing outputs and log-prob.
  /// `d_pick_enc` may be empty for the Place kind.
  void backward(const Cache& c, const Matrix<S>& d_place, const Matrix<S>& d_pick_enc, const Matrix<S>& d_log_prob,
                Grads<S>& grads) const {
    const auto head_grad = [](const nn::HeadGradients<S>& g) { return vstack<S>({&g.mean, &g.log_std_raw}); };
    Matrix<S> dfeat;
    if (kind_ == ActorKind::Place) {
      const auto g = nn::squashed_backward<S>(c.first, d_place, d_log_prob);
      const Matrix<S> din = head_.backward(c.head, head_grad(g), grads[1]);
      dfeat = din.topRows(c.feature_rows);
    } else if (kind_ == ActorKind::Joint) {
      const Matrix<S> d_pick = d_pick_enc * S(0.5);
      const Matrix<S> d_action = vstack<S>({&d_pick, &d_place});
      const auto g = nn::squashed_backward<S>(c.first, d_action, d_log_prob);
      dfeat = head_.backward(c.head, head_grad(g), grads[1]);
    } else {
      const auto g2 = nn::squashed_backward<S>(c.second, d_place, d_log_prob);
      const Matrix<S> din2 = place_head_.backward(c.place_head, head_grad(g2), grads[2]);
      Matrix<S> d_enc = untile_rows<S>(din2.middleRows(c.feature_rows, kPickDim * tile_), kPickDim, tile_);
      if (d_pick_enc.size() != 0) d_enc += d_pick_enc;
      const auto g1 = nn::squashed_backward<S>(c.first, Matrix<S>(d_enc * S(0.5)), d_log_prob);
      dfeat = head_.backward(c.head, head_grad(g1), grads[1]) + din2.topRows(c.feature_rows);
    }
    trunk_.accumulate(c.trunk, dfeat, grads[0]);
  }

  [[nodiscard]] std::vector<const Vector<S>*> blocks() const {
    if (kind_ == ActorKind::Factored) return {&trunk_.params(), &head_.params(), &place_head_.params()};
    return {&trunk_.params(), &head_.params()};
  }
  std::vector<Vector<S>*> mutable_blocks() {
    if (kind_ == ActorKind::Factored) return {&trunk_.mutable_params(), &head_.mutable_params(), &place_head_.mutable_params()};
    return {&trunk_.mutable_params(), &head_.mutable_params()};
  }
  /// Read-only access for tests that freeze one factor.
  [[nodiscard]] const nn::Mlp<S>& head() const { return head_; }
  nn::Mlp<S>& mutable_head() { return head_; }
  [[nodiscard]] const nn::Mlp<S>& place_head() const { return place_head_; }
  nn::Mlp<S>& mutable_place_head() { return place_head_; }

 private:
  ActorKind kind_ = ActorKind::Place;
  Trunk<S> trunk_;
  nn::Mlp<S> head_;
  nn::Mlp<S> place_head_;
  int pick_dim_ = 0;
  int tile_ = kPickTile;
};

}  // namespace pickplace::sac
