#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pickplace/common/binary_io.hpp"
#include "pickplace/common/error.hpp"
#include "pickplace/common/random.hpp"

namespace pickplace::sac {

/// Observation as stored in the replay pool: raw particle xy (state) or CHW bytes (image).
struct EncodedObs {
  std::vector<float> state;
  std::vector<std::uint8_t> pixels;
  friend bool operator==(const EncodedObs&, const EncodedObs&) = default;
};

struct Transition {
  EncodedObs obs;
  std::vector<float> pick_enc;  // untiled pick encoding seen by the critic
  std::vector<float> action;    // raw policy output in (-1, 1); the last two entries are the place
  float reward = 0.0f;
  EncodedObs next_obs;
  bool done = false;
  std::vector<float> next_pick_enc;  // place-only learners: a uniform pick drawn at next_obs
};

inline void validate(const Transition& t) {
  if (!std::isfinite(t.reward)) throw NumericalError("non-finite reward in transition");
  for (float a : t.action)
    if (!(a >= -1.0f && a <= 1.0f)) throw std::invalid_argument("transition action outside [-1, 1]");
}

/// Fixed-capacity FIFO ring.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConstructionError("replay capacity must be positive");
    items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] std::uint64_t total_added() const { return added_; }

  void add(Transition t) {
    validate(t);
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
    ++added_;
  }

  /// i-th oldest stored transition.
  [[nodiscard]] const Transition& at(std::size_t i) const {
    if (i >= items_.size()) throw std::out_of_range("replay index out of range");
    return items_[(head_ + i) % items_.size()];
  }

  [[nodiscard]] std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const {
    if (items_.empty()) throw std::logic_error("sampling from an empty replay buffer");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = uniform_index(rng, items_.size());
    return idx;
  }

  void write(BinaryWriter& out) const;
  void read(BinaryReader& in);

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;
  std::uint64_t added_ = 0;
};

namespace detail {

inline void write_obs(BinaryWriter& out, const EncodedObs& o) {
  out.write_array(std::span<const float>(o.state));
  out.write_array(std::span<const std::uint8_t>(o.pixels));
}

inline EncodedObs read_obs(BinaryReader& in) {
  EncodedObs o;
  o.state = in.read_array<float>();
  o.pixels = in.read_array<std::uint8_t>();
  return o;
}

}  // namespace detail

inline void ReplayBuffer::write(BinaryWriter& out) const {
  out.write<std::uint64_t>(capacity_);
  out.write<std::uint64_t>(added_);
  out.write<std::uint64_t>(items_.size());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& t = at(i);
    detail::write_obs(out, t.obs);
    out.write_array(std::span<const float>(t.pick_enc));
    out.write_array(std::span<const float>(t.action));
    out.write(t.reward);
    detail::write_obs(out, t.next_obs);
    out.write<std::uint8_t>(t.done ? 1 : 0);
    out.write_array(std::span<const float>(t.next_pick_enc));
  }
}

inline void ReplayBuffer::read(BinaryReader& in) {
  const auto cap = in.read<std::uint64_t>();
  if (cap != capacity_) throw FormatError("replay capacity differs from the stored pool");
  const auto added = in.read<std::uint64_t>();
  const auto n = in.read<std::uint64_t>();
  if (n > capacity_) throw FormatError("stored replay pool exceeds its capacity");
  std::vector<Transition> items;
  items.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Transition t;
    t.obs = detail::read_obs(in);
    t.pick_enc = in.read_array<float>();
    t.action = in.read_array<float>();
    t.reward = in.read<float>();
    t.next_obs = detail::read_obs(in);
    t.done = in.read<std::uint8_t>() != 0;
    t.next_pick_enc = in.read_array<float>();
    items.push_back(std::move(t));
  }
  items_ = std::move(items);
  head_ = 0;
  added_ = added;
}

}  // namespace pickplace::sac
