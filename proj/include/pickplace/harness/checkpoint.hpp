#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "pickplace/common/binary_io.hpp"
#include "pickplace/harness/config.hpp"
#include "pickplace/sac/learner.hpp"

namespace pickplace::harness {

inline constexpr char kCheckpointMagic[4] = {'P', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Learner state plus the experiment it came from. Layout is documented in docs/formats.md.
struct Checkpoint {
  std::string config_text;  // canonical config of the run
  std::uint64_t config_hash = 0;
  std::uint64_t compat_hash = 0;
  std::uint64_t env_steps = 0;
  std::uint64_t episodes = 0;
  std::uint64_t gradient_updates = 0;
  std::vector<std::string> sampler_rng;  // one state per sampler
  std::vector<std::uint8_t> learner;     // SacLearner::write payload; empty for the random policy
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  BinaryWriter payload;
  payload.write_string(ck.config_text);
  payload.write(ck.config_hash);
  payload.write(ck.compat_hash);
  payload.write(ck.env_steps);
  payload.write(ck.episodes);
  payload.write(ck.gradient_updates);
  payload.write<std::uint64_t>(ck.sampler_rng.size());
  for (const auto& s : ck.sampler_rng) payload.write_string(s);
  payload.write_array(std::span<const std::uint8_t>(ck.learner));
  const auto body = payload.take();

  BinaryWriter out;
  out.write_raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 4));
  out.write(kCheckpointVersion);
  out.write<std::uint64_t>(body.size());
  out.write(crc32_of(body));
  out.write_raw(body);
  return out.take();
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  BinaryReader head(bytes);
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  (void)head.read<std::uint32_t>();
  const auto version = head.read<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) + " is not supported (expected " + std::to_string(kCheckpointVersion) +
                      "); no migration exists");
  const auto length = head.read<std::uint64_t>();
  const auto crc = head.read<std::uint32_t>();
  if (length != head.remaining()) throw FormatError("checkpoint length mismatch (truncated or padded file)");
  const auto body = bytes.subspan(head.position());
  if (crc32_of(body) != crc) throw FormatError("checkpoint CRC mismatch (corrupted file)");
  BinaryReader in(body);
  Checkpoint ck;
  ck.config_text = in.read_string();
  ck.config_hash = in.read<std::uint64_t>();
  ck.compat_hash = in.read<std::uint64_t>();
  ck.env_steps = in.read<std::uint64_t>();
  ck.episodes = in.read<std::uint64_t>();
  ck.gradient_updates = in.read<std::uint64_t>();
  const auto n = in.read<std::uint64_t>();
  if (n > 4096) throw FormatError("implausible sampler count in checkpoint");
  for (std::uint64_t i = 0; i < n; ++i) ck.sampler_rng.push_back(in.read_string());
  ck.learner = in.read_array<std::uint8_t>();
  if (in.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
  return ck;
}

/// Written to a temporary name and renamed, so an interrupted save leaves the previous file intact.
inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto bytes = encode_checkpoint(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + tmp + "'");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pickplace::harness
