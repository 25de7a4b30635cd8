#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pickplace/common/binary_io.hpp"
#include "pickplace/physics/body.hpp"

namespace pickplace::physics {

// Flat body record, little-endian (see docs/formats.md):
//   u32 magic 'DBDY', u32 version, u32 topology (0 chain, 1 grid), u64 dim0, u64 dim1,
//   f64 spacing, f64 friction, f64 damping,
//   u64 particle count, then per particle 7 x f64: px py pz vx vy vz inverse_mass,
//   u64 constraint count, then per constraint: u64 a, u64 b, f64 rest_length, f64 stiffness.
inline constexpr std::uint32_t kBodyMagic = 0x59444244;  // "DBDY"
inline constexpr std::uint32_t kBodyVersion = 1;

inline void write_body(BinaryWriter& out, const DeformableBody& body) {
  out.write(kBodyMagic);
  out.write(kBodyVersion);
  if (const auto* chain = std::get_if<Chain>(&body.topology)) {
    out.write<std::uint32_t>(0);
    out.write<std::uint64_t>(chain->n);
    out.write<std::uint64_t>(0);
  } else {
    const auto& g = std::get<Grid>(body.topology);
    out.write<std::uint32_t>(1);
    out.write<std::uint64_t>(g.rows);
    out.write<std::uint64_t>(g.cols);
  }
  out.write(body.spacing);
  out.write(body.friction_coeff);
  out.write(body.damping);
  out.write<std::uint64_t>(body.particles.size());
  for (const auto& p : body.particles) {
    for (int k = 0; k < 3; ++k) out.write(p.position[k]);
    for (int k = 0; k < 3; ++k) out.write(p.velocity[k]);
    out.write(p.inverse_mass);
  }
  out.write<std::uint64_t>(body.constraints.size());
  for (const auto& c : body.constraints) {
    out.write<std::uint64_t>(c.a);
    out.write<std::uint64_t>(c.b);
    out.write(c.rest_length);
    out.write(c.stiffness);
  }
}

inline DeformableBody read_body(BinaryReader& in) {
  if (in.read<std::uint32_t>() != kBodyMagic) throw FormatError("not a body record");
  if (const auto v = in.read<std::uint32_t>(); v != kBodyVersion)
    throw FormatError("unsupported body record version " + std::to_string(v));
  DeformableBody body;
  const auto kind = in.read<std::uint32_t>();
  const auto d0 = in.read<std::uint64_t>();
  const auto d1 = in.read<std::uint64_t>();
  if (kind == 0) {
    body.topology = Chain{d0};
  } else if (kind == 1) {
    body.topology = Grid{d0, d1};
  } else {
    throw FormatError("unknown topology tag");
  }
  body.spacing = in.read<double>();
  body.friction_coeff = in.read<double>();
  body.damping = in.read<double>();
  const auto n = in.read<std::uint64_t>();
  if (n > in.remaining() / (7 * sizeof(double))) throw FormatError("particle count exceeds record");
  body.particles.resize(n);
  for (auto& p : body.particles) {
    for (int k = 0; k < 3; ++k) p.position[k] = in.read<double>();
    for (int k = 0; k < 3; ++k) p.velocity[k] = in.read<double>();
    p.inverse_mass = in.read<double>();
  }
  const auto m = in.read<std::uint64_t>();
  if (m > in.remaining() / 32) throw FormatError("constraint count exceeds record");
  body.constraints.resize(m);
  for (auto& c : body.constraints) {
    c.a = in.read<std::uint64_t>();
    c.b = in.read<std::uint64_t>();
    c.rest_length = in.read<double>();
    c.stiffness = in.read<double>();
  }
  try {
    validate(body);
  } catch (const ConstructionError& e) {
    throw FormatError(std::string("invalid body record: ") + e.what());
  }
  return body;
}

inline std::vector<std::uint8_t> to_bytes(const DeformableBody& body) {
  BinaryWriter out;
  write_body(out, body);
  return out.take();
}

inline DeformableBody from_bytes(std::span<const std::uint8_t> bytes) {
  BinaryReader in(bytes);
  return read_body(in);
}

}  // namespace pickplace::physics
