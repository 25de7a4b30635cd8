#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pickplace/envs/env.hpp"
#include "pickplace/harness/config.hpp"
#include "pickplace/render/png.hpp"

namespace pickplace::harness {

struct TraceStep {
  envs::Pick pick;
  physics::Vec2 place = physics::Vec2::Zero();
  double reward = 0.0;
  double coverage = 0.0;
  bool pick_on_object = false;
};

/// One evaluation episode: enough to re-simulate it exactly.
struct Trace {
  std::string config_text;
  std::uint64_t episode_seed = 0;
  std::vector<TraceStep> steps;
};

inline const char* kTraceHeader = "step,pick_type,pick_a,pick_b,place_x,place_y,reward,coverage,pick_on_object";

inline std::string to_text(const Trace& t) {
  using detail::fmt_double;
  std::string out;
  std::istringstream cfg(t.config_text);
  std::string line;
  while (std::getline(cfg, line))
    if (!line.empty()) out += "#config " + line + "\n";
  out += "#episode_seed " + std::to_string(t.episode_seed) + "\n";
  out += std::string(kTraceHeader) + "\n";
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    std::string type, a, b;
    if (const auto* p = std::get_if<envs::ParticlePick>(&s.pick)) {
      type = "particle";
      a = std::to_string(p->index);
      b = "0";
    } else if (const auto* px = std::get_if<render::Pixel>(&s.pick)) {
      type = "pixel";
      a = std::to_string(px->row);
      b = std::to_string(px->col);
    } else {
      const auto& pt = std::get<envs::PointPick>(s.pick);
      type = "point";
      a = fmt_double(pt.xy.x());
      b = fmt_double(pt.xy.y());
    }
    out += std::to_string(i) + "," + type + "," + a + "," + b + "," + fmt_double(s.place.x()) + "," + fmt_double(s.place.y()) + "," +
           fmt_double(s.reward) + "," + fmt_double(s.coverage) + "," + (s.pick_on_object ? "1" : "0") + "\n";
  }
  return out;
}

inline Trace parse_trace(const std::string& text) {
  Trace t;
  std::istringstream in(text);
  std::string line;
  bool header = false, seed = false;
  while (std::getline(in, line)) {
    if (line.rfind("#config ", 0) == 0) {
      t.config_text += line.substr(8) + "\n";
      continue;
    }
    if (line.rfind("#episode_seed ", 0) == 0) {
      t.episode_seed = detail::parse_int<std::uint64_t>("episode_seed", line.substr(14));
      seed = true;
      continue;
    }
    if (line.empty()) continue;
    if (!header) {
      if (line != kTraceHeader) throw FormatError("trace: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto c = detail::split(line, ',');
    if (c.size() != 9) throw FormatError("trace: row needs 9 cells");
    TraceStep s;
    if (c[1] == "particle") s.pick = envs::ParticlePick{detail::parse_int<std::size_t>("pick_a", c[2])};
    else if (c[1] == "pixel") s.pick = render::Pixel{detail::parse_int<int>("pick_a", c[2]), detail::parse_int<int>("pick_b", c[3])};
    else if (c[1] == "point") s.pick = envs::PointPick{{detail::parse_double("pick_a", c[2]), detail::parse_double("pick_b", c[3])}};
    else throw FormatError("trace: unknown pick type '" + c[1] + "'");
    s.place = {detail::parse_double("place_x", c[4]), detail::parse_double("place_y", c[5])};
    s.reward = detail::parse_double("reward", c[6]);
    s.coverage = detail::parse_double("coverage", c[7]);
    s.pick_on_object = c[8] == "1";
    t.steps.push_back(s);
  }
  if (!header || !seed) throw FormatError("trace: missing header or episode seed");
  return t;
}

inline void write_trace(const std::string& path, const Trace& t) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  f << to_text(t);
}

inline Trace read_trace(const std::string& path) { return parse_trace(read_text_file(path)); }

struct ReplayReport {
  std::size_t steps = 0;
  double max_reward_error = 0.0;
  double max_coverage_error = 0.0;
  [[nodiscard]] bool exact() const { return max_reward_error == 0.0 && max_coverage_error == 0.0; }
};

/// Re-simulates a trace from its recorded config and seed; optionally writes one PNG per state.
inline ReplayReport replay_trace(const Trace& t, const std::string& frames_dir = {}, int upscale = 4) {
  const auto cfg = parse_config_text(t.config_text);
  envs::PickPlaceEnv env(cfg.env);
  env.reset(t.episode_seed);
  const auto frame = [&](std::size_t i) {
    if (frames_dir.empty()) return;
    char name[32];
    std::snprintf(name, sizeof name, "/frame_%04zu.png", i);
    render::write_png(frames_dir + name,
                      render::upscale(render::rasterize(env.body(), env.camera(), env.episode_params().style), upscale));
  };
  frame(0);
  ReplayReport r;
  for (const auto& s : t.steps) {
    if (env.done()) throw FormatError("trace is longer than the episode horizon");
    const auto res = env.step({s.pick, s.place});
    r.max_reward_error = std::max(r.max_reward_error, std::abs(res.reward - s.reward));
    r.max_coverage_error = std::max(r.max_coverage_error, std::abs(res.info.coverage - s.coverage));
    ++r.steps;
    frame(r.steps);
  }
  return r;
}

}  // namespace pickplace::harness
