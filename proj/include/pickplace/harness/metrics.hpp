#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pickplace/common/error.hpp"
#include "pickplace/harness/config.hpp"

namespace pickplace::harness {

/// One evaluation point of a training run. Wall-clock time goes to timing.csv so this file stays reproducible.
struct MetricsRow {
  long long env_steps = 0;
  long long episodes = 0;
  long long gradient_updates = 0;
  double eval_return_mean = 0.0;
  double eval_return_std = 0.0;
  double eval_coverage_mean = 0.0;
  double eval_coverage_std = 0.0;
  double critic1_loss = 0.0;  // means over the updates since the previous row
  double critic2_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  std::uint64_t config_hash = 0;
};

inline const char* kMetricsHeader =
    "env_steps,episodes,gradient_updates,eval_return_mean,eval_return_std,eval_coverage_mean,eval_coverage_std,"
    "critic1_loss,critic2_loss,actor_loss,alpha_loss,alpha,config_hash";

inline std::string to_csv_line(const MetricsRow& r) {
  using detail::fmt_double;
  return std::to_string(r.env_steps) + "," + std::to_string(r.episodes) + "," + std::to_string(r.gradient_updates) + "," +
         fmt_double(r.eval_return_mean) + "," + fmt_double(r.eval_return_std) + "," + fmt_double(r.eval_coverage_mean) + "," +
         fmt_double(r.eval_coverage_std) + "," + fmt_double(r.critic1_loss) + "," + fmt_double(r.critic2_loss) + "," +
         fmt_double(r.actor_loss) + "," + fmt_double(r.alpha_loss) + "," + fmt_double(r.alpha) + "," + hex64(r.config_hash);
}

/// Appends rows and enforces strictly increasing env_steps.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write '" + path + "'");
    out_ << kMetricsHeader << "\n";
    out_.flush();
  }
  void append(const MetricsRow& r) {
    if (last_ && r.env_steps <= *last_) throw std::logic_error("metrics rows must have strictly increasing env_steps");
    last_ = r.env_steps;
    out_ << to_csv_line(r) << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
  std::optional<long long> last_;
};

/// Minimal CSV table: header names plus string cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("CSV has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = detail::split(line, ',');
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size()) throw FormatError(path + ": row has " + std::to_string(cells.size()) + " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  if (t.header.empty()) throw FormatError(path + ": empty CSV");
  return t;
}

/// Step-indexed series of one metric from one run.
struct Series {
  std::string name;
  std::vector<long long> steps;
  std::vector<double> values;
};

inline Series read_series(const std::string& path, const std::string& column) {
  const auto t = read_csv(path);
  const auto cs = t.column("env_steps"), cv = t.column(column);
  Series s;
  for (const auto& r : t.rows) {
    s.steps.push_back(detail::parse_int<long long>("env_steps", r[cs]));
    s.values.push_back(detail::parse_double(column, r[cv]));
    if (s.steps.size() > 1 && s.steps.back() <= s.steps[s.steps.size() - 2]) throw FormatError(path + ": env_steps not increasing");
  }
  return s;
}

/// Merges runs on the union of their step grids. A run contributes its most recent value at or before each step
/// (nothing before its first row). mean and std (sample, n - 1) are over the contributing runs.
inline std::string export_curves(const std::vector<std::string>& paths, const std::string& column = "eval_return_mean") {
  if (paths.empty()) throw std::invalid_argument("export-curves needs at least one metrics file");
  std::vector<Series> runs;
  for (const auto& p : paths) runs.push_back(read_series(p, column));
  // Column names: parent directory when those are distinct, otherwise run0..runN.
  std::vector<std::string> names;
  for (const auto& p : paths) names.push_back(std::filesystem::path(p).parent_path().filename().string());
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  const bool unique = std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end() &&
                      std::none_of(names.begin(), names.end(), [](const std::string& n) { return n.empty(); });
  for (std::size_t i = 0; i < names.size(); ++i)
    if (!unique) names[i] = "run" + std::to_string(i);

  std::vector<long long> grid;
  for (const auto& r : runs) grid.insert(grid.end(), r.steps.begin(), r.steps.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  std::string out = "env_steps";
  for (const auto& n : names) out += "," + n;
  out += ",mean,std\n";
  std::vector<std::size_t> cursor(runs.size(), 0);
  for (long long step : grid) {
    out += std::to_string(step);
    std::vector<double> vals;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      auto& c = cursor[i];
      while (c < runs[i].steps.size() && runs[i].steps[c] <= step) ++c;
      out += ",";
      if (c > 0) {
        vals.push_back(runs[i].values[c - 1]);
        out += detail::fmt_double(vals.back());
      }
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    out += "," + detail::fmt_double(mean) + ",";
    if (vals.size() > 1) {
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      out += detail::fmt_double(std::sqrt(ss / static_cast<double>(vals.size() - 1)));
    }
    out += "\n";
  }
  return out;
}

}  // namespace pickplace::harness
