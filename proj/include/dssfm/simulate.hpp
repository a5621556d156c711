#pragma once
// Synthetic panels with block-structured, AR-evolving loadings and
// scheduled factor deactivation / activation.

#include "dssfm/config.hpp"
#include "dssfm/types.hpp"

#include <algorithm>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace dssfm {

enum class BreakAction { deactivate, activate };

struct SimBreak {
  int time = 0;    // 1-based time at which the change takes effect
  int factor = 0;  // 0-based column
  BreakAction action = BreakAction::deactivate;
  friend bool operator==(const SimBreak&, const SimBreak&) = default;
};

struct SimScenario {
  int p = 100;
  int k_true = 5;
  int k_candidate = 10;
  int t_total = 400;
  std::vector<SimBreak> break_times{{101, 2, BreakAction::deactivate},
                                    {201, 4, BreakAction::deactivate},
                                    {301, 4, BreakAction::activate}};
  double ar_phi = 0.99;
  double ar_var = 0.0025;
  double beta_init = 2.0;
  int block = 28;
  int overlap = 10;
  int train_len = 0;
  std::uint64_t seed = 1;

  friend bool operator==(const SimScenario&, const SimScenario&) = default;
};

struct SimOutput {
  Panel panel;
  LoadingsPath true_loadings;  // over the returned panel's time axis
  Matrix true_factors;         // T x K
};

inline void validate_scenario(const SimScenario& sc) {
  auto fail = [](const std::string& m) { throw ConfigError("scenario: " + m); };
  if (sc.p <= 0 || sc.k_true < 0 || sc.k_candidate <= 0 || sc.t_total <= 0) fail("dimensions must be positive");
  if (sc.k_true > sc.k_candidate) fail("k_true exceeds k_candidate");
  if (sc.block <= 0 || sc.overlap < 0 || sc.overlap >= sc.block) fail("need 0 <= overlap < block");
  if (sc.k_true > 0 && sc.block * sc.k_true - sc.overlap * (sc.k_true - 1) > sc.p) {
    fail("block layout does not fit in p series");
  }
  if (sc.train_len < 0) fail("train_len negative");
  if (!(sc.ar_var >= 0.0)) fail("ar_var negative");
  int last = 0;
  for (const auto& b : sc.break_times) {
    if (b.time <= 1 || b.time > sc.t_total) fail("break time outside (1, t_total]");
    if (b.time < last) fail("break times not ordered");
    if (b.factor < 0 || b.factor >= sc.k_candidate) fail("break factor out of range");
    last = b.time;
  }
}

// First row of factor k's block; blocks step by (block - overlap).
inline int block_start(const SimScenario& sc, int k) { return k * (sc.block - sc.overlap); }

// Generates T + train_len observations. The training prefix uses the t = 1
// loadings; the returned path and panel cover the full length with the
// scheduled segment starting at index train_len + 1.
inline SimOutput simulate(const SimScenario& sc) {
  validate_scenario(sc);
  std::mt19937_64 rng(sc.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double innov_sd = std::sqrt(sc.ar_var);
  const int p = sc.p;
  const int k = sc.k_candidate;
  const int t_len = sc.t_total + sc.train_len;

  SimOutput out;
  out.true_loadings = LoadingsPath::zeros(static_cast<std::size_t>(t_len), static_cast<std::size_t>(p),
                                          static_cast<std::size_t>(k));
  // membership mask
  Matrix mask = Matrix::Zero(p, k);
  for (int f = 0; f < sc.k_true; ++f) {
    const int s = block_start(sc, f);
    for (int r = s; r < s + sc.block; ++r) mask(r, f) = 1.0;
  }
  std::vector<bool> active(static_cast<std::size_t>(k), false);
  for (int f = 0; f < sc.k_true; ++f) active[static_cast<std::size_t>(f)] = true;

  Matrix b = sc.beta_init * mask;
  std::size_t next_break = 0;
  for (int t = 1; t <= t_len; ++t) {
    const int sched_t = t - sc.train_len;  // time on the scenario's axis
    if (sched_t > 1) {
      for (int r = 0; r < p; ++r) {
        for (int f = 0; f < k; ++f) {
          if (mask(r, f) != 0.0 && active[static_cast<std::size_t>(f)]) {
            b(r, f) = sc.ar_phi * b(r, f) + innov_sd * normal(rng);
          }
        }
      }
      while (next_break < sc.break_times.size() && sc.break_times[next_break].time == sched_t) {
        const auto& br = sc.break_times[next_break++];
        const auto f = static_cast<std::size_t>(br.factor);
        if (br.action == BreakAction::deactivate) {
          active[f] = false;
          b.col(br.factor).setZero();
        } else {
          active[f] = true;
          // columns outside the true block structure get a block at the
          // same layout position
          if (mask.col(br.factor).sum() == 0.0) {
            const int s = std::min(block_start(sc, br.factor), p - sc.block);
            for (int r = s; r < s + sc.block; ++r) mask(r, br.factor) = 1.0;
          }
          b.col(br.factor) = sc.beta_init * mask.col(br.factor);
        }
      }
    }
    auto& bt = out.true_loadings.betas[static_cast<std::size_t>(t)];
    for (int f = 0; f < k; ++f) {
      if (active[static_cast<std::size_t>(f)]) bt.col(f) = b.col(f);
    }
    out.true_loadings.gammas[static_cast<std::size_t>(t)] = (bt.array() != 0.0).cast<double>().matrix();
  }
  out.true_loadings.betas[0] = out.true_loadings.betas[1];
  out.true_loadings.gammas[0] = out.true_loadings.gammas[1];
  for (auto& th : out.true_loadings.thetas) th = Matrix::Zero(p, k);

  out.true_factors.resize(t_len, k);
  out.panel.values.resize(p, t_len);
  for (int t = 0; t < t_len; ++t) {
    for (int f = 0; f < k; ++f) out.true_factors(t, f) = normal(rng);
    Vector eps(p);
    for (int r = 0; r < p; ++r) eps(r) = normal(rng);
    out.panel.values.col(t) =
        out.true_loadings.betas[static_cast<std::size_t>(t + 1)] * out.true_factors.row(t).transpose() + eps;
  }
  for (int r = 0; r < p; ++r) out.panel.series_names.push_back("y" + std::to_string(r + 1));
  for (int t = 1; t <= t_len; ++t) out.panel.time_index.push_back(std::to_string(t - sc.train_len));
  return out;
}

// ---------------------------------------------------------------------------
// Scenario files share the config format with "sim." keys. Breaks are a
// semicolon list of time:factor:action triples.

inline std::string format_breaks(const std::vector<SimBreak>& breaks) {
  std::string s;
  for (std::size_t i = 0; i < breaks.size(); ++i) {
    if (i) s += ';';
    s += std::to_string(breaks[i].time) + ':' + std::to_string(breaks[i].factor) + ':' +
         (breaks[i].action == BreakAction::deactivate ? "deactivate" : "activate");
  }
  return s;
}

inline std::vector<SimBreak> parse_breaks(const std::string& text) {
  std::vector<SimBreak> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    item = kv::trim(item);
    if (item.empty()) continue;
    const auto a = item.find(':');
    const auto b = item.find(':', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw ConfigError("sim.breaks: expected time:factor:action, got '" + item + "'");
    }
    SimBreak br;
    br.time = static_cast<int>(kv::parse_int("sim.breaks", kv::trim(item.substr(0, a))));
    br.factor = static_cast<int>(kv::parse_int("sim.breaks", kv::trim(item.substr(a + 1, b - a - 1))));
    const std::string act = kv::trim(item.substr(b + 1));
    if (act == "deactivate") br.action = BreakAction::deactivate;
    else if (act == "activate") br.action = BreakAction::activate;
    else throw ConfigError("sim.breaks: unknown action '" + act + "'");
    out.push_back(br);
  }
  return out;
}

inline void write_scenario(std::ostream& out, const SimScenario& sc) {
  using kv::format_double;
  out << "sim.p = " << sc.p << '\n'
      << "sim.k_true = " << sc.k_true << '\n'
      << "sim.k_candidate = " << sc.k_candidate << '\n'
      << "sim.t_total = " << sc.t_total << '\n'
      << "sim.breaks = " << format_breaks(sc.break_times) << '\n'
      << "sim.ar_phi = " << format_double(sc.ar_phi) << '\n'
      << "sim.ar_var = " << format_double(sc.ar_var) << '\n'
      << "sim.beta_init = " << format_double(sc.beta_init) << '\n'
      << "sim.block = " << sc.block << '\n'
      << "sim.overlap = " << sc.overlap << '\n'
      << "sim.train_len = " << sc.train_len << '\n'
      << "sim.seed = " << sc.seed << '\n';
}

inline SimScenario scenario_from_table(const kv::Table& table) {
  SimScenario sc;
  for (const auto& [key, value] : table) {
    if (key.rfind("sim.", 0) != 0) continue;
    const std::string k = key.substr(4);
    if (k == "p") sc.p = static_cast<int>(kv::parse_int(key, value));
    else if (k == "k_true") sc.k_true = static_cast<int>(kv::parse_int(key, value));
    else if (k == "k_candidate") sc.k_candidate = static_cast<int>(kv::parse_int(key, value));
    else if (k == "t_total") sc.t_total = static_cast<int>(kv::parse_int(key, value));
    else if (k == "breaks") sc.break_times = parse_breaks(value);
    else if (k == "ar_phi") sc.ar_phi = kv::parse_double(key, value);
    else if (k == "ar_var") sc.ar_var = kv::parse_double(key, value);
    else if (k == "beta_init") sc.beta_init = kv::parse_double(key, value);
    else if (k == "block") sc.block = static_cast<int>(kv::parse_int(key, value));
    else if (k == "overlap") sc.overlap = static_cast<int>(kv::parse_int(key, value));
    else if (k == "train_len") sc.train_len = static_cast<int>(kv::parse_int(key, value));
    else if (k == "seed") {
      const auto s = kv::parse_int(key, value);
      if (s < 0) throw ConfigError("sim.seed: must be non-negative");
      sc.seed = static_cast<std::uint64_t>(s);
    } else {
      throw ConfigError("unknown scenario key '" + key + "'");
    }
  }
  validate_scenario(sc);
  return sc;
}

inline SimScenario load_scenario(const std::string& path) { return scenario_from_table(kv::parse_file(path)); }

}  // namespace dssfm
