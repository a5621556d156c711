// Command-line driver: simulate, fit, eval, export-heatmap.
// Exit codes: 0 success (fit: converged), 2 fit stopped at max_iter, 1 error.

#include "dssfm/dssfm.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

using namespace dssfm;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

struct SimulateArgs {
  std::string scenario;
  std::string out;
  long long seed = -1;
};

int run_simulate(const SimulateArgs& a) {
  SimScenario sc = a.scenario.empty() ? SimScenario{} : load_scenario(a.scenario);
  if (a.seed >= 0) sc.seed = static_cast<std::uint64_t>(a.seed);
  const auto sim = simulate(sc);
  fs::create_directories(a.out);
  const fs::path d(a.out);
  save_panel((d / "panel.csv").string(), sim.panel);
  save_loadings((d / "loadings.csv").string(), sim.true_loadings);
  {
    auto out = csv::open_out((d / "factors.csv").string());
    write_matrix(out, sim.true_factors, "t", sim.panel.time_index, 0);
  }
  {
    auto out = csv::open_out((d / "metrics.csv").string());
    write_metrics(out, sim.true_loadings);
  }
  {
    auto out = csv::open_out((d / "scenario.cfg").string());
    write_scenario(out, sc);
  }
  std::cout << "simulated P=" << sc.p << " T=" << sim.panel.n_times() << " into " << a.out << '\n';
  return 0;
}

struct FitArgs {
  std::string panel;
  std::string config;
  std::string init = "svd_threshold";
  std::string init_path;
  int window = 100;
  bool varimax = false;
  std::string groups;
  bool standardize = false;
  bool timestamps = false;
  bool verbose = false;
  std::string out;
};

int run_fit(const FitArgs& a) {
  const ModelConfig cfg = validate_config(a.config.empty() ? ModelConfig{} : load_config(a.config));
  PanelOptions po;
  po.group_file = a.groups;
  po.standardize = a.standardize;
  const Panel panel = load_panel(a.panel, po);

  InitStrategy init;
  init.kind = parse_init_kind(a.init);
  init.path = a.init_path;
  init.window = a.window;
  init.varimax = a.varimax;
  if (init.kind == InitStrategy::Kind::warm_start_path && init.path.empty()) {
    throw ConfigError("--init warm_start_path needs --init-path");
  }

  FitOptions opts;
  if (a.verbose) {
    opts.on_iteration = [](int it, const LoadingsPath&, double obj) {
      std::cerr << "iteration " << it << " log posterior " << kv::format_double(obj) << '\n';
    };
  }
  const auto started = utc_now();
  const FitResult res = fit(panel, cfg, init, opts);

  Manifest m{{"panel", a.panel},
             {"init", a.init},
             {"init_window", std::to_string(a.window)},
             {"init_varimax", a.varimax ? "true" : "false"},
             {"seed", std::to_string(cfg.seed)}};
  if (!a.init_path.empty()) m.emplace_back("init_path", a.init_path);
  if (a.timestamps) {
    m.emplace_back("started", started);
    m.emplace_back("finished", utc_now());
  }
  write_fit_bundle(a.out, res, panel, cfg, m);
  if (panel.standardized()) {
    auto out = csv::open_out((fs::path(a.out) / "standardization.csv").string());
    out << "series,mean,sd\n";
    for (std::size_t j = 0; j < panel.n_series(); ++j) {
      out << panel.series_names[j] << ',' << kv::format_double(panel.standardization[j].first) << ','
          << kv::format_double(panel.standardization[j].second) << '\n';
    }
  }
  std::cout << (res.converged ? "converged" : "stopped at max_iter") << " after " << res.iterations_run
            << " iterations; K_hat(T) = " << count_active_factors(factor_block(res.loadings, res.loadings.n_times()))
            << '\n';
  return res.converged ? 0 : 2;
}

struct EvalArgs {
  std::string truth;
  std::string fit;
  std::string reference;
  std::string out;
  std::string summary;
  std::vector<int> segments;
  double threshold = kDefaultSupportThreshold;
};

// Segment starts on the panel axis: the scenario's break times shifted past
// any training prefix, or the whole range when no scenario is present.
std::vector<std::size_t> default_segments(const std::string& truth_dir, std::size_t t_len) {
  std::set<std::size_t> starts{1};
  const fs::path sc_path = fs::path(truth_dir) / "scenario.cfg";
  if (fs::exists(sc_path)) {
    const SimScenario sc = load_scenario(sc_path.string());
    const auto off = static_cast<std::size_t>(sc.train_len);
    if (off > 0) starts.insert(off + 1);
    for (const auto& b : sc.break_times) starts.insert(static_cast<std::size_t>(b.time) + off);
  }
  std::vector<std::size_t> out;
  for (auto s : starts)
    if (s <= t_len) out.push_back(s);
  return out;
}

int run_eval(const EvalArgs& a) {
  const LoadingsPath truth = load_loadings((fs::path(a.truth) / "loadings.csv").string());
  const LoadingsPath est = load_loadings((fs::path(a.fit) / "loadings.csv").string());
  const PathEval ev = evaluate_path(truth, est, a.threshold);
  std::optional<PathEval> ref;
  if (!a.reference.empty()) {
    ref = evaluate_path(truth, load_loadings((fs::path(a.reference) / "loadings.csv").string()), a.threshold);
  }
  const std::size_t t_len = truth.n_times();
  {
    auto out = csv::open_out(a.out);
    out << "t,rmse,k_true,k_hat,avg_active\n";
    for (std::size_t t = 1; t <= t_len; ++t) {
      out << t << ',' << kv::format_double(ev.rmse[t - 1]) << ',' << ev.k_true[t - 1] << ',' << ev.k_fit[t - 1] << ','
          << kv::format_double(ev.avg_fit[t - 1]) << '\n';
    }
  }
  std::vector<std::size_t> starts;
  if (a.segments.empty()) {
    starts = default_segments(a.truth, t_len);
  } else {
    for (int s : a.segments) {
      if (s < 1 || static_cast<std::size_t>(s) > t_len) throw DimensionError("segment start outside 1..T");
      starts.push_back(static_cast<std::size_t>(s));
    }
    std::sort(starts.begin(), starts.end());
    starts.erase(std::unique(starts.begin(), starts.end()), starts.end());
  }
  // Table layout: segment, RMSE, gain relative to the reference fit (percent,
  // 0 without one), average estimated factor count, average true count.
  std::ostringstream table;
  table << "segment,rmse,pct,k_hat,k_true\n";
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const std::size_t first = starts[i];
    const std::size_t last = i + 1 < starts.size() ? starts[i + 1] - 1 : t_len;
    const double r = segment_mean(ev.rmse, first, last);
    double pct = 0.0;
    if (ref) {
      const double rr = segment_mean(ref->rmse, first, last);
      pct = rr > 0.0 ? 100.0 * (r - rr) / rr : 0.0;
    }
    table << first << ':' << last << ',' << kv::format_double(r) << ',' << kv::format_double(pct) << ','
          << kv::format_double(segment_mean(ev.k_fit, first, last)) << ','
          << kv::format_double(segment_mean(ev.k_true, first, last)) << '\n';
  }
  if (!a.summary.empty()) {
    auto out = csv::open_out(a.summary);
    out << table.str();
  }
  std::cout << table.str();
  return 0;
}

struct HeatmapArgs {
  std::string fit;
  std::size_t time = 0;
  double cap = 0.5;
  std::string out;
};

int run_heatmap(const HeatmapArgs& a) {
  const fs::path d(a.fit);
  const LoadingsPath lp = load_loadings((d / "loadings.csv").string());
  const Matrix h = heatmap_slice(lp, a.time, a.cap);
  std::vector<std::string> names;
  const fs::path vol = d / "volatility.csv";
  if (fs::exists(vol)) {
    auto in = csv::open_in(vol.string());
    read_matrix(in, vol.string(), &names);
  }
  auto out = csv::open_out(a.out);
  write_matrix(out, h, "series", names, 0);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic sparse factor models: simulation, fitting and evaluation"};
  app.require_subcommand(1);

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic panel with known loadings");
  sim->add_option("--scenario", sa.scenario, "Scenario file (sim.* keys); defaults to the standard design")
      ->check(CLI::ExistingFile);
  sim->add_option("--seed", sa.seed, "Override the scenario seed");
  sim->add_option("--out", sa.out, "Output directory")->required();

  FitArgs fa;
  auto* fitc = app.add_subcommand("fit", "Estimate loadings, factors and volatilities");
  fitc->add_option("--panel", fa.panel, "Panel CSV (time column, then one column per series)")
      ->required()
      ->check(CLI::ExistingFile);
  fitc->add_option("--config", fa.config, "Model config file")->check(CLI::ExistingFile);
  fitc->add_option("--init", fa.init, "svd_threshold | warm_start_path | zeros");
  fitc->add_option("--init-path", fa.init_path, "Loadings file for warm_start_path");
  fitc->add_option("--window", fa.window, "Rolling SVD window length");
  fitc->add_flag("--varimax", fa.varimax, "Varimax-rotate each initial window");
  fitc->add_option("--groups", fa.groups, "series,group sidecar file")->check(CLI::ExistingFile);
  fitc->add_flag("--standardize", fa.standardize, "Centre and scale each series first");
  fitc->add_flag("--timestamps", fa.timestamps, "Record start and finish times in the manifest");
  fitc->add_flag("-v,--verbose", fa.verbose, "Print the objective after every iteration");
  fitc->add_option("--out", fa.out, "Output directory")->required();

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "Compare a fit against simulated truth");
  evalc->add_option("--truth", ea.truth, "Directory written by simulate")->required()->check(CLI::ExistingDirectory);
  evalc->add_option("--fit", ea.fit, "Directory written by fit")->required()->check(CLI::ExistingDirectory);
  evalc->add_option("--reference", ea.reference, "Second fit directory for the percentage column")
      ->check(CLI::ExistingDirectory);
  evalc->add_option("--out", ea.out, "Per-time table")->required();
  evalc->add_option("--summary", ea.summary, "Segment table (also printed)");
  evalc->add_option("--segments", ea.segments, "Segment start times")->delimiter(',');
  evalc->add_option("--threshold", ea.threshold, "Support threshold for counts and ordering");

  HeatmapArgs ha;
  auto* heat = app.add_subcommand("export-heatmap", "Write |B_t| for one time point");
  heat->add_option("--fit", ha.fit, "Directory written by fit or simulate")->required()->check(CLI::ExistingDirectory);
  heat->add_option("--time", ha.time, "Time index 1..T")->required();
  heat->add_option("--cap", ha.cap, "Display maximum");
  heat->add_option("--out", ha.out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*sim) return run_simulate(sa);
    if (*fitc) return run_fit(fa);
    if (*evalc) return run_eval(ea);
    if (*heat) return run_heatmap(ha);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
