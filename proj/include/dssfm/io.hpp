#pragma once
// CSV ingestion, standardization, and the export formats for fitted paths.
// Doubles are written in shortest round-trip form so re-import is exact and
// exports are byte-deterministic.

#include "dssfm/config.hpp"
#include "dssfm/metrics.hpp"
#include "dssfm/types.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace dssfm {

namespace csv {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(kv::trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(kv::trim(cur));
  return cells;
}

inline bool try_parse(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (*begin == '+') ++begin;
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

inline double cell(const std::string& text, std::size_t row, std::size_t col, const std::string& file) {
  double v = 0.0;
  if (text.empty()) {
    throw IoError(file + ": missing value at row " + std::to_string(row) + ", column " + std::to_string(col));
  }
  if (!try_parse(text, v)) {
    throw IoError(file + ": non-numeric cell '" + text + "' at row " + std::to_string(row) + ", column " +
                  std::to_string(col));
  }
  return v;
}

inline long long integer_cell(const std::string& text, std::size_t row, const std::string& file) {
  long long v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw IoError(file + ": expected integer at row " + std::to_string(row) + ", got '" + text + "'");
  }
  return v;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open file: " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write file: " + path);
  return out;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Panels

struct PanelOptions {
  std::string group_file;  // optional "series,group" sidecar
  bool standardize = false;
};

inline Panel standardize(const Panel& panel);

inline void read_group_labels(Panel& panel, const std::string& path) {
  auto in = csv::open_in(path);
  std::map<std::string, std::string> groups;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (kv::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (cells.size() != 2) throw IoError(path + ": expected 'series,group' at row " + std::to_string(row));
    if (row == 1 && cells[0] == "series") continue;
    groups[cells[0]] = cells[1];
  }
  panel.group_labels.clear();
  for (const auto& name : panel.series_names) {
    auto it = groups.find(name);
    if (it == groups.end()) throw IoError(path + ": no group label for series '" + name + "'");
    panel.group_labels.push_back(it->second);
  }
}

// Rectangular CSV: header row of series names after a time column, then one
// row per time point.
inline Panel read_panel(std::istream& in, const std::string& name = "panel") {
  std::string line;
  if (!std::getline(in, line)) throw IoError(name + ": empty file");
  auto header = csv::split(line);
  if (header.size() < 2) throw IoError(name + ": header needs a time column and at least one series");
  Panel panel;
  panel.series_names.assign(header.begin() + 1, header.end());
  std::set<std::string> seen;
  for (const auto& s : panel.series_names) {
    if (s.empty()) throw IoError(name + ": empty series name in header");
    if (!seen.insert(s).second) throw IoError(name + ": duplicate series name '" + s + "'");
  }
  const std::size_t p = panel.series_names.size();
  std::vector<std::vector<double>> cols;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (kv::trim(line).empty()) continue;
    auto cells = csv::split(line);
    if (cells.size() != p + 1) {
      throw IoError(name + ": ragged row " + std::to_string(row) + " (" + std::to_string(cells.size()) +
                    " cells, expected " + std::to_string(p + 1) + ")");
    }
    panel.time_index.push_back(cells[0]);
    std::vector<double> vals(p);
    for (std::size_t j = 0; j < p; ++j) vals[j] = csv::cell(cells[j + 1], row, j + 2, name);
    cols.push_back(std::move(vals));
  }
  const auto t_len = static_cast<Eigen::Index>(cols.size());
  panel.values.resize(static_cast<Eigen::Index>(p), t_len);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    for (std::size_t j = 0; j < p; ++j) panel.values(static_cast<Eigen::Index>(j), t) = cols[t][j];
  }
  return panel;
}

inline Panel load_panel(const std::string& path, const PanelOptions& opt = {}) {
  auto in = csv::open_in(path);
  Panel panel = read_panel(in, path);
  if (!opt.group_file.empty()) read_group_labels(panel, opt.group_file);
  return opt.standardize ? standardize(panel) : panel;
}

inline void write_panel(std::ostream& out, const Panel& panel) {
  const auto p = panel.values.rows();
  const auto t_len = panel.values.cols();
  out << "time";
  for (Eigen::Index j = 0; j < p; ++j) {
    out << ',' << (static_cast<std::size_t>(j) < panel.series_names.size() ? panel.series_names[j]
                                                                            : "y" + std::to_string(j + 1));
  }
  out << '\n';
  for (Eigen::Index t = 0; t < t_len; ++t) {
    out << (static_cast<std::size_t>(t) < panel.time_index.size() ? panel.time_index[t] : std::to_string(t + 1));
    for (Eigen::Index j = 0; j < p; ++j) out << ',' << kv::format_double(panel.values(j, t));
    out << '\n';
  }
}

inline void save_panel(const std::string& path, const Panel& panel) {
  auto out = csv::open_out(path);
  write_panel(out, panel);
}

// Centres each series and scales it to unit sample standard deviation
// (divisor T-1). The applied (mean, sd) pairs are recorded on the result.
inline Panel standardize(const Panel& panel) {
  const auto p = panel.values.rows();
  const auto t_len = panel.values.cols();
  if (t_len < 2) throw DimensionError("standardize: need at least two time points");
  Panel out = panel;
  out.standardization.clear();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double mean = panel.values.row(j).mean();
    const double ss = (panel.values.row(j).array() - mean).square().sum();
    const double sd = std::sqrt(ss / static_cast<double>(t_len - 1));
    if (!(sd > 0.0)) {
      const std::string nm = static_cast<std::size_t>(j) < panel.series_names.size() ? panel.series_names[j]
                                                                                      : std::to_string(j);
      throw NumericalError("standardize: series '" + nm + "' has zero variance");
    }
    out.values.row(j) = (panel.values.row(j).array() - mean) / sd;
    out.standardization.emplace_back(mean, sd);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loadings: long format "t,j,k,value,gamma,theta" preceded by a dimension line.

inline void write_loadings(std::ostream& out, const LoadingsPath& lp) {
  const auto p = static_cast<Eigen::Index>(lp.n_series());
  const auto k = static_cast<Eigen::Index>(lp.n_columns());
  out << "# loadings T=" << lp.n_times() << " P=" << p << " K=" << k << " intercept=" << (lp.intercept ? 1 : 0)
      << '\n';
  out << "t,j,k,value,gamma,theta\n";
  for (std::size_t t = 0; t < lp.betas.size(); ++t) {
    const bool has_g = t < lp.gammas.size() && lp.gammas[t].size() != 0;
    const bool has_th = t < lp.thetas.size() && lp.thetas[t].size() != 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index c = 0; c < k; ++c) {
        out << t << ',' << j << ',' << c << ',' << kv::format_double(lp.betas[t](j, c)) << ','
            << kv::format_double(has_g ? lp.gammas[t](j, c) : 0.0) << ','
            << kv::format_double(has_th ? lp.thetas[t](j, c) : 0.0) << '\n';
      }
    }
  }
}

inline LoadingsPath read_loadings(std::istream& in, const std::string& name = "loadings") {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# loadings", 0) != 0) {
    throw IoError(name + ": missing '# loadings' dimension line");
  }
  std::size_t t_len = 0, p = 0, k = 0;
  int icpt = 0;
  {
    std::istringstream hs(line.substr(10));
    std::string tok;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw IoError(name + ": malformed dimension line");
      const std::string key = tok.substr(0, eq);
      const auto val = csv::integer_cell(tok.substr(eq + 1), 1, name);
      if (val < 0) throw IoError(name + ": negative dimension");
      if (key == "T") t_len = static_cast<std::size_t>(val);
      else if (key == "P") p = static_cast<std::size_t>(val);
      else if (key == "K") k = static_cast<std::size_t>(val);
      else if (key == "intercept") icpt = static_cast<int>(val);
    }
  }
  if (!std::getline(in, line) || kv::trim(line) != "t,j,k,value,gamma,theta") {
    throw IoError(name + ": unexpected column header");
  }
  LoadingsPath lp = LoadingsPath::zeros(t_len, p, k, icpt != 0);
  std::size_t row = 2, count = 0;
  while (std::getline(in, line)) {
    ++row;
    if (kv::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (cells.size() != 6) throw IoError(name + ": ragged row " + std::to_string(row));
    const auto t = csv::integer_cell(cells[0], row, name);
    const auto j = csv::integer_cell(cells[1], row, name);
    const auto c = csv::integer_cell(cells[2], row, name);
    if (t < 0 || j < 0 || c < 0 || static_cast<std::size_t>(t) > t_len || static_cast<std::size_t>(j) >= p ||
        static_cast<std::size_t>(c) >= k) {
      throw IoError(name + ": index out of range at row " + std::to_string(row));
    }
    lp.betas[t](j, c) = csv::cell(cells[3], row, 4, name);
    lp.gammas[t](j, c) = csv::cell(cells[4], row, 5, name);
    lp.thetas[t](j, c) = csv::cell(cells[5], row, 6, name);
    ++count;
  }
  if (count != (t_len + 1) * p * k) throw IoError(name + ": expected " + std::to_string((t_len + 1) * p * k) +
                                                  " rows, found " + std::to_string(count));
  return lp;
}

inline void save_loadings(const std::string& path, const LoadingsPath& lp) {
  auto out = csv::open_out(path);
  write_loadings(out, lp);
}

inline LoadingsPath load_loadings(const std::string& path) {
  auto in = csv::open_in(path);
  return read_loadings(in, path);
}

// ---------------------------------------------------------------------------
// Dense matrices (volatility P x T, factors T x K): header of column labels,
// one row per matrix row, first cell the row label.

inline void write_matrix(std::ostream& out, const Matrix& m, const std::string& corner,
                         const std::vector<std::string>& row_labels = {}, int col_base = 1) {
  out << corner;
  for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << (c + col_base);
  out << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out << (static_cast<std::size_t>(r) < row_labels.size() ? row_labels[r] : std::to_string(r));
    for (Eigen::Index c = 0; c < m.cols(); ++c) out << ',' << kv::format_double(m(r, c));
    out << '\n';
  }
}

inline Matrix read_matrix(std::istream& in, const std::string& name, std::vector<std::string>* row_labels = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw IoError(name + ": empty file");
  const std::size_t n_cols = csv::split(line).size() - 1;
  std::vector<std::vector<double>> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (kv::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (cells.size() != n_cols + 1) throw IoError(name + ": ragged row " + std::to_string(row));
    if (row_labels) row_labels->push_back(cells[0]);
    std::vector<double> vals(n_cols);
    for (std::size_t c = 0; c < n_cols; ++c) vals[c] = csv::cell(cells[c + 1], row, c + 2, name);
    rows.push_back(std::move(vals));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < n_cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

inline void save_volatility(const std::string& path, const VolatilityPath& v,
                            const std::vector<std::string>& names = {}) {
  auto out = csv::open_out(path);
  write_matrix(out, v.sigma2, "series", names);
}

inline VolatilityPath load_volatility(const std::string& path) {
  auto in = csv::open_in(path);
  VolatilityPath v;
  v.sigma2 = read_matrix(in, path);
  return v;
}

// ---------------------------------------------------------------------------
// Smoothed moments: long format "kind,t,a,b,value" with kind in
// {mean, cov, lag}; mean rows use b = 0.

inline void write_moments(std::ostream& out, const SmoothedMoments& m) {
  out << "# moments T=" << m.n_times() << " K=" << m.dim() << '\n';
  out << "kind,t,a,b,value\n";
  const auto k = static_cast<Eigen::Index>(m.dim());
  for (std::size_t t = 0; t < m.means.size(); ++t) {
    for (Eigen::Index a = 0; a < k; ++a) out << "mean," << t << ',' << a << ",0," << kv::format_double(m.means[t](a)) << '\n';
  }
  for (std::size_t t = 0; t < m.covs.size(); ++t) {
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) {
        out << "cov," << t << ',' << a << ',' << b << ',' << kv::format_double(m.covs[t](a, b)) << '\n';
      }
    }
  }
  for (std::size_t t = 1; t <= m.lag_covs.size(); ++t) {
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) {
        out << "lag," << t << ',' << a << ',' << b << ',' << kv::format_double(m.lag_covs[t - 1](a, b)) << '\n';
      }
    }
  }
}

inline SmoothedMoments read_moments(std::istream& in, const std::string& name = "moments") {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# moments", 0) != 0) throw IoError(name + ": missing dimension line");
  std::size_t t_len = 0, k = 0;
  {
    std::istringstream hs(line.substr(9));
    std::string tok;
    while (hs >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw IoError(name + ": malformed dimension line");
      const auto val = csv::integer_cell(tok.substr(eq + 1), 1, name);
      if (tok.substr(0, eq) == "T") t_len = static_cast<std::size_t>(val);
      else if (tok.substr(0, eq) == "K") k = static_cast<std::size_t>(val);
    }
  }
  std::getline(in, line);
  const auto kk = static_cast<Eigen::Index>(k);
  SmoothedMoments m;
  m.means.assign(t_len + 1, Vector::Zero(kk));
  m.covs.assign(t_len + 1, Matrix::Zero(kk, kk));
  m.lag_covs.assign(t_len, Matrix::Zero(kk, kk));
  std::size_t row = 2;
  while (std::getline(in, line)) {
    ++row;
    if (kv::trim(line).empty()) continue;
    const auto cells = csv::split(line);
    if (cells.size() != 5) throw IoError(name + ": ragged row " + std::to_string(row));
    const auto t = static_cast<std::size_t>(csv::integer_cell(cells[1], row, name));
    const auto a = csv::integer_cell(cells[2], row, name);
    const auto b = csv::integer_cell(cells[3], row, name);
    const double v = csv::cell(cells[4], row, 5, name);
    if (a < 0 || b < 0 || a >= kk || b >= kk) throw IoError(name + ": index out of range at row " + std::to_string(row));
    if (cells[0] == "mean" && t <= t_len) m.means[t](a) = v;
    else if (cells[0] == "cov" && t <= t_len) m.covs[t](a, b) = v;
    else if (cells[0] == "lag" && t >= 1 && t <= t_len) m.lag_covs[t - 1](a, b) = v;
    else throw IoError(name + ": bad row " + std::to_string(row));
  }
  return m;
}

inline void save_moments(const std::string& path, const SmoothedMoments& m) {
  auto out = csv::open_out(path);
  write_moments(out, m);
}

inline SmoothedMoments load_moments(const std::string& path) {
  auto in = csv::open_in(path);
  return read_moments(in, path);
}

// ---------------------------------------------------------------------------
// Manifest: flat key = value text, including the resolved model config.

using Manifest = std::vector<std::pair<std::string, std::string>>;

inline void save_manifest(const std::string& path, const Manifest& entries, const ModelConfig* cfg = nullptr) {
  auto out = csv::open_out(path);
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
  if (cfg) {
    std::istringstream cs(to_string(*cfg));
    std::string line;
    while (std::getline(cs, line)) out << "config." << line << '\n';
  }
}

inline kv::Table load_manifest(const std::string& path) { return kv::parse_file(path); }

// Model config stored in a manifest under "config." keys.
inline ModelConfig manifest_config(const kv::Table& table) {
  kv::Table sub;
  for (const auto& [k, v] : table) {
    if (k.rfind("config.", 0) == 0) sub.emplace(k.substr(7), v);
  }
  return config_from_table(sub);
}

// ---------------------------------------------------------------------------
// Fit bundle: one directory per run.

inline std::string hex_hash(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline void write_metrics(std::ostream& out, const LoadingsPath& lp, double threshold = kDefaultSupportThreshold) {
  out << "t,k_hat,avg_active\n";
  for (std::size_t t = 1; t <= lp.n_times(); ++t) {
    const Matrix b = factor_block(lp, t);
    out << t << ',' << count_active_factors(b, threshold) << ',' << kv::format_double(avg_active_per_series(b, threshold))
        << '\n';
  }
}

inline void write_trace(std::ostream& out, const FitResult& res) {
  out << "iteration,log_posterior,surrogate\n";
  for (std::size_t i = 0; i < res.objective_trace.size(); ++i) {
    out << (i + 1) << ',' << kv::format_double(res.objective_trace[i]) << ','
        << (i < res.surrogate_trace.size() ? kv::format_double(res.surrogate_trace[i]) : std::string("nan")) << '\n';
  }
}

// Writes loadings, volatility, moments, metrics, trace and manifest files.
// `extra` entries go to the manifest ahead of the run summary.
inline void write_fit_bundle(const std::string& dir, const FitResult& res, const Panel& panel, const ModelConfig& cfg,
                             const Manifest& extra = {}) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  save_loadings((d / "loadings.csv").string(), res.loadings);
  save_volatility((d / "volatility.csv").string(), res.volatility, panel.series_names);
  save_moments((d / "moments.csv").string(), res.moments);
  {
    auto out = csv::open_out((d / "metrics.csv").string());
    write_metrics(out, res.loadings);
  }
  {
    auto out = csv::open_out((d / "trace.csv").string());
    write_trace(out, res);
  }
  Manifest m = extra;
  m.emplace_back("config_hash", hex_hash(config_hash(cfg)));
  m.emplace_back("series", std::to_string(panel.n_series()));
  m.emplace_back("times", std::to_string(panel.n_times()));
  m.emplace_back("standardized", panel.standardized() ? "true" : "false");
  m.emplace_back("sd_divisor", "T-1");
  m.emplace_back("iterations", std::to_string(res.iterations_run));
  m.emplace_back("converged", res.converged ? "true" : "false");
  m.emplace_back("fallback_updates", std::to_string(res.fallback_updates));
  m.emplace_back("volatility_rejections", std::to_string(res.volatility_rejections));
  if (!res.objective_trace.empty()) m.emplace_back("log_posterior", kv::format_double(res.objective_trace.back()));
  save_manifest((d / "manifest.txt").string(), m, &cfg);
}

struct FitBundle {
  LoadingsPath loadings;
  VolatilityPath volatility;
  SmoothedMoments moments;
  kv::Table manifest;
};

inline FitBundle read_fit_bundle(const std::string& dir) {
  const std::filesystem::path d(dir);
  FitBundle b;
  b.loadings = load_loadings((d / "loadings.csv").string());
  b.volatility = load_volatility((d / "volatility.csv").string());
  b.moments = load_moments((d / "moments.csv").string());
  b.manifest = load_manifest((d / "manifest.txt").string());
  return b;
}

}  // namespace dssfm
