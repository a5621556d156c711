#pragma once
// ModelConfig validation and the flat `key = value` config format.

#include "dssfm/types.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

namespace dssfm {

namespace kv {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config key '" + key + "': not a number: '" + text + "'");
  }
  return value;
}

inline long long parse_int(const std::string& key, const std::string& text) {
  long long value = 0;
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) {
    throw ConfigError("config key '" + key + "': not an integer: '" + text + "'");
  }
  return value;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + text + "'");
}

using Table = std::map<std::string, std::string>;

// Lines of `key = value`; '#' starts a comment; blank lines ignored.
inline Table parse(std::istream& in) {
  Table table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(std::string_view(stripped).substr(0, eq));
    std::string value = trim(std::string_view(stripped).substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    if (!table.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  return table;
}

inline Table parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  return parse(in);
}

}  // namespace kv

// Returns cfg unchanged if every invariant holds; otherwise throws a
// ConfigError naming the first violated constraint.
inline ModelConfig validate_config(const ModelConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(cfg.theta > 0.0 && cfg.theta < 1.0)) fail("theta not in (0,1)");
  if (!(cfg.lambda0 > 0.0)) fail("lambda0 not positive");
  if (!(cfg.lambda1 > 0.0)) fail("lambda1 not positive");
  if (!std::isfinite(cfg.phi0)) fail("phi0 not finite");
  if (!(cfg.phi1 > -1.0 && cfg.phi1 < 1.0)) fail("phi1 not in (-1,1)");
  if (!(cfg.phi_tilde > 0.0 && cfg.phi_tilde < 1.0)) fail("phi_tilde not in (0,1)");
  if (!(cfg.sigma2_omega > 0.0)) fail("sigma2_omega not positive");
  if (cfg.rotation_scale != "none" && cfg.rotation_scale != "omega" && cfg.rotation_scale != "unit") {
    fail("rotation_scale must be none, omega or unit");
  }
  if (!(cfg.sigma2_floor >= 0.0) || !(cfg.sigma2_floor < 1.0)) fail("sigma2_floor must lie in [0, 1)");
  if (!(cfg.delta > 0.0 && cfg.delta <= 1.0)) fail("delta not in (0,1]");
  if (cfg.k_max <= 0) fail("k_max not positive");
  if (!(cfg.n0 > 0.0)) fail("n0 not positive");
  if (!(cfg.d0 > 0.0)) fail("d0 not positive");
  if (cfg.max_iter <= 0) fail("max_iter not positive");
  if (!(cfg.tol > 0.0)) fail("tol not positive");
  const double slab_var = cfg.lambda1 / (1.0 - cfg.phi1 * cfg.phi1);
  if (!(std::isfinite(slab_var) && slab_var > 0.0)) fail("stationary slab variance not finite and positive");
  return cfg;
}

inline void write_config(std::ostream& out, const ModelConfig& cfg) {
  using kv::format_double;
  out << "theta = " << format_double(cfg.theta) << '\n'
      << "lambda0 = " << format_double(cfg.lambda0) << '\n'
      << "lambda1 = " << format_double(cfg.lambda1) << '\n'
      << "phi0 = " << format_double(cfg.phi0) << '\n'
      << "phi1 = " << format_double(cfg.phi1) << '\n'
      << "phi_tilde = " << format_double(cfg.phi_tilde) << '\n'
      << "sigma2_omega = " << format_double(cfg.sigma2_omega) << '\n'
      << "delta = " << format_double(cfg.delta) << '\n'
      << "k_max = " << cfg.k_max << '\n'
      << "n0 = " << format_double(cfg.n0) << '\n'
      << "d0 = " << format_double(cfg.d0) << '\n'
      << "max_iter = " << cfg.max_iter << '\n'
      << "tol = " << format_double(cfg.tol) << '\n'
      << "seed = " << cfg.seed << '\n'
      << "intercept = " << (cfg.intercept ? "true" : "false") << '\n'
      << "random_walk_filter = " << (cfg.random_walk_filter ? "true" : "false") << '\n'
      << "rotation_phi_aware = " << (cfg.rotation_phi_aware ? "true" : "false") << '\n'
      << "px_rotation = " << (cfg.px_rotation ? "true" : "false") << '\n'
      << "eta0_at_limit = " << (cfg.eta0_at_limit ? "true" : "false") << '\n'
      << "sv_previous_sigma = " << (cfg.sv_previous_sigma ? "true" : "false") << '\n'
      << "sv_warm_start = " << (cfg.sv_warm_start ? "true" : "false") << '\n'
      << "rotation_scale = " << cfg.rotation_scale << '\n'
      << "sigma2_floor = " << kv::format_double(cfg.sigma2_floor) << '\n';
}

inline std::string to_string(const ModelConfig& cfg) {
  std::ostringstream out;
  write_config(out, cfg);
  return out.str();
}

// Reads the model keys from a parsed table. Keys outside the model set are
// ignored only if they carry a namespace prefix ("sim.", ...); unknown bare
// keys are an error. Missing keys keep their defaults.
inline ModelConfig config_from_table(const kv::Table& table) {
  ModelConfig cfg;
  for (const auto& [key, value] : table) {
    if (key == "theta") cfg.theta = kv::parse_double(key, value);
    else if (key == "lambda0") cfg.lambda0 = kv::parse_double(key, value);
    else if (key == "lambda1") cfg.lambda1 = kv::parse_double(key, value);
    else if (key == "phi0") cfg.phi0 = kv::parse_double(key, value);
    else if (key == "phi1") cfg.phi1 = kv::parse_double(key, value);
    else if (key == "phi_tilde") cfg.phi_tilde = kv::parse_double(key, value);
    else if (key == "sigma2_omega") cfg.sigma2_omega = kv::parse_double(key, value);
    else if (key == "delta") cfg.delta = kv::parse_double(key, value);
    else if (key == "k_max") cfg.k_max = static_cast<int>(kv::parse_int(key, value));
    else if (key == "n0") cfg.n0 = kv::parse_double(key, value);
    else if (key == "d0") cfg.d0 = kv::parse_double(key, value);
    else if (key == "max_iter") cfg.max_iter = static_cast<int>(kv::parse_int(key, value));
    else if (key == "tol") cfg.tol = kv::parse_double(key, value);
    else if (key == "seed") {
      const auto s = kv::parse_int(key, value);
      if (s < 0) throw ConfigError("config key 'seed': must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(s);
    }
    else if (key == "intercept") cfg.intercept = kv::parse_bool(key, value);
    else if (key == "random_walk_filter") cfg.random_walk_filter = kv::parse_bool(key, value);
    else if (key == "rotation_phi_aware") cfg.rotation_phi_aware = kv::parse_bool(key, value);
    else if (key == "px_rotation") cfg.px_rotation = kv::parse_bool(key, value);
    else if (key == "eta0_at_limit") cfg.eta0_at_limit = kv::parse_bool(key, value);
    else if (key == "sv_previous_sigma") cfg.sv_previous_sigma = kv::parse_bool(key, value);
    else if (key == "sv_warm_start") cfg.sv_warm_start = kv::parse_bool(key, value);
    else if (key == "rotation_scale") cfg.rotation_scale = value;
    else if (key == "sigma2_floor") cfg.sigma2_floor = kv::parse_double(key, value);
    else if (key.find('.') == std::string::npos) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  return cfg;
}

inline ModelConfig read_config(std::istream& in) { return config_from_table(kv::parse(in)); }

inline ModelConfig load_config(const std::string& path) {
  return config_from_table(kv::parse_file(path));
}

// FNV-1a over the canonical text form; recorded in run manifests.
inline std::uint64_t config_hash(const ModelConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : to_string(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace dssfm
