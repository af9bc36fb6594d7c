#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "charter/accounting.hpp"
#include "charter/dpsgd.hpp"
#include "charter/errors.hpp"
#include "charter/orchestrator.hpp"
#include "charter/problems.hpp"
#include "charter/vaidya.hpp"

namespace charter {

// ---- Flat key=value config -------------------------------------------------
//
// Grammar: one `section.key = value` per line; '#' starts a comment; blank
// lines are skipped. List values are comma-separated. Unknown keys are
// rejected so typos cannot silently change an experiment.

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::map<std::string, std::string> parse_config_text(
    const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigRejected("config line " + std::to_string(lineno) +
                           ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigRejected("config line " + std::to_string(lineno) +
                           ": empty key or value");
    if (kv.count(key))
      throw ConfigRejected("config: duplicate key '" + key + "'");
    kv[key] = value;
  }
  return kv;
}

inline double parse_double_value(const std::string& key,
                                 const std::string& value) {
  if (value == "inf" || value == "INF" || value == "Inf")
    return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigRejected("config: key '" + key + "' has non-numeric value '" +
                         value + "'");
  }
}

inline std::int64_t parse_int_value(const std::string& key,
                                    const std::string& value) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigRejected("config: key '" + key + "' has non-integer value '" +
                         value + "'");
  }
}

inline bool parse_bool_value(const std::string& key,
                             const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigRejected("config: key '" + key + "' expects true/false");
}

template <typename T, typename Parse>
std::vector<T> parse_list_value(const std::string& key,
                                const std::string& value, Parse parse) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw ConfigRejected("config: key '" + key + "' has an empty list item");
    out.push_back(parse(key, item));
  }
  if (out.empty())
    throw ConfigRejected("config: key '" + key + "' has an empty list");
  return out;
}

// Full experiment description. Sweep axes default to singletons taken
// from the base run values. The problem key defaults here (not in
// ProblemSpec, where an empty key must stay an error) so that file-less
// CLI invocations agree with the config-file default.
struct ExperimentConfig {
  ProblemSpec problem{.key = "max_abs"};
  int d = 2;
  int M = 1;
  std::int64_t N = 1024;
  double R = 2.0;  // hypercube side
  PrivacyParams privacy;
  VaidyaConfig vaidya;
  std::vector<std::uint64_t> seeds = {1};
  std::string out;
  bool baseline = false;
  bool override_n_floor = false;
  DpSgdConfig dpsgd;

  // Sweep grids (empty: use the singleton base value).
  std::vector<int> sweep_d;
  std::vector<std::int64_t> sweep_n;
  std::vector<int> sweep_m;
  std::vector<double> sweep_eps;
};

inline ExperimentConfig config_from_map(
    const std::map<std::string, std::string>& kv) {
  static const std::vector<std::string> known = {
      "problem.key",     "problem.alpha",    "problem.sigma_g",
      "problem.sigma_f", "problem.seed",     "run.d",
      "run.M",           "run.N",            "run.R",
      "privacy.eps",     "privacy.delta",    "privacy.delta_err",
      "vaidya.gamma",    "vaidya.eta",       "vaidya.center_tol",
      "vaidya.max_rows", "seeds",            "out",
      "baseline",        "override_n_floor", "dpsgd.rounds",
      "dpsgd.step0",     "dpsgd.batch",      "sweep.d",
      "sweep.N",         "sweep.M",          "sweep.eps"};
  for (const auto& [key, value] : kv) {
    (void)value;
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigRejected("config: unknown key '" + key + "'");
  }

  ExperimentConfig cfg;
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second;
  };

  if (auto v = get("problem.key")) cfg.problem.key = *v;
  else cfg.problem.key = "max_abs";
  if (auto v = get("problem.alpha"))
    cfg.problem.alpha = parse_double_value("problem.alpha", *v);
  if (auto v = get("problem.sigma_g"))
    cfg.problem.sigma_g = parse_double_value("problem.sigma_g", *v);
  if (auto v = get("problem.sigma_f"))
    cfg.problem.sigma_f = parse_double_value("problem.sigma_f", *v);
  if (auto v = get("problem.seed"))
    cfg.problem.seed =
        static_cast<std::uint64_t>(parse_int_value("problem.seed", *v));
  if (auto v = get("run.d"))
    cfg.d = static_cast<int>(parse_int_value("run.d", *v));
  if (auto v = get("run.M"))
    cfg.M = static_cast<int>(parse_int_value("run.M", *v));
  if (auto v = get("run.N")) cfg.N = parse_int_value("run.N", *v);
  if (auto v = get("run.R")) cfg.R = parse_double_value("run.R", *v);
  if (auto v = get("privacy.eps"))
    cfg.privacy.eps_dp = parse_double_value("privacy.eps", *v);
  if (auto v = get("privacy.delta"))
    cfg.privacy.delta_dp = parse_double_value("privacy.delta", *v);
  if (auto v = get("privacy.delta_err"))
    cfg.privacy.delta_err = parse_double_value("privacy.delta_err", *v);
  if (auto v = get("vaidya.gamma"))
    cfg.vaidya.gamma = parse_double_value("vaidya.gamma", *v);
  if (auto v = get("vaidya.eta"))
    cfg.vaidya.eta = parse_double_value("vaidya.eta", *v);
  if (auto v = get("vaidya.center_tol"))
    cfg.vaidya.center_tol = parse_double_value("vaidya.center_tol", *v);
  if (auto v = get("vaidya.max_rows"))
    cfg.vaidya.max_rows =
        static_cast<int>(parse_int_value("vaidya.max_rows", *v));
  if (auto v = get("seeds")) {
    auto list = parse_list_value<std::int64_t>("seeds", *v, parse_int_value);
    cfg.seeds.clear();
    for (auto s : list) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (auto v = get("out")) cfg.out = *v;
  if (auto v = get("baseline"))
    cfg.baseline = parse_bool_value("baseline", *v);
  if (auto v = get("override_n_floor"))
    cfg.override_n_floor = parse_bool_value("override_n_floor", *v);
  if (auto v = get("dpsgd.rounds"))
    cfg.dpsgd.rounds = static_cast<int>(parse_int_value("dpsgd.rounds", *v));
  if (auto v = get("dpsgd.step0"))
    cfg.dpsgd.step0 = parse_double_value("dpsgd.step0", *v);
  if (auto v = get("dpsgd.batch"))
    cfg.dpsgd.batch = parse_int_value("dpsgd.batch", *v);
  if (auto v = get("sweep.d")) {
    auto list = parse_list_value<std::int64_t>("sweep.d", *v, parse_int_value);
    for (auto x : list) cfg.sweep_d.push_back(static_cast<int>(x));
  }
  if (auto v = get("sweep.N"))
    cfg.sweep_n = parse_list_value<std::int64_t>("sweep.N", *v, parse_int_value);
  if (auto v = get("sweep.M")) {
    auto list = parse_list_value<std::int64_t>("sweep.M", *v, parse_int_value);
    for (auto x : list) cfg.sweep_m.push_back(static_cast<int>(x));
  }
  if (auto v = get("sweep.eps"))
    cfg.sweep_eps =
        parse_list_value<double>("sweep.eps", *v, parse_double_value);
  return cfg;
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
  return config_from_map(parse_config_text(text));
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigRejected("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

// ---- Result rows -----------------------------------------------------------

inline constexpr int kResultSchemaVersion = 1;
inline constexpr const char* kResultCsvHeader =
    "run_id,seed,problem,d,M,N,eps,delta,K,J0,J1,cc_bits,k_star,excess_risk,"
    "wall_ms,algo";

struct ResultRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string problem;
  int d = 0;
  int M = 0;
  std::int64_t N = 0;
  double eps = 0;
  double delta = 0;
  int K = 0;
  int J0 = 0;
  int J1 = 0;
  double cc_bits = 0;
  int k_star = -1;
  double excess_risk = std::numeric_limits<double>::quiet_NaN();
  double wall_ms = 0;
  std::string algo;  // "charter" or "dpsgd"
};

inline std::string format_eps(double eps) {
  return std::isinf(eps) ? "inf" : format_double(eps);
}

inline std::string to_csv(const ResultRow& r) {
  std::ostringstream out;
  out << r.run_id << ',' << r.seed << ',' << r.problem << ',' << r.d << ','
      << r.M << ',' << r.N << ',' << format_eps(r.eps) << ','
      << format_double(r.delta) << ',' << r.K << ',' << r.J0 << ',' << r.J1
      << ',' << format_double(r.cc_bits) << ',' << r.k_star << ','
      << (std::isnan(r.excess_risk) ? std::string("na")
                                    : format_double(r.excess_risk))
      << ',' << format_double(r.wall_ms) << ',' << r.algo;
  return out.str();
}

// Stable run identifier: a hash of the cell parameters and seed, so rerunning
// the same configuration reproduces the same id.
inline std::string make_run_id(const std::string& problem, int d, int M,
                               std::int64_t N, double eps, std::uint64_t seed,
                               const std::string& algo) {
  std::uint64_t h = 0x243F6A8885A308D3ull;
  auto fold = [&h](std::uint64_t v) { h = mix64(h ^ v); };
  for (char c : problem) fold(static_cast<std::uint64_t>(c));
  fold(static_cast<std::uint64_t>(d));
  fold(static_cast<std::uint64_t>(M));
  fold(static_cast<std::uint64_t>(N));
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(eps));
  std::memcpy(&bits, &eps, sizeof(bits));
  fold(bits);
  fold(seed);
  for (char c : algo) fold(static_cast<std::uint64_t>(c));
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace charter
