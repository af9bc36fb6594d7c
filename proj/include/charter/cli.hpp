#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "charter/config.hpp"
#include "charter/dpsgd.hpp"
#include "charter/orchestrator.hpp"

#include "CLI11.hpp"

namespace charter {
namespace cli {

struct Cell {
  int d;
  int M;
  std::int64_t N;
  double eps;
};

inline Problem build_problem(const ExperimentConfig& cfg, int d, int M) {
  ProblemSpec spec = cfg.problem;
  spec.d = d;
  spec.side = cfg.R;
  return make_builtin_problem(spec, M);
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

// Runs one (cell, seed) and renders rows; dpsgd is appended when the
// baseline flag is set.
inline std::vector<ResultRow> run_cell(const ExperimentConfig& cfg,
                                       const Cell& cell, std::uint64_t seed,
                                       std::string* transcript_out = nullptr) {
  PrivacyParams privacy = cfg.privacy;
  privacy.eps_dp = cell.eps;
  Problem prob = build_problem(cfg, cell.d, cell.M);

  auto t0 = std::chrono::steady_clock::now();
  RunTranscript tr = run_charter(prob, cell.M, cell.N, privacy, cfg.vaidya,
                                 seed, cfg.override_n_floor);
  double ms = elapsed_ms(t0);
  if (transcript_out) *transcript_out = transcript_to_text(tr, prob.name);

  ResultRow row;
  row.run_id = make_run_id(prob.name, cell.d, cell.M, cell.N, cell.eps, seed,
                           "charter");
  row.seed = seed;
  row.problem = prob.name;
  row.d = cell.d;
  row.M = cell.M;
  row.N = cell.N;
  row.eps = cell.eps;
  row.delta = privacy.delta_dp;
  row.K = tr.params.K;
  row.J0 = tr.params.J0;
  row.J1 = tr.params.J1;
  row.cc_bits = tr.cc_bits;
  row.k_star = tr.k_star;
  row.excess_risk =
      tr.er.value_or(std::numeric_limits<double>::quiet_NaN());
  row.wall_ms = ms;
  row.algo = "charter";
  std::vector<ResultRow> rows{row};

  if (cfg.baseline) {
    auto t1 = std::chrono::steady_clock::now();
    DpSgdResult base = run_dpsgd(prob, cell.M, cell.N, privacy, cfg.dpsgd,
                                 seed);
    ResultRow brow = row;
    brow.run_id = make_run_id(prob.name, cell.d, cell.M, cell.N, cell.eps,
                              seed, "dpsgd");
    brow.K = cfg.dpsgd.rounds;
    brow.J0 = 32;
    brow.J1 = 0;
    brow.cc_bits = base.cc_bits;
    brow.k_star = -1;
    brow.excess_risk = (prob.true_loss && prob.optimal_value)
                           ? excess_risk(prob, base.output)
                           : std::numeric_limits<double>::quiet_NaN();
    brow.wall_ms = elapsed_ms(t1);
    brow.algo = "dpsgd";
    rows.push_back(brow);
  }
  return rows;
}

inline std::vector<Cell> sweep_cells(const ExperimentConfig& cfg) {
  auto ds = cfg.sweep_d.empty() ? std::vector<int>{cfg.d} : cfg.sweep_d;
  auto ms = cfg.sweep_m.empty() ? std::vector<int>{cfg.M} : cfg.sweep_m;
  auto ns = cfg.sweep_n.empty() ? std::vector<std::int64_t>{cfg.N}
                                : cfg.sweep_n;
  auto es = cfg.sweep_eps.empty() ? std::vector<double>{cfg.privacy.eps_dp}
                                  : cfg.sweep_eps;
  std::vector<Cell> cells;
  for (int d : ds)
    for (int m : ms)
      for (std::int64_t n : ns)
        for (double e : es) cells.push_back({d, m, n, e});
  return cells;
}

// Dry-run validation of every cell: parameter derivation must succeed and
// the dataset floor must hold (unless overridden) before any work starts.
inline void validate_cells(const ExperimentConfig& cfg,
                           const std::vector<Cell>& cells) {
  for (const auto& c : cells) {
    PrivacyParams pv = cfg.privacy;
    pv.eps_dp = c.eps;
    DerivedParams p =
        derive_params(c.d, c.M, c.N, cfg.R, cfg.problem.sigma_g,
                      cfg.problem.sigma_f, cfg.vaidya.gamma, pv);
    if (!cfg.override_n_floor) {
      std::int64_t floor = min_n_for_freshness(p.K, c.M, pv.delta_err);
      if (c.N < floor) {
        std::ostringstream msg;
        msg << "cell d=" << c.d << " M=" << c.M << " N=" << c.N
            << ": N below freshness floor " << floor
            << " (set override_n_floor = true to force)";
        throw ConfigRejected(msg.str());
      }
    }
  }
}

inline int worker_count(std::size_t jobs) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("CHARTER_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v >= 1) hw = static_cast<unsigned>(v);
  }
  return static_cast<int>(std::min<std::size_t>(hw, std::max<std::size_t>(jobs, 1)));
}

inline double median_of_sorted(const std::vector<double>& v) {
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Interquartile range with linear interpolation between order statistics.
inline double iqr_of_sorted(const std::vector<double>& v) {
  auto quantile = [&](double q) {
    double pos = q * (static_cast<double>(v.size()) - 1);
    std::size_t i = static_cast<std::size_t>(pos);
    double frac = pos - static_cast<double>(i);
    if (i + 1 >= v.size()) return v.back();
    return v[i] * (1 - frac) + v[i + 1] * frac;
  };
  return quantile(0.75) - quantile(0.25);
}

inline std::string transcript_path(const std::string& out,
                                   std::uint64_t seed) {
  std::string stem = out;
  std::size_t dot = stem.find_last_of('.');
  if (dot != std::string::npos && stem.find('/', dot) == std::string::npos)
    stem = stem.substr(0, dot);
  return stem + ".seed" + std::to_string(seed) + ".transcript.txt";
}

inline int cmd_run(const ExperimentConfig& cfg) {
  std::vector<Cell> cells = sweep_cells(cfg);
  if (cells.size() != 1)
    throw ConfigRejected("run: sweep axes are only valid for `sweep`");
  validate_cells(cfg, cells);

  std::ofstream out;
  std::ostream* os = &std::cout;
  if (!cfg.out.empty()) {
    out.open(cfg.out);
    if (!out) throw ConfigRejected("run: cannot open output '" + cfg.out + "'");
    os = &out;
  }
  *os << "# charter-results v" << kResultSchemaVersion << "\n"
      << kResultCsvHeader << "\n";
  for (std::uint64_t seed : cfg.seeds) {
    std::string transcript;
    auto rows = run_cell(cfg, cells[0], seed, &transcript);
    for (const auto& r : rows) *os << to_csv(r) << "\n";
    os->flush();
    if (!cfg.out.empty()) {
      std::ofstream ts(transcript_path(cfg.out, seed));
      ts << transcript;
    }
  }
  return 0;
}

inline int cmd_sweep(const ExperimentConfig& cfg) {
  std::vector<Cell> cells = sweep_cells(cfg);
  validate_cells(cfg, cells);
  if (cfg.out.empty())
    throw ConfigRejected("sweep: an output path (out=...) is required");

  struct Job {
    Cell cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& c : cells)
    for (std::uint64_t s : cfg.seeds) jobs.push_back({c, s});

  std::ofstream out(cfg.out);
  if (!out) throw ConfigRejected("sweep: cannot open output '" + cfg.out + "'");
  out << "# charter-results v" << kResultSchemaVersion << "\n"
      << kResultCsvHeader << "\n";
  out.flush();

  std::mutex mu;
  std::vector<ResultRow> all_rows;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;

  auto work = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= jobs.size() || failed.load()) return;
      try {
        auto rows = run_cell(cfg, jobs[i].cell, jobs[i].seed);
        std::lock_guard<std::mutex> lock(mu);
        for (const auto& r : rows) {
          out << to_csv(r) << "\n";
          all_rows.push_back(r);
        }
        out.flush();
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        failed = true;
        failure = e.what();
        return;
      }
    }
  };

  int workers = worker_count(jobs.size());
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int i = 0; i < workers; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failed) throw ConfigRejected("sweep: cell failed: " + failure);

  // Per-cell aggregate of excess risk over seeds.
  std::ofstream agg(cfg.out + ".agg.csv");
  agg << "problem,d,M,N,eps,algo,runs,er_median,er_iqr\n";
  for (const auto& c : cells) {
    for (const std::string algo : {"charter", "dpsgd"}) {
      std::vector<double> ers;
      std::string problem;
      for (const auto& r : all_rows) {
        if (r.d != c.d || r.M != c.M || r.N != c.N || r.algo != algo) continue;
        bool eps_match = (std::isinf(r.eps) && std::isinf(c.eps)) ||
                         r.eps == c.eps;
        if (!eps_match) continue;
        if (!std::isnan(r.excess_risk)) ers.push_back(r.excess_risk);
        problem = r.problem;
      }
      if (ers.empty()) continue;
      std::sort(ers.begin(), ers.end());
      agg << problem << ',' << c.d << ',' << c.M << ',' << c.N << ','
          << format_eps(c.eps) << ',' << algo << ',' << ers.size() << ','
          << format_double(median_of_sorted(ers)) << ','
          << format_double(iqr_of_sorted(ers)) << "\n";
    }
  }
  return 0;
}

inline std::string describe_params(const ExperimentConfig& cfg) {
  DerivedParams p =
      derive_params(cfg.d, cfg.M, cfg.N, cfg.R, cfg.problem.sigma_g,
                    cfg.problem.sigma_f, cfg.vaidya.gamma, cfg.privacy);
  std::ostringstream out;
  out << "K = " << p.K << "\n"
      << "G0 = " << format_double(p.G0) << "\n"
      << "G1 = " << format_double(p.G1) << "\n"
      << "sigma0_sq = " << format_double(p.sigma0_sq) << "\n"
      << "sigma1_sq = " << format_double(p.sigma1_sq) << "\n"
      << "D0 = " << format_double(p.D0) << "\n"
      << "D1 = " << format_double(p.D1) << "\n"
      << "J0 = " << p.J0 << "\n"
      << "J1 = " << p.J1 << "\n"
      << "batch = " << p.batch_size() << "\n"
      << "cc_bits = " << format_double(p.cc_bits()) << "\n"
      << "n_floor = " << min_n_for_freshness(p.K, cfg.M, cfg.privacy.delta_err)
      << "\n";
  if (!cfg.privacy.non_private()) {
    CharterLedger lg = charter_privacy_ledger(p, cfg.privacy);
    out << "ledger.eps0 = " << format_double(lg.eps0) << "\n"
        << "ledger.delta0 = " << format_double(lg.delta0) << "\n"
        << "ledger.eps1 = " << format_double(lg.eps1) << "\n"
        << "ledger.delta1 = " << format_double(lg.delta1) << "\n"
        << "ledger.eps_learning = " << format_double(lg.eps_learning) << "\n"
        << "ledger.delta_learning = " << format_double(lg.delta_learning)
        << "\n"
        << "ledger.eps2 = " << format_double(lg.eps2) << "\n"
        << "ledger.delta2 = " << format_double(lg.delta2) << "\n"
        << "ledger.eps_verification = " << format_double(lg.eps_verification)
        << "\n"
        << "ledger.delta_verification = "
        << format_double(lg.delta_verification) << "\n";
  } else {
    out << "ledger = none (non-private mode)\n";
  }
  return out.str();
}

inline int cmd_validate_params(const ExperimentConfig& cfg) {
  std::cout << describe_params(cfg);
  return 0;
}

// Deterministic cutting-plane benchmark on exact subgradients.
inline int cmd_bench_vaidya(const ExperimentConfig& cfg, int K) {
  Problem prob = build_problem(cfg, cfg.d, cfg.M);
  if (!prob.true_grad || !prob.true_loss || !prob.optimal_value)
    throw OracleUnavailable("bench-vaidya: problem lacks exact oracles");
  VaidyaConfig vc = cfg.vaidya;
  vc.K = K;
  auto t0 = std::chrono::steady_clock::now();
  Polyhedron box = Polyhedron::hypercube(prob.domain_center, prob.side);
  auto res = run_cutting_plane(
      box, vc, [&](const Eigen::VectorXd& x) { return prob.true_grad(x); });
  double ms = elapsed_ms(t0);
  double best = std::numeric_limits<double>::infinity();
  int report = std::max(1, K / 10);
  std::cout << "iter,running_min_excess_risk\n";
  for (std::size_t k = 0; k < res.iterates.size(); ++k) {
    best = std::min(best, prob.true_loss(res.iterates[k]) -
                              *prob.optimal_value);
    if (k % static_cast<std::size_t>(report) == 0 ||
        k + 1 == res.iterates.size())
      std::cout << k << ',' << format_double(best) << "\n";
  }
  std::cout << "wall_ms=" << format_double(ms) << "\n";
  return 0;
}

// Applies command-line overrides on top of an optional config file, then
// dispatches. Returns a process exit code; errors are printed to stderr
// with their stable names.
inline int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"charter: private distributed convex optimization simulator"};
  app.require_subcommand(1);

  std::string config_path;
  ExperimentConfig cfg;

  // Shared option state; applied over the config file after parsing.
  struct Overrides {
    std::optional<std::string> problem, out, seeds, eps;
    std::optional<int> d, M, max_rows, dpsgd_rounds;
    std::optional<std::int64_t> N, dpsgd_batch;
    std::optional<double> R, delta, delta_err, gamma, eta, center_tol, alpha,
        sigma_g, sigma_f, dpsgd_step0;
    std::optional<std::uint64_t> problem_seed;
    bool baseline = false, override_n_floor = false;
  } ov;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value config file");
    sub->add_option("--problem", ov.problem,
                    "problem key (hard_instance|max_abs|hetero_quadratic)");
    sub->add_option("--d", ov.d, "dimension");
    sub->add_option("--M", ov.M, "number of clients");
    sub->add_option("--N", ov.N, "samples per client");
    sub->add_option("--R", ov.R, "domain hypercube side");
    sub->add_option("--eps", ov.eps, "privacy epsilon or 'inf'");
    sub->add_option("--delta", ov.delta, "privacy delta");
    sub->add_option("--delta-err", ov.delta_err, "concentration failure budget");
    sub->add_option("--gamma", ov.gamma, "leverage drop threshold");
    sub->add_option("--eta", ov.eta, "cut depth parameter");
    sub->add_option("--center-tol", ov.center_tol, "centering tolerance");
    sub->add_option("--max-rows", ov.max_rows, "constraint cap");
    sub->add_option("--alpha", ov.alpha, "hard instance scale");
    sub->add_option("--sigma-g", ov.sigma_g, "gradient noise scale");
    sub->add_option("--sigma-f", ov.sigma_f, "loss noise scale");
    sub->add_option("--problem-seed", ov.problem_seed, "problem/data seed");
    sub->add_option("--seed", ov.seeds, "comma-separated run seeds");
    sub->add_option("--out", ov.out, "output CSV path");
    sub->add_flag("--baseline", ov.baseline, "also run the dpsgd baseline");
    sub->add_flag("--override-n-floor", ov.override_n_floor,
                  "skip the dataset-size floor check");
    sub->add_option("--dpsgd-rounds", ov.dpsgd_rounds, "baseline rounds");
    sub->add_option("--dpsgd-step0", ov.dpsgd_step0, "baseline base step");
    sub->add_option("--dpsgd-batch", ov.dpsgd_batch, "baseline batch size");
  };

  CLI::App* run = app.add_subcommand("run", "single-cell runs over seeds");
  CLI::App* sweep = app.add_subcommand("sweep", "grid of cells x seeds");
  CLI::App* vp = app.add_subcommand("validate-params",
                                    "print derived parameters and ledger");
  CLI::App* bench = app.add_subcommand("bench-vaidya",
                                       "deterministic cutting-plane benchmark");
  int bench_K = 300;
  bench->add_option("--K", bench_K, "cutting rounds");
  for (CLI::App* sub : {run, sweep, vp, bench}) add_common(sub);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (!config_path.empty()) cfg = load_experiment_config(config_path);
    if (ov.problem) cfg.problem.key = *ov.problem;
    if (ov.alpha) cfg.problem.alpha = *ov.alpha;
    if (ov.sigma_g) cfg.problem.sigma_g = *ov.sigma_g;
    if (ov.sigma_f) cfg.problem.sigma_f = *ov.sigma_f;
    if (ov.problem_seed) cfg.problem.seed = *ov.problem_seed;
    if (ov.d) cfg.d = *ov.d;
    if (ov.M) cfg.M = *ov.M;
    if (ov.N) cfg.N = *ov.N;
    if (ov.R) cfg.R = *ov.R;
    if (ov.eps) cfg.privacy.eps_dp = parse_double_value("--eps", *ov.eps);
    if (ov.delta) cfg.privacy.delta_dp = *ov.delta;
    if (ov.delta_err) cfg.privacy.delta_err = *ov.delta_err;
    if (ov.gamma) cfg.vaidya.gamma = *ov.gamma;
    if (ov.eta) cfg.vaidya.eta = *ov.eta;
    if (ov.center_tol) cfg.vaidya.center_tol = *ov.center_tol;
    if (ov.max_rows) cfg.vaidya.max_rows = *ov.max_rows;
    if (ov.seeds) {
      auto list = parse_list_value<std::int64_t>("--seed", *ov.seeds,
                                                 parse_int_value);
      cfg.seeds.clear();
      for (auto s : list) cfg.seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (ov.out) cfg.out = *ov.out;
    if (ov.baseline) cfg.baseline = true;
    if (ov.override_n_floor) cfg.override_n_floor = true;
    if (ov.dpsgd_rounds) cfg.dpsgd.rounds = *ov.dpsgd_rounds;
    if (ov.dpsgd_step0) cfg.dpsgd.step0 = *ov.dpsgd_step0;
    if (ov.dpsgd_batch) cfg.dpsgd.batch = *ov.dpsgd_batch;

    if (run->parsed()) return cmd_run(cfg);
    if (sweep->parsed()) return cmd_sweep(cfg);
    if (vp->parsed()) return cmd_validate_params(cfg);
    if (bench->parsed()) return cmd_bench_vaidya(cfg, bench_K);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: Unhandled: " << e.what() << "\n";
    return 1;
  }
}

inline int dispatch(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace cli
}  // namespace charter
