#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "charter/errors.hpp"
#include "charter/rng.hpp"

namespace charter {

// L2 clipping: y * min{1, G / ||y||}.
inline Eigen::VectorXd clip(const Eigen::VectorXd& y, double G) {
  if (!(G > 0)) throw InvalidInput("clip: G must be > 0");
  double n = y.norm();
  if (n <= G) return y;
  return y * (G / n);
}

// Record of one differentially private release. `partition` names the data
// slice the guarantee refers to.
struct LedgerEntry {
  std::string mechanism;
  std::string partition;
  double eps = 0.0;
  double delta = 0.0;
  double sensitivity = 0.0;
  double noise_variance = 0.0;
};

struct PrivacyLedger {
  std::vector<LedgerEntry> entries;
  void record(LedgerEntry e) { entries.push_back(std::move(e)); }
};

// Per-coordinate variance of the Gaussian mechanism at L2 sensitivity
// `sensitivity`: 2 log(5 / (4 delta)) * sensitivity^2 / eps^2.
inline double gaussian_mechanism_variance(double sensitivity, double eps,
                                          double delta) {
  if (!(eps > 0) || !(delta > 0) || !(delta < 1))
    throw InvalidBudget("gaussian mechanism: need eps > 0 and delta in (0,1)");
  if (sensitivity < 0 || !std::isfinite(sensitivity))
    throw InvalidInput("gaussian mechanism: bad sensitivity");
  double s = sensitivity / eps;
  return 2.0 * std::log(5.0 / (4.0 * delta)) * s * s;
}

inline Eigen::VectorXd gaussian_mechanism(const Eigen::VectorXd& value,
                                          double sensitivity, double eps,
                                          double delta, RngStream& rng,
                                          PrivacyLedger* ledger = nullptr,
                                          const std::string& mechanism = "gaussian",
                                          const std::string& partition = "") {
  double var = gaussian_mechanism_variance(sensitivity, eps, delta);
  Eigen::VectorXd out = value;
  if (var > 0) {
    double sd = std::sqrt(var);
    for (int i = 0; i < out.size(); ++i) out(i) += sd * rng.normal();
  }
  if (ledger)
    ledger->record({mechanism, partition, eps, delta, sensitivity, var});
  return out;
}

// Privacy amplification by uniform subsampling of k elements out of N:
// (eps, delta) -> ((e - 1) k eps / N, k delta / N). Requires eps < 1.
inline std::pair<double, double> amplify_by_subsampling(double eps,
                                                        double delta,
                                                        std::int64_t k,
                                                        std::int64_t N) {
  if (!(eps >= 0) || eps >= 1.0)
    throw InvalidBudget("amplify_by_subsampling: requires 0 <= eps < 1");
  if (delta < 0 || delta >= 1)
    throw InvalidBudget("amplify_by_subsampling: requires delta in [0,1)");
  if (k < 0 || N < 1 || k > N)
    throw InvalidInput("amplify_by_subsampling: requires 0 <= k <= N");
  double ratio = static_cast<double>(k) / static_cast<double>(N);
  return {(std::exp(1.0) - 1.0) * ratio * eps, ratio * delta};
}

// k-fold adaptive composition of an (eps, delta)-DP mechanism with slack
// tilde_delta:
//   eps_total  = min{ k eps,
//                     k eps (e^eps - 1)/(e^eps + 1)
//                       + eps sqrt(2k log(min{e + sqrt(k eps^2)/td, 1/td})) }
//   delta_total = 1 - (1 - delta)^k (1 - tilde_delta)
inline std::pair<double, double> advanced_composition(double eps, double delta,
                                                      std::int64_t k,
                                                      double tilde_delta) {
  if (!(eps >= 0) || !std::isfinite(eps))
    throw InvalidBudget("advanced_composition: requires eps >= 0");
  if (delta < 0 || delta >= 1 || !(tilde_delta > 0) || tilde_delta > 1)
    throw InvalidBudget(
        "advanced_composition: requires delta in [0,1), tilde_delta in (0,1]");
  if (k < 1) throw InvalidInput("advanced_composition: requires k >= 1");
  double kd = static_cast<double>(k);
  double linear = kd * eps;
  double arg = std::min(std::exp(1.0) + std::sqrt(kd * eps * eps) / tilde_delta,
                        1.0 / tilde_delta);
  double log_term = std::log(arg);
  if (log_term < 0) log_term = 0;  // tilde_delta = 1 makes the min equal 1
  double refined = kd * std::expm1(eps) * eps / (std::exp(eps) + 1.0) +
                   eps * std::sqrt(2.0 * kd * log_term);
  double eps_total = std::min(linear, refined);
  // 1 - (1 - delta)^k (1 - tilde_delta) in log1p/expm1 form. The direct pow
  // rounds its argument at ulp(1) and the power amplifies that by k, which
  // for small delta swamps the gap between the result and k delta and can
  // push a mathematically in-budget composition over the target.
  double delta_total =
      -std::expm1(kd * std::log1p(-delta) + std::log1p(-tilde_delta));
  return {eps_total, delta_total};
}

// ---- Stochastic quantizer ------------------------------------------------
//
// Grid over [-D, D] with 2^J points r_j = -D + (j - 1) * 2D / (2^J - 1),
// j = 1..2^J. An in-range coordinate w with r_lo < w <= r_hi (adjacent grid
// points) is rounded to r_hi with probability (w - r_lo) / (r_hi - r_lo)
// and to r_lo otherwise, which is unbiased. Out-of-range coordinates are
// clipped to [-D, D] first. The per-draw error is at most one grid spacing,
// 2D / (2^J - 1).

struct QuantizerSupport {
  double lo = 0.0;
  double hi = 0.0;
  double p_hi = 0.0;  // probability of emitting `hi`
};

inline void validate_quantizer(double D, int J) {
  if (!(D > 0) || !std::isfinite(D))
    throw InvalidInput("quantizer: D must be finite and > 0");
  if (J < 1 || J > 52) throw InvalidInput("quantizer: J must be in [1, 52]");
}

inline double quantizer_spacing(double D, int J) {
  return 2.0 * D / static_cast<double>((std::int64_t(1) << J) - 1);
}

inline QuantizerSupport quantize_support(double w, double D, int J) {
  validate_quantizer(D, J);
  const std::int64_t m = (std::int64_t(1) << J) - 1;  // interval count
  const double step = 2.0 * D / static_cast<double>(m);
  w = std::clamp(w, -D, D);
  if (w <= -D) return {-D, -D, 1.0};
  // Interval index i in [0, m-1] such that r_i < w <= r_{i+1}.
  double u = (w + D) / step;
  std::int64_t i = static_cast<std::int64_t>(std::ceil(u)) - 1;
  i = std::clamp<std::int64_t>(i, 0, m - 1);
  double lo = -D + static_cast<double>(i) * step;
  double hi = (i + 1 == m) ? D : -D + static_cast<double>(i + 1) * step;
  if (w <= lo && i > 0) {  // guard against ceil rounding on exact hits
    hi = lo;
    lo = -D + static_cast<double>(i - 1) * step;
  }
  double p_hi = std::clamp((w - lo) / (hi - lo), 0.0, 1.0);
  return {lo, hi, p_hi};
}

inline double stochastic_quantize_scalar(double w, double D, int J,
                                         RngStream& rng) {
  QuantizerSupport s = quantize_support(w, D, J);
  return rng.uniform01() < s.p_hi ? s.hi : s.lo;
}

inline Eigen::VectorXd stochastic_quantize(const Eigen::VectorXd& w, double D,
                                           int J, RngStream& rng) {
  Eigen::VectorXd out(w.size());
  for (int i = 0; i < w.size(); ++i)
    out(i) = stochastic_quantize_scalar(w(i), D, J, rng);
  return out;
}

}  // namespace charter
