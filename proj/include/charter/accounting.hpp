#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include "charter/errors.hpp"
#include "charter/mechanisms.hpp"

namespace charter {

// Target differential privacy budget. eps_dp = +inf selects non-private
// mode: zero noise, no ledger.
struct PrivacyParams {
  double eps_dp = std::numeric_limits<double>::infinity();
  double delta_dp = 1e-5;
  double delta_err = 0.1;  // failure budget for concentration events

  bool non_private() const { return std::isinf(eps_dp); }
};

// All run parameters derived from (d, M, N, R, sigma_g, sigma_f, gamma)
// and the privacy budget. Natural logs throughout except the bit widths
// J0, J1 which use log2.
struct DerivedParams {
  int d = 0;
  int M = 0;
  std::int64_t N = 0;
  double R = 0.0;        // domain hypercube side length
  double sigma_g = 0.0;  // gradient noise scale (sub-Gaussian parameter)
  double sigma_f = 0.0;  // loss noise scale
  double gamma = 0.0;

  int K = 0;          // cutting-plane rounds
  double G0 = 0.0;    // gradient clipping threshold
  double G1 = 0.0;    // loss truncation threshold
  double sigma0_sq = 0.0;  // gradient privacy noise variance (per coord)
  double sigma1_sq = 0.0;  // loss privacy noise variance
  double D0 = 0.0;    // gradient quantizer range
  double D1 = 0.0;    // loss quantizer range
  int J0 = 0;         // gradient quantizer bits per coordinate
  int J1 = 0;         // loss quantizer bits per estimate

  std::int64_t batch_size() const { return (N + 3LL * K - 1) / (3LL * K); }
  std::int64_t d1_size() const { return (2 * N) / 3; }
  std::int64_t d2_size() const { return N - d1_size(); }

  // Bits transmitted per client: K gradient rounds of d*J0 bits plus
  // K + 1 loss estimates of J1 bits each.
  double cc_bits() const {
    return static_cast<double>(K) * d * J0 + static_cast<double>(K + 1) * J1;
  }
};

// Smallest N for which every per-round fresh-sample count T satisfies
// 1/4 <= 3KT/N <= 1 outside a delta_err/10 failure event.
inline std::int64_t min_n_for_freshness(int K, int M, double delta_err) {
  double bound =
      24.0 * K * std::log(10.0 * M * (static_cast<double>(K) + 1) / delta_err);
  return static_cast<std::int64_t>(std::ceil(bound));
}

inline DerivedParams derive_params(int d, int M, std::int64_t N, double R,
                                   double sigma_g, double sigma_f,
                                   double gamma, const PrivacyParams& pv) {
  if (d < 1 || M < 1 || N < 3)
    throw InvalidInput("derive_params: need d >= 1, M >= 1, N >= 3");
  if (!(R > 0) || !(sigma_g > 0) || !(sigma_f > 0))
    throw InvalidInput("derive_params: R, sigma_g, sigma_f must be > 0");
  if (!(gamma > 0) || !(gamma < 1))
    throw InvalidInput("derive_params: gamma must be in (0, 1)");
  if (!(pv.delta_dp > 0) || !(pv.delta_dp < 1) || !(pv.delta_err > 0) ||
      !(pv.delta_err < 1))
    throw InvalidInput("derive_params: delta_dp, delta_err must be in (0, 1)");
  if (!pv.non_private() && !(pv.eps_dp > 0))
    throw InvalidBudget("derive_params: eps_dp must be > 0");

  DerivedParams p;
  p.d = d;
  p.M = M;
  p.N = N;
  p.R = R;
  p.sigma_g = sigma_g;
  p.sigma_f = sigma_f;
  p.gamma = gamma;

  const double MN = static_cast<double>(M) * static_cast<double>(N);
  double k_real =
      (4.0 * d / gamma) * std::log(d * std::sqrt(MN) / (gamma * sigma_g));
  p.K = std::max<std::int64_t>(
      1, static_cast<std::int64_t>(std::ceil(k_real)));

  const double tail = std::sqrt(2.0 * std::log(4.0 * MN));
  p.G0 = 1.0 + sigma_g * tail;
  p.G1 = R + sigma_f * tail;

  const double Nd = static_cast<double>(N);
  const double Kd = static_cast<double>(p.K);
  if (pv.non_private()) {
    p.sigma0_sq = 0.0;
    p.sigma1_sq = 0.0;
    p.D0 = p.G0;
    p.D1 = p.G1;
    // eps -> inf limit of the finite-eps bit widths below.
    p.J0 = static_cast<int>(
        std::ceil(std::log2(2.0 * p.D0 * std::sqrt(Nd) / sigma_g)));
    p.J1 = static_cast<int>(
        std::ceil(std::log2(2.0 * p.D1 * std::sqrt(Nd) / sigma_f)));
  } else {
    const double eps = pv.eps_dp;
    if (!(eps < 1.5 / std::sqrt(Kd)))
      throw PrivacyBudgetTooLarge(
          "derive_params: eps_dp must satisfy eps < 1.5 / sqrt(K); got eps=" +
          std::to_string(eps) + " with K=" + std::to_string(p.K));
    const double log_dp = std::log(2.5 / pv.delta_dp);
    const double log_dp_k = std::log(2.5 * Kd / pv.delta_dp);
    p.sigma0_sq =
        1080.0 * p.G0 * p.G0 * log_dp * log_dp * Kd / (Nd * Nd * eps * eps);
    p.sigma1_sq = 40.0 * p.G1 * p.G1 * log_dp_k * log_dp_k * Kd /
                  (Nd * Nd * eps * eps);
    p.D0 = p.G0 + std::sqrt(p.sigma0_sq) *
                      std::sqrt(32.0 * std::log(40.0 * M * Kd * d / pv.delta_err));
    p.D1 = p.G1 + std::sqrt(p.sigma1_sq) *
                      std::sqrt(2.0 * std::log(16.0 * M * Kd / pv.delta_err));
    p.J0 = static_cast<int>(std::ceil(std::log2(
        2.0 * p.D0 * Nd * eps / (std::sqrt(d) + sigma_g * eps * std::sqrt(Nd)))));
    p.J1 = static_cast<int>(std::ceil(std::log2(
        2.0 * p.D1 * Nd * eps /
        (R * std::sqrt(d) + sigma_f * eps * std::sqrt(Nd)))));
  }
  p.J0 = std::clamp(p.J0, 1, 52);
  p.J1 = std::clamp(p.J1, 1, 52);
  return p;
}

// Privacy accounting for one full run. The learning stage releases K
// gradient estimates, each the output of a Gaussian mechanism on a batch
// subsampled from the first data split; the verification stage releases
// K + 1 truncated loss estimates on the second split. Both chains must
// compose to at most (eps_dp, delta_dp) on their split; the splits are
// disjoint so the whole run also satisfies (eps_dp, delta_dp).
struct CharterLedger {
  // Per-round gradient mechanism before subsampling.
  double eps0 = 0, delta0 = 0, grad_sensitivity = 0;
  // After amplification by the batch/split ratio 1/(2K).
  double eps1 = 0, delta1 = 0;
  // Learning stage after K-fold composition (slack delta_dp / 2).
  double eps_learning = 0, delta_learning = 0;
  // Per-estimate verification mechanism and its composed total.
  double eps2 = 0, delta2 = 0, loss_sensitivity = 0;
  double eps_verification = 0, delta_verification = 0;
  PrivacyLedger entries;
};

inline CharterLedger charter_privacy_ledger(const DerivedParams& p,
                                            const PrivacyParams& pv) {
  if (pv.non_private())
    throw InvalidBudget("charter_privacy_ledger: non-private mode has no ledger");
  const double eps = pv.eps_dp;
  const double delta = pv.delta_dp;
  const double Kd = static_cast<double>(p.K);
  const double L = std::log(2.5 / delta);

  CharterLedger lg;
  lg.eps0 = eps * std::sqrt(Kd / (15.0 * L));
  lg.delta0 = delta / 2.0;
  lg.grad_sensitivity = 6.0 * Kd * p.G0 / static_cast<double>(p.N);
  lg.eps1 = (std::exp(1.0) - 1.0) * eps / 2.0 * std::sqrt(1.0 / (15.0 * Kd * L));
  lg.delta1 = delta / (2.0 * Kd);
  std::tie(lg.eps_learning, lg.delta_learning) =
      advanced_composition(lg.eps1, lg.delta1, p.K, delta / 2.0);

  lg.eps2 = eps * std::sqrt(9.0 / (20.0 * Kd * L));
  lg.delta2 = delta / (2.0 * Kd);
  lg.loss_sensitivity = 6.0 * p.G1 / static_cast<double>(p.N);
  std::tie(lg.eps_verification, lg.delta_verification) =
      advanced_composition(lg.eps2, lg.delta2, p.K, delta / 2.0);

  auto check = [&](double e, double dl, const char* stage) {
    if (e > eps * (1.0 + 1e-12) || dl > delta * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "charter_privacy_ledger: " << stage
          << " stage exceeds budget: eps=" << e << " delta=" << dl
          << " target eps=" << eps << " delta=" << delta;
      throw LedgerViolation(msg.str());
    }
  };
  check(lg.eps_learning, lg.delta_learning, "learning");
  check(lg.eps_verification, lg.delta_verification, "verification");

  // Consistency: the gradient noise variance equals the Gaussian mechanism
  // calibrated at (eps0, delta0) with the batch estimator's sensitivity.
  double mech_var =
      gaussian_mechanism_variance(lg.grad_sensitivity, lg.eps0, lg.delta0);
  if (p.sigma0_sq > 0 &&
      std::abs(mech_var - p.sigma0_sq) > 1e-9 * p.sigma0_sq)
    throw LedgerViolation(
        "charter_privacy_ledger: sigma0^2 does not match the calibrated "
        "Gaussian mechanism variance");

  lg.entries.record({"gaussian/gradient-round", "split1-batch", lg.eps0,
                     lg.delta0, lg.grad_sensitivity, p.sigma0_sq});
  lg.entries.record({"gaussian/loss-estimate", "split2", lg.eps2, lg.delta2,
                     lg.loss_sensitivity, p.sigma1_sq});
  return lg;
}

}  // namespace charter
