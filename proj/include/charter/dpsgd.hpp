#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>

#include "charter/accounting.hpp"
#include "charter/errors.hpp"
#include "charter/mechanisms.hpp"
#include "charter/problems.hpp"
#include "charter/rng.hpp"

namespace charter {

// Distributed DP-SGD reference baseline (not part of the cutting-plane
// protocol; used for CLI comparisons only). Each round every client draws
// a minibatch without replacement, averages clipped per-sample gradients,
// adds Gaussian noise sized by the same amplification + composition
// machinery as the main algorithm, and the server takes a projected step
// with a 1/sqrt(t) schedule. Gradients travel as d * 32 bits per round.
struct DpSgdConfig {
  int rounds = 500;
  std::int64_t batch = 0;   // 0: default to ceil(N / rounds)
  double step0 = 0.0;       // 0: default to side / 2
};

struct DpSgdResult {
  Eigen::VectorXd output;   // uniform average of iterates
  double cc_bits = 0.0;     // per client: rounds * d * 32
  double noise_sigma_sq = 0.0;
  double eps_round = 0.0;   // per-round budget before amplification
};

// Largest per-round eps (pre-amplification) whose amplified, T-fold
// composition stays within eps_dp. Monotone in eps, so bisection.
inline double dpsgd_round_eps(double eps_dp, double delta_dp, int rounds,
                              std::int64_t batch, std::int64_t n) {
  double lo = 0.0, hi = 0.999999;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    auto [e1, d1] = amplify_by_subsampling(mid, 0.0, batch, n);
    auto [et, dt] = advanced_composition(e1, 0.0, rounds, delta_dp / 2.0);
    (void)d1;
    (void)dt;
    if (et <= eps_dp)
      lo = mid;
    else
      hi = mid;
  }
  if (!(lo > 0)) throw InvalidBudget("dpsgd: budget too small to calibrate");
  return lo;
}

inline DpSgdResult run_dpsgd(const Problem& prob, int M, std::int64_t N,
                             const PrivacyParams& privacy, DpSgdConfig cfg,
                             std::uint64_t seed) {
  if (M < 1 || N < 1 || cfg.rounds < 1)
    throw InvalidInput("run_dpsgd: M, N, rounds must be >= 1");
  const int d = prob.d;
  std::int64_t batch = cfg.batch > 0
                           ? std::min<std::int64_t>(cfg.batch, N)
                           : std::max<std::int64_t>(1, (N + cfg.rounds - 1) /
                                                           cfg.rounds);
  double step0 = cfg.step0 > 0 ? cfg.step0 : prob.side / 2.0;

  const double MN = static_cast<double>(M) * static_cast<double>(N);
  const double G0 = 1.0 + prob.sigma_g * std::sqrt(2.0 * std::log(4.0 * MN));

  DpSgdResult res;
  if (!privacy.non_private()) {
    // Per-round Gaussian mechanism on the batch mean of clipped gradients
    // (L2 sensitivity 2 G0 / batch), amplified by batch/N subsampling and
    // composed over all rounds; delta budget split as in the main ledger.
    res.eps_round =
        dpsgd_round_eps(privacy.eps_dp, privacy.delta_dp, cfg.rounds, batch, N);
    double delta_round =
        std::min(0.5, privacy.delta_dp * static_cast<double>(N) /
                          (2.0 * cfg.rounds * static_cast<double>(batch)));
    double sens = 2.0 * G0 / static_cast<double>(batch);
    res.noise_sigma_sq =
        gaussian_mechanism_variance(sens, res.eps_round, delta_round);
    auto [e1, d1] = amplify_by_subsampling(res.eps_round, delta_round, batch, N);
    auto [et, dt] =
        advanced_composition(e1, d1, cfg.rounds, privacy.delta_dp / 2.0);
    if (et > privacy.eps_dp * (1 + 1e-9) || dt > privacy.delta_dp * (1 + 1e-9))
      throw LedgerViolation("run_dpsgd: composed budget exceeds target");
  }

  const Eigen::VectorXd lo =
      (prob.domain_center.array() - prob.side / 2.0).matrix();
  const Eigen::VectorXd hi =
      (prob.domain_center.array() + prob.side / 2.0).matrix();
  Eigen::VectorXd x = prob.domain_center;
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(d);
  const double sd = res.noise_sigma_sq > 0 ? std::sqrt(res.noise_sigma_sq) : 0;

  for (int t = 0; t < cfg.rounds; ++t) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    for (int m = 0; m < M; ++m) {
      RngStream batch_rng = RngStream::derive(
          seed, kStreamSgd, 1, static_cast<std::uint64_t>(m),
          static_cast<std::uint64_t>(t));
      auto idxs = sample_without_replacement(N, batch, batch_rng);
      Eigen::VectorXd mean = prob.grad_mean(x, m);
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
      for (auto idx : idxs) acc += clip(mean + prob.grad_noise(m, idx), G0);
      acc /= static_cast<double>(batch);
      if (sd > 0) {
        RngStream noise_rng = RngStream::derive(
            seed, kStreamSgd, 2, static_cast<std::uint64_t>(m),
            static_cast<std::uint64_t>(t));
        for (int i = 0; i < d; ++i) acc(i) += sd * noise_rng.normal();
      }
      g += acc;
    }
    g /= static_cast<double>(M);
    double step = step0 / std::sqrt(static_cast<double>(t) + 1.0);
    x = (x - step * g).cwiseMax(lo).cwiseMin(hi);
    avg += x;
  }
  avg /= static_cast<double>(cfg.rounds);
  res.output = avg;
  res.cc_bits = static_cast<double>(cfg.rounds) * d * 32.0;
  return res;
}

}  // namespace charter
