#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "charter/accounting.hpp"
#include "charter/errors.hpp"
#include "charter/mechanisms.hpp"
#include "charter/problems.hpp"
#include "charter/rng.hpp"

namespace charter {

// One gradient-stage transmission. A round whose batch contains no fresh
// samples produces a null message: no payload, one bit on the wire.
struct GradientMessage {
  int round = -1;
  bool null_message = false;
  std::int64_t t_fresh = 0;       // fresh samples in this round's batch
  Eigen::VectorXd payload;        // decoded grid values, d entries
  std::int64_t bit_count = 0;     // d * J0, or 1 for a null message
};

// Verification-stage transmission: one quantized loss estimate per iterate.
struct LossMessage {
  std::vector<double> values;     // K + 1 decoded grid values
  std::int64_t bit_count = 0;     // (K + 1) * J1
};

// Simulated client. Holds the local dataset of N indexed draws, split
// into D1 (first floor(2N/3) indices, gradient stage) and D2 (the rest,
// verification stage), plus the seen-set used by the freshness indicator.
class ClientState {
public:
  ClientState(const Problem& problem, int id, std::int64_t n,
              std::uint64_t run_seed)
      : problem_(&problem),
        id_(id),
        n_(n),
        d1_(2 * n / 3),
        run_seed_(run_seed),
        seen_(static_cast<std::size_t>(d1_), 0) {
    if (n < 3) throw InvalidInput("ClientState: need N >= 3");
  }

  std::int64_t d1_size() const { return d1_; }
  std::int64_t d2_size() const { return n_ - d1_; }
  std::int64_t seen_count() const { return seen_count_; }

  // Learning-stage round at iterate x: sample a batch of ceil(N/3K)
  // indices uniformly without replacement from D1, average the clipped
  // subgradient draws of the fresh ones (scaled by 3K/N), privatize,
  // debias by N/(3K T), and quantize onto the (D0, J0) grid.
  GradientMessage gradient_round(const Eigen::VectorXd& x, int round,
                                 const DerivedParams& p) {
    GradientMessage msg;
    msg.round = round;
    std::int64_t b = std::min<std::int64_t>(p.batch_size(), d1_);
    RngStream batch_rng = RngStream::derive(
        run_seed_, kStreamBatch, static_cast<std::uint64_t>(id_),
        static_cast<std::uint64_t>(round));
    std::vector<std::int64_t> batch =
        sample_without_replacement(d1_, b, batch_rng);

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(p.d);
    std::int64_t t = 0;
    Eigen::VectorXd mean = problem_->grad_mean(x, id_);
    for (std::int64_t idx : batch) {
      if (seen_[static_cast<std::size_t>(idx)]) continue;
      Eigen::VectorXd g = mean + problem_->grad_noise(id_, idx);
      acc += clip(g, p.G0);
      ++t;
    }
    for (std::int64_t idx : batch) {
      auto& flag = seen_[static_cast<std::size_t>(idx)];
      if (!flag) {
        flag = 1;
        ++seen_count_;
      }
    }
    msg.t_fresh = t;
    if (t == 0) {
      msg.null_message = true;
      msg.bit_count = 1;
      return msg;
    }

    const double K = static_cast<double>(p.K);
    const double N = static_cast<double>(p.N);
    Eigen::VectorXd est = acc * (3.0 * K / N);
    if (p.sigma0_sq > 0) {
      RngStream noise_rng = RngStream::derive(
          run_seed_, kStreamGradNoise, static_cast<std::uint64_t>(id_),
          static_cast<std::uint64_t>(round));
      const double sd = std::sqrt(p.sigma0_sq);
      for (int i = 0; i < est.size(); ++i) est(i) += sd * noise_rng.normal();
    }
    est *= N / (3.0 * K * static_cast<double>(t));

    RngStream quant_rng = RngStream::derive(
        run_seed_, kStreamQuantGrad, static_cast<std::uint64_t>(id_),
        static_cast<std::uint64_t>(round));
    msg.payload = stochastic_quantize(est, p.D0, p.J0, quant_rng);
    msg.bit_count = static_cast<std::int64_t>(p.d) * p.J0;
    return msg;
  }

  // Verification stage over all iterates: truncated-mean loss estimate
  //   (3/N) sum_{z in D2} loss(x_k; z) 1{|loss| <= G1}
  // privatized and quantized onto the (D1, J1) grid. Every index in D2
  // contributes to every iterate (no freshness bookkeeping here).
  LossMessage verification_estimates(const std::vector<Eigen::VectorXd>& xs,
                                     const DerivedParams& p) {
    ensure_loss_noise_cache();
    LossMessage msg;
    msg.values.reserve(xs.size());
    const double N = static_cast<double>(p.N);
    const double sd = p.sigma1_sq > 0 ? std::sqrt(p.sigma1_sq) : 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      double base = problem_->loss_mean(xs[k], id_);
      double acc = 0.0;
      for (double noise : loss_noise_) {
        double v = base + noise;
        if (std::abs(v) <= p.G1) acc += v;
      }
      double est = 3.0 / N * acc;
      if (sd > 0) {
        RngStream noise_rng = RngStream::derive(
            run_seed_, kStreamVerifNoise, static_cast<std::uint64_t>(id_),
            static_cast<std::uint64_t>(k));
        est += sd * noise_rng.normal();
      }
      RngStream quant_rng = RngStream::derive(
          run_seed_, kStreamQuantLoss, static_cast<std::uint64_t>(id_),
          static_cast<std::uint64_t>(k));
      msg.values.push_back(
          stochastic_quantize_scalar(est, p.D1, p.J1, quant_rng));
    }
    msg.bit_count = static_cast<std::int64_t>(msg.values.size()) * p.J1;
    return msg;
  }

private:
  void ensure_loss_noise_cache() {
    if (!loss_noise_.empty() || d2_size() == 0) return;
    loss_noise_.reserve(static_cast<std::size_t>(d2_size()));
    for (std::int64_t idx = d1_; idx < n_; ++idx)
      loss_noise_.push_back(problem_->loss_noise(id_, idx));
  }

  const Problem* problem_;
  int id_;
  std::int64_t n_;
  std::int64_t d1_;
  std::uint64_t run_seed_;
  std::vector<std::uint8_t> seen_;
  std::int64_t seen_count_ = 0;
  std::vector<double> loss_noise_;
};

}  // namespace charter
