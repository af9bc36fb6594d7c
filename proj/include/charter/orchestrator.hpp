#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "charter/accounting.hpp"
#include "charter/client.hpp"
#include "charter/errors.hpp"
#include "charter/problems.hpp"
#include "charter/vaidya.hpp"

namespace charter {

// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Full record of one run: iterates, every message, the aggregation each
// round fed to the cutting-plane step, selection, and accounting.
struct RunTranscript {
  DerivedParams params;
  PrivacyParams privacy;
  std::uint64_t seed = 0;
  double gamma = 0, eta = 0, center_tol = 0;

  std::vector<Eigen::VectorXd> iterates;                 // K + 1
  std::vector<CutStep> steps;                            // K
  std::vector<std::vector<GradientMessage>> grad_messages;  // [round][client]
  std::vector<Eigen::VectorXd> aggregated_gradients;     // per round
  std::vector<bool> all_null_round;                      // per round
  std::vector<LossMessage> loss_messages;                // [client]
  std::vector<double> avg_loss_estimates;                // K + 1

  int k_star = -1;
  Eigen::VectorXd output;
  double cc_bits = 0.0;        // bits averaged per client
  int null_message_count = 0;
  std::optional<double> er;    // population excess risk when available
  std::optional<CharterLedger> ledger;
};

// Lowest index attaining the minimum.
inline int select_kstar(const std::vector<double>& avg_losses) {
  if (avg_losses.empty()) throw InvalidInput("select_kstar: empty input");
  int best = 0;
  for (int k = 1; k < static_cast<int>(avg_losses.size()); ++k)
    if (avg_losses[k] < avg_losses[best]) best = k;
  return best;
}

// Runs the full protocol with explicit derived parameters (params.M names
// the client count). The privacy ledger is built (and enforced) whenever
// the budget is finite.
inline RunTranscript run_charter_with_params(const Problem& prob,
                                             const DerivedParams& params,
                                             const PrivacyParams& privacy,
                                             VaidyaConfig cfg,
                                             std::uint64_t seed) {
  const int M = params.M;
  if (M < 1) throw InvalidInput("run_charter: M >= 1 required");
  if (prob.d != params.d)
    throw InvalidInput("run_charter: problem/params dimension mismatch");
  cfg.K = params.K;
  cfg.gamma = params.gamma;
  validate(cfg);

  RunTranscript tr;
  tr.params = params;
  tr.privacy = privacy;
  tr.seed = seed;
  tr.gamma = cfg.gamma;
  tr.eta = cfg.eta;
  tr.center_tol = cfg.center_tol;
  if (!privacy.non_private()) tr.ledger = charter_privacy_ledger(params, privacy);

  std::vector<ClientState> clients;
  clients.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m)
    clients.emplace_back(prob, m, params.N, seed);

  tr.grad_messages.resize(static_cast<std::size_t>(params.K));
  int round_counter = 0;
  auto provider = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const int k = round_counter++;
    auto& round_msgs = tr.grad_messages[static_cast<std::size_t>(k)];
    round_msgs.reserve(static_cast<std::size_t>(M));
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(params.d);
    int contributors = 0;
    for (int m = 0; m < M; ++m) {
      GradientMessage msg = clients[static_cast<std::size_t>(m)].gradient_round(
          x, k, params);
      if (msg.null_message) {
        ++tr.null_message_count;
      } else {
        sum += msg.payload;
        ++contributors;
      }
      round_msgs.push_back(std::move(msg));
    }
    if (contributors == 0) {
      // Nothing usable this round; the cutting-plane loop degrades the
      // round to a Drop or NoOp on its own when handed a zero direction.
      tr.all_null_round.push_back(true);
      tr.aggregated_gradients.push_back(Eigen::VectorXd::Zero(params.d));
      return Eigen::VectorXd::Zero(params.d);
    }
    tr.all_null_round.push_back(false);
    Eigen::VectorXd avg = sum / static_cast<double>(contributors);
    tr.aggregated_gradients.push_back(avg);
    return avg;
  };

  Polyhedron box = Polyhedron::hypercube(prob.domain_center, prob.side);
  CuttingPlaneResult cp = run_cutting_plane(box, cfg, provider);
  tr.iterates = std::move(cp.iterates);
  tr.steps = std::move(cp.steps);

  tr.avg_loss_estimates.assign(tr.iterates.size(), 0.0);
  tr.loss_messages.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    LossMessage lm = clients[static_cast<std::size_t>(m)].verification_estimates(
        tr.iterates, params);
    for (std::size_t k = 0; k < lm.values.size(); ++k)
      tr.avg_loss_estimates[k] += lm.values[k] / static_cast<double>(M);
    tr.loss_messages.push_back(std::move(lm));
  }
  tr.k_star = select_kstar(tr.avg_loss_estimates);
  tr.output = tr.iterates[static_cast<std::size_t>(tr.k_star)];

  double total_bits = 0.0;
  for (const auto& round_msgs : tr.grad_messages)
    for (const auto& msg : round_msgs)
      total_bits += static_cast<double>(msg.bit_count);
  for (const auto& lm : tr.loss_messages)
    total_bits += static_cast<double>(lm.bit_count);
  tr.cc_bits = total_bits / static_cast<double>(M);

  if (prob.true_loss && prob.optimal_value.has_value())
    tr.er = excess_risk(prob, tr.output);
  return tr;
}

// Derives parameters, enforces the dataset-size floor required by the
// freshness concentration bound (unless overridden), and runs.
inline RunTranscript run_charter(const Problem& prob, int M, std::int64_t N,
                                 const PrivacyParams& privacy,
                                 const VaidyaConfig& cfg, std::uint64_t seed,
                                 bool override_n_floor = false) {
  DerivedParams params = derive_params(prob.d, M, N, prob.side, prob.sigma_g,
                                       prob.sigma_f, cfg.gamma, privacy);
  std::int64_t floor = min_n_for_freshness(params.K, M, privacy.delta_err);
  if (!override_n_floor && N < floor) {
    std::ostringstream msg;
    msg << "run_charter: N=" << N << " is below the freshness floor " << floor
        << " for K=" << params.K << ", M=" << M
        << " (pass override_n_floor to run anyway)";
    throw ConfigRejected(msg.str());
  }
  return run_charter_with_params(prob, params, privacy, cfg, seed);
}

// Line-oriented transcript serialization:
//   # charter-transcript v1
//   config <key=value ...>
//   msg round=<k> client=<m> stage=<grad|loss> bits=<n>   (loss rounds: -1)
//   summary k_star=<k> cc_bits=<bits> excess_risk=<er|na> null_messages=<n>
inline std::string transcript_to_text(const RunTranscript& tr,
                                      const std::string& problem_name) {
  std::ostringstream out;
  out << "# charter-transcript v1\n";
  out << "config problem=" << problem_name << " d=" << tr.params.d
      << " M=" << tr.params.M << " N=" << tr.params.N
      << " R=" << format_double(tr.params.R)
      << " eps=" << (tr.privacy.non_private()
                         ? std::string("inf")
                         : format_double(tr.privacy.eps_dp))
      << " delta=" << format_double(tr.privacy.delta_dp)
      << " delta_err=" << format_double(tr.privacy.delta_err)
      << " gamma=" << format_double(tr.gamma)
      << " eta=" << format_double(tr.eta)
      << " center_tol=" << format_double(tr.center_tol) << " seed=" << tr.seed
      << " K=" << tr.params.K << " J0=" << tr.params.J0
      << " J1=" << tr.params.J1 << "\n";
  for (std::size_t k = 0; k < tr.grad_messages.size(); ++k)
    for (std::size_t m = 0; m < tr.grad_messages[k].size(); ++m)
      out << "msg round=" << k << " client=" << m << " stage=grad bits="
          << tr.grad_messages[k][m].bit_count << "\n";
  for (std::size_t m = 0; m < tr.loss_messages.size(); ++m)
    out << "msg round=-1 client=" << m
        << " stage=loss bits=" << tr.loss_messages[m].bit_count << "\n";
  out << "summary k_star=" << tr.k_star
      << " cc_bits=" << format_double(tr.cc_bits) << " excess_risk="
      << (tr.er.has_value() ? format_double(*tr.er) : std::string("na"))
      << " null_messages=" << tr.null_message_count << "\n";
  return out.str();
}

}  // namespace charter
