#include <catch2/catch_amalgamated.hpp>

#include <charter/dpsgd.hpp>
#include <charter/orchestrator.hpp>

#include <cmath>
#include <string>
#include <vector>

using namespace charter;
using Catch::Approx;

namespace {

Problem shifted_max_abs(int d, double sigma_g, double sigma_f,
                        std::vector<double> shift, std::uint64_t seed = 3) {
  ProblemSpec spec;
  spec.key = "max_abs";
  spec.d = d;
  spec.side = 2.0;
  spec.sigma_g = sigma_g;
  spec.sigma_f = sigma_f;
  spec.seed = seed;
  Eigen::VectorXd s(d);
  for (int i = 0; i < d; ++i) s(i) = shift[static_cast<std::size_t>(i)];
  spec.shift = s;
  return make_max_abs_problem(spec);
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_CASE("select_kstar picks the lowest index attaining the minimum") {
  CHECK(select_kstar({3.0, 1.0, 2.0, 1.0}) == 1);
  CHECK(select_kstar({5.0}) == 0);
  CHECK(select_kstar({2.0, 2.0}) == 0);
  CHECK_THROWS_AS(select_kstar({}), InvalidInput);
}

TEST_CASE("transcript bookkeeping matches a from-scratch recount") {
  Problem prob = shifted_max_abs(2, 1.0, 1.0, {0.3, -0.25});

  DerivedParams p;
  p.d = 2;
  p.M = 3;
  p.N = 12;
  p.R = 2.0;
  p.sigma_g = 1.0;
  p.sigma_f = 1.0;
  p.gamma = 0.05;
  p.K = 6;
  p.G0 = 2.0;
  p.G1 = 3.0;
  p.sigma0_sq = 0.0;
  p.sigma1_sq = 0.0;
  p.D0 = 1.5;
  p.D1 = 2.0;
  p.J0 = 8;
  p.J1 = 6;
  REQUIRE(p.batch_size() == 1);

  PrivacyParams pv;  // non-private
  VaidyaConfig cfg;
  RunTranscript tr = run_charter_with_params(prob, p, pv, cfg, 11);

  REQUIRE(tr.iterates.size() == 7);
  CHECK(tr.steps.size() == 6);
  REQUIRE(tr.grad_messages.size() == 6);
  REQUIRE(tr.aggregated_gradients.size() == 6);
  REQUIRE(tr.all_null_round.size() == 6);
  CHECK_FALSE(tr.ledger.has_value());

  // Every iterate stays inside the domain box.
  for (const auto& x : tr.iterates) {
    REQUIRE(x.size() == 2);
    CHECK((x - prob.domain_center).lpNorm<Eigen::Infinity>() < 1.0);
  }

  // Recount the gradient aggregation per round from the stored messages.
  int nulls = 0;
  for (std::size_t k = 0; k < tr.grad_messages.size(); ++k) {
    REQUIRE(tr.grad_messages[k].size() == 3);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(2);
    int contributors = 0;
    for (const auto& msg : tr.grad_messages[k]) {
      CHECK(msg.round == static_cast<int>(k));
      if (msg.null_message) {
        CHECK(msg.bit_count == 1);
        CHECK(msg.payload.size() == 0);
        ++nulls;
      } else {
        CHECK(msg.bit_count == 2 * 8);
        REQUIRE(msg.payload.size() == 2);
        sum += msg.payload;
        ++contributors;
      }
    }
    CHECK(tr.all_null_round[k] == (contributors == 0));
    Eigen::VectorXd expect = contributors == 0
                                 ? Eigen::VectorXd::Zero(2).eval()
                                 : (sum / contributors).eval();
    CHECK((tr.aggregated_gradients[k] - expect).lpNorm<Eigen::Infinity>() ==
          0.0);
  }
  CHECK(tr.null_message_count == nulls);

  // Loss messages: one per client, one value per iterate, J1 bits each.
  REQUIRE(tr.loss_messages.size() == 3);
  REQUIRE(tr.avg_loss_estimates.size() == 7);
  for (const auto& lm : tr.loss_messages) {
    REQUIRE(lm.values.size() == 7);
    CHECK(lm.bit_count == 7 * 6);
  }
  for (std::size_t k = 0; k < 7; ++k) {
    double avg = 0.0;
    for (const auto& lm : tr.loss_messages) avg += lm.values[k] / 3.0;
    CHECK(tr.avg_loss_estimates[k] == avg);
  }

  CHECK(tr.k_star == select_kstar(tr.avg_loss_estimates));
  CHECK((tr.output - tr.iterates[static_cast<std::size_t>(tr.k_star)])
            .lpNorm<Eigen::Infinity>() == 0.0);

  // Communication: exact mean of the per-message bit counts.
  double bits = 0.0;
  for (const auto& round : tr.grad_messages)
    for (const auto& msg : round) bits += static_cast<double>(msg.bit_count);
  for (const auto& lm : tr.loss_messages)
    bits += static_cast<double>(lm.bit_count);
  CHECK(tr.cc_bits == bits / 3.0);

  REQUIRE(tr.er.has_value());
  CHECK(*tr.er == excess_risk(prob, tr.output));

  // Serialized transcript: header + config + 18 grad + 3 loss + summary.
  std::string text = transcript_to_text(tr, "max_abs");
  CHECK(count_lines(text) == 24);
  CHECK(text.rfind("# charter-transcript v1\n", 0) == 0);
  CHECK(text.find("config problem=max_abs d=2 M=3 N=12 ") != std::string::npos);
  CHECK(text.find("eps=inf") != std::string::npos);
  CHECK(text.find("K=6 J0=8 J1=6\n") != std::string::npos);
  CHECK(text.find("msg round=0 client=0 stage=grad bits=") != std::string::npos);
  CHECK(text.find("msg round=-1 client=2 stage=loss bits=42") !=
        std::string::npos);
  CHECK(text.find("summary k_star=") != std::string::npos);

  // Same seed replays bit-identically; a different seed does not.
  RunTranscript tr2 = run_charter_with_params(prob, p, pv, cfg, 11);
  CHECK(tr2.k_star == tr.k_star);
  CHECK((tr2.output - tr.output).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK(tr2.cc_bits == tr.cc_bits);
  CHECK(transcript_to_text(tr2, "max_abs") == text);

  RunTranscript tr3 = run_charter_with_params(prob, p, pv, cfg, 12);
  CHECK((tr3.output - tr.output).lpNorm<Eigen::Infinity>() > 0.0);
}

TEST_CASE("run_charter enforces the freshness floor unless overridden") {
  Problem prob = shifted_max_abs(2, 1.0, 1.0, {0.3, -0.25});
  PrivacyParams pv;
  VaidyaConfig cfg;
  cfg.gamma = 0.05;
  try {
    run_charter(prob, 1, 100, pv, cfg, 1);
    FAIL("expected ConfigRejected");
  } catch (const ConfigRejected& e) {
    std::string msg = e.what();
    CHECK(msg.find("override_n_floor") != std::string::npos);
    CHECK(msg.find("N=100") != std::string::npos);
  }
}

TEST_CASE("private run builds an enforced ledger") {
  Problem prob = shifted_max_abs(2, 1.0, 1.0, {0.3, -0.25}, 5);
  PrivacyParams pv;
  pv.eps_dp = 0.05;
  pv.delta_dp = 1e-5;
  pv.delta_err = 0.1;
  VaidyaConfig cfg;
  cfg.gamma = 0.15;

  RunTranscript tr = run_charter(prob, 1, 4000, pv, cfg, 5, true);
  const DerivedParams& p = tr.params;
  CHECK(p.K == 360);
  CHECK(tr.iterates.size() == 361);

  REQUIRE(tr.ledger.has_value());
  const CharterLedger& lg = *tr.ledger;
  CHECK(lg.eps_learning > 0.0);
  CHECK(lg.eps_learning <= 0.05 * (1 + 1e-9));
  CHECK(lg.eps_verification > 0.0);
  CHECK(lg.eps_verification <= 0.05 * (1 + 1e-9));
  REQUIRE(lg.entries.entries.size() == 2);
  CHECK(lg.entries.entries[0].mechanism == "gaussian/gradient-round");
  CHECK(lg.entries.entries[1].mechanism == "gaussian/loss-estimate");

  // Nulls cost 1 bit, so realized communication sits between the all-null
  // and never-null extremes.
  double K = static_cast<double>(p.K);
  CHECK(tr.cc_bits <= p.cc_bits());
  CHECK(tr.cc_bits >= K + (K + 1) * p.J1);
  CHECK(tr.er.has_value());
}

TEST_CASE("run_charter_with_params rejects inconsistent inputs") {
  Problem prob = shifted_max_abs(2, 1.0, 1.0, {0.3, -0.25});
  DerivedParams p;
  p.d = 3;  // mismatch
  p.M = 2;
  p.N = 12;
  p.R = 2.0;
  p.gamma = 0.05;
  p.K = 4;
  p.G0 = 2.0;
  p.G1 = 3.0;
  p.D0 = 1.0;
  p.D1 = 1.0;
  p.J0 = 4;
  p.J1 = 4;
  PrivacyParams pv;
  VaidyaConfig cfg;
  CHECK_THROWS_AS(run_charter_with_params(prob, p, pv, cfg, 1), InvalidInput);

  p.d = 2;
  p.M = 0;
  CHECK_THROWS_AS(run_charter_with_params(prob, p, pv, cfg, 1), InvalidInput);
}

TEST_CASE("dpsgd baseline: bookkeeping, determinism, progress") {
  Problem prob = shifted_max_abs(2, 0.3, 0.3, {0.45, -0.4});
  PrivacyParams pv;  // non-private
  DpSgdConfig cfg;
  cfg.rounds = 400;

  DpSgdResult r = run_dpsgd(prob, 1, 2000, pv, cfg, 21);
  CHECK(r.cc_bits == 400.0 * 2 * 32);
  CHECK(r.noise_sigma_sq == 0.0);
  CHECK(r.eps_round == 0.0);
  REQUIRE(r.output.size() == 2);
  CHECK((r.output - prob.domain_center).lpNorm<Eigen::Infinity>() <= 1.0);

  // The averaged iterate beats the starting point by a wide margin.
  double er_center = excess_risk(prob, prob.domain_center);
  double er_out = excess_risk(prob, r.output);
  CHECK(er_center == Approx(0.45));
  CHECK(er_out < 0.6 * er_center);

  DpSgdResult again = run_dpsgd(prob, 1, 2000, pv, cfg, 21);
  CHECK((again.output - r.output).lpNorm<Eigen::Infinity>() == 0.0);
  DpSgdResult other = run_dpsgd(prob, 1, 2000, pv, cfg, 22);
  CHECK((other.output - r.output).lpNorm<Eigen::Infinity>() > 0.0);

  CHECK_THROWS_AS(run_dpsgd(prob, 0, 2000, pv, cfg, 1), InvalidInput);
  DpSgdConfig bad = cfg;
  bad.rounds = 0;
  CHECK_THROWS_AS(run_dpsgd(prob, 1, 2000, pv, bad, 1), InvalidInput);
}

TEST_CASE("dpsgd private mode stays within its per-round budget") {
  Problem prob = shifted_max_abs(2, 0.3, 0.3, {0.45, -0.4});
  PrivacyParams pv;
  pv.eps_dp = 0.5;
  pv.delta_dp = 1e-5;
  DpSgdConfig cfg;
  cfg.rounds = 50;

  DpSgdResult r = run_dpsgd(prob, 1, 5000, pv, cfg, 9);
  CHECK(r.eps_round > 0.0);
  CHECK(r.eps_round < 1.0);
  CHECK(r.noise_sigma_sq > 0.0);
  CHECK(r.cc_bits == 50.0 * 2 * 32);
  CHECK((r.output - prob.domain_center).lpNorm<Eigen::Infinity>() <= 1.0);

  DpSgdResult again = run_dpsgd(prob, 1, 5000, pv, cfg, 9);
  CHECK((again.output - r.output).lpNorm<Eigen::Infinity>() == 0.0);
}
