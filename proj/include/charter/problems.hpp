#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "charter/errors.hpp"
#include "charter/rng.hpp"

namespace charter {

// A distributed stochastic convex problem over a hypercube domain.
//
// Synthetic data points are pure noise realizations indexed by
// (client, index): the sampled subgradient at x is grad_mean(x, client) +
// grad_noise(client, index) and the sampled loss is loss_mean(x, client) +
// loss_noise(client, index). Identical indices always reproduce the same
// draw, which gives datasets stable identities without materializing them.
struct Problem {
  std::string name;
  int d = 0;
  Eigen::VectorXd domain_center;
  double side = 0.0;     // hypercube side length (the R fed to derive_params)
  double sigma_g = 0.0;  // sub-Gaussian scale of grad_noise, E||xi||^2 = sigma_g^2
  double sigma_f = 0.0;  // standard deviation of loss_noise

  std::function<Eigen::VectorXd(const Eigen::VectorXd&, int)> grad_mean;
  std::function<Eigen::VectorXd(int, std::int64_t)> grad_noise;
  std::function<double(const Eigen::VectorXd&, int)> loss_mean;
  std::function<double(int, std::int64_t)> loss_noise;

  // Population quantities when available in closed form.
  std::function<double(const Eigen::VectorXd&)> true_loss;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> true_grad;
  std::optional<double> optimal_value;

  Eigen::VectorXd grad_sample(const Eigen::VectorXd& x, int client,
                              std::int64_t index) const {
    return grad_mean(x, client) + grad_noise(client, index);
  }
  double loss_sample(const Eigen::VectorXd& x, int client,
                     std::int64_t index) const {
    return loss_mean(x, client) + loss_noise(client, index);
  }
};

inline double excess_risk(const Problem& prob, const Eigen::VectorXd& x) {
  if (!prob.true_loss || !prob.optimal_value.has_value())
    throw OracleUnavailable("excess_risk: problem lacks a population loss");
  return prob.true_loss(x) - *prob.optimal_value;
}

namespace detail {

// Gaussian noise vector with covariance (sigma^2 / d) I, so that
// E||xi||^2 = sigma^2 and every unit direction is sigma^2/d sub-Gaussian.
inline Eigen::VectorXd isotropic_noise(int d, double sigma,
                                       std::uint64_t data_seed, int client,
                                       std::int64_t index) {
  Eigen::VectorXd out(d);
  if (sigma == 0) {
    out.setZero();
    return out;
  }
  RngStream rng = RngStream::derive(data_seed, kStreamData, 2 * 1000003 + 1,
                                    static_cast<std::uint64_t>(client),
                                    static_cast<std::uint64_t>(index));
  const double scale = sigma / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i) out(i) = scale * rng.normal();
  return out;
}

inline double scalar_noise(double sigma, std::uint64_t data_seed, int client,
                           std::int64_t index) {
  if (sigma == 0) return 0.0;
  RngStream rng = RngStream::derive(data_seed, kStreamData, 2 * 1000003,
                                    static_cast<std::uint64_t>(client),
                                    static_cast<std::uint64_t>(index));
  return sigma * rng.normal();
}

}  // namespace detail

// ---- Hard instance ---------------------------------------------------------
//
// f(x) = alpha * max_i |a_i'x - b_i / sqrt(d)| over an orthonormal basis
// {a_i} and signs b in {-1, +1}^d. The minimizer x* = (1/sqrt(d)) sum_i b_i a_i
// has f(x*) = 0 and unit norm. The active index i(x) is the lowest argmax
// and s_i(x) = sign(a_i'x - b_i / sqrt(d)) with +1 on ties.
struct HardInstance {
  Eigen::MatrixXd basis;  // columns a_1..a_d, orthonormal
  Eigen::VectorXd signs;  // entries in {-1, +1}
  double alpha = 1.0;
  double sigma = 1.0;  // oracle noise scale; doubles as sigma_g

  int dim() const { return static_cast<int>(basis.cols()); }

  Eigen::VectorXd minimizer() const {
    return basis * signs / std::sqrt(static_cast<double>(dim()));
  }

  // Per-piece residuals a_i'x - b_i / sqrt(d).
  Eigen::VectorXd residuals(const Eigen::VectorXd& x) const {
    return basis.transpose() * x -
           signs / std::sqrt(static_cast<double>(dim()));
  }

  double value(const Eigen::VectorXd& x) const {
    return alpha * residuals(x).cwiseAbs().maxCoeff();
  }

  int active_index(const Eigen::VectorXd& x) const {
    Eigen::VectorXd r = residuals(x).cwiseAbs();
    int best = 0;
    for (int i = 1; i < r.size(); ++i)
      if (r(i) > r(best)) best = i;  // strict '>' keeps the lowest index
    return best;
  }

  double active_sign(const Eigen::VectorXd& x) const {
    int i = active_index(x);
    return residuals(x)(i) >= 0 ? 1.0 : -1.0;
  }

  // Exact subgradient alpha * s_i(x) * a_i of the max at x.
  Eigen::VectorXd subgradient(const Eigen::VectorXd& x) const {
    int i = active_index(x);
    double s = residuals(x)(i) >= 0 ? 1.0 : -1.0;
    return alpha * s * basis.col(i);
  }
};

// Orthonormal basis from the QR factorization of a seeded Gaussian matrix,
// with signs fixed so the factorization is unique (positive R diagonal).
inline Eigen::MatrixXd random_orthonormal_basis(int d, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, kStreamProblem, 1);
  Eigen::MatrixXd G(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) G(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (R(j, j) < 0) Q.col(j) = -Q.col(j);
  return Q;
}

inline HardInstance make_hard_instance(int d, double alpha, double sigma,
                                       std::uint64_t seed) {
  if (d < 1 || !(alpha > 0) || !(sigma >= 0))
    throw InvalidInput("make_hard_instance: bad parameters");
  HardInstance inst;
  inst.basis = random_orthonormal_basis(d, seed);
  RngStream rng = RngStream::derive(seed, kStreamProblem, 2);
  inst.signs.resize(d);
  for (int i = 0; i < d; ++i)
    inst.signs(i) = rng.uniform01() < 0.5 ? -1.0 : 1.0;
  inst.alpha = alpha;
  inst.sigma = sigma;
  return inst;
}

// Noisy subgradient oracle: alpha * s_i(x) * a_i(x) + N(0, (sigma^2/d) I).
inline Eigen::VectorXd hard_instance_oracle(const HardInstance& inst,
                                            const Eigen::VectorXd& x,
                                            RngStream& rng) {
  Eigen::VectorXd g = inst.subgradient(x);
  const double scale = inst.sigma / std::sqrt(static_cast<double>(inst.dim()));
  for (int i = 0; i < g.size(); ++i) g(i) += scale * rng.normal();
  return g;
}

// Decomposed oracle: noisy active direction with a noiseless sign bit.
struct HardOracleSplit {
  Eigen::VectorXd direction;  // alpha * a_i(x) + N(0, (sigma^2/d) I)
  double sign = 1.0;          // s_i(x), exact
};

inline HardOracleSplit hard_instance_oracle_split(const HardInstance& inst,
                                                  const Eigen::VectorXd& x,
                                                  RngStream& rng) {
  HardOracleSplit out;
  int i = inst.active_index(x);
  out.sign = inst.residuals(x)(i) >= 0 ? 1.0 : -1.0;
  out.direction = inst.alpha * inst.basis.col(i);
  const double scale = inst.sigma / std::sqrt(static_cast<double>(inst.dim()));
  for (int j = 0; j < out.direction.size(); ++j)
    out.direction(j) += scale * rng.normal();
  return out;
}

// ---- Problem catalog -------------------------------------------------------

struct ProblemSpec {
  std::string key;
  int d = 2;
  double side = 2.0;                 // domain [-side/2, side/2]^d around center
  Eigen::VectorXd center;            // defaults to the origin
  double sigma_g = 1.0;
  double sigma_f = 1.0;
  double alpha = 1.0;                // hard instance scale
  Eigen::VectorXd shift;             // max_abs target (defaults provided)
  std::uint64_t seed = 1;            // basis / shifts / data draws
};

inline std::vector<std::string> builtin_problem_keys() {
  return {"hard_instance", "max_abs", "hetero_quadratic"};
}

// f(x) = alpha * max_i |a_i'x - b_i/sqrt(d)|, identical across clients.
inline Problem make_hard_instance_problem(ProblemSpec spec) {
  auto inst = std::make_shared<HardInstance>(
      make_hard_instance(spec.d, spec.alpha, spec.sigma_g, spec.seed));
  Problem p;
  p.name = "hard_instance";
  p.d = spec.d;
  p.domain_center = spec.center.size() ? spec.center
                                       : Eigen::VectorXd::Zero(spec.d);
  p.side = spec.side;
  p.sigma_g = spec.sigma_g;
  p.sigma_f = spec.sigma_f;
  const std::uint64_t data_seed = spec.seed;
  const int d = spec.d;
  const double sg = spec.sigma_g, sf = spec.sigma_f;
  p.grad_mean = [inst](const Eigen::VectorXd& x, int) {
    return inst->subgradient(x);
  };
  p.grad_noise = [d, sg, data_seed](int client, std::int64_t index) {
    return detail::isotropic_noise(d, sg, data_seed, client, index);
  };
  p.loss_mean = [inst](const Eigen::VectorXd& x, int) {
    return inst->value(x);
  };
  p.loss_noise = [sf, data_seed](int client, std::int64_t index) {
    return detail::scalar_noise(sf, data_seed, client, index);
  };
  p.true_loss = [inst](const Eigen::VectorXd& x) { return inst->value(x); };
  p.true_grad = [inst](const Eigen::VectorXd& x) {
    return inst->subgradient(x);
  };
  p.optimal_value = 0.0;
  return p;
}

// f(x) = max_i |x_i - c_i|; 1-Lipschitz, minimized at c with value 0.
inline Problem make_max_abs_problem(ProblemSpec spec) {
  Eigen::VectorXd target = spec.shift;
  if (!target.size()) {
    // Deterministic default inside the middle of the domain.
    target = Eigen::VectorXd::Zero(spec.d);
    RngStream rng = RngStream::derive(spec.seed, kStreamProblem, 3);
    for (int i = 0; i < spec.d; ++i)
      target(i) = (rng.uniform01() - 0.5) * spec.side / 2.0;
  }
  if (target.size() != spec.d)
    throw InvalidInput("make_max_abs_problem: shift has wrong dimension");
  Problem p;
  p.name = "max_abs";
  p.d = spec.d;
  p.domain_center = spec.center.size() ? spec.center
                                       : Eigen::VectorXd::Zero(spec.d);
  p.side = spec.side;
  p.sigma_g = spec.sigma_g;
  p.sigma_f = spec.sigma_f;
  const std::uint64_t data_seed = spec.seed;
  const int d = spec.d;
  const double sg = spec.sigma_g, sf = spec.sigma_f;
  auto subgrad = [target](const Eigen::VectorXd& x) {
    Eigen::VectorXd r = x - target;
    int best = 0;
    for (int i = 1; i < r.size(); ++i)
      if (std::abs(r(i)) > std::abs(r(best))) best = i;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(r.size());
    g(best) = r(best) >= 0 ? 1.0 : -1.0;
    return g;
  };
  auto value = [target](const Eigen::VectorXd& x) {
    return (x - target).cwiseAbs().maxCoeff();
  };
  p.grad_mean = [subgrad](const Eigen::VectorXd& x, int) { return subgrad(x); };
  p.grad_noise = [d, sg, data_seed](int client, std::int64_t index) {
    return detail::isotropic_noise(d, sg, data_seed, client, index);
  };
  p.loss_mean = [value](const Eigen::VectorXd& x, int) { return value(x); };
  p.loss_noise = [sf, data_seed](int client, std::int64_t index) {
    return detail::scalar_noise(sf, data_seed, client, index);
  };
  p.true_loss = value;
  p.true_grad = subgrad;
  p.optimal_value = 0.0;
  return p;
}

// Client-heterogeneous quadratic: client m draws gradients centered at
// q (x - t_m), so the population loss is
//   L(x) = (q/2) ||x - tbar||^2 + (q/2) mean_m ||t_m - tbar||^2
// with q = 1 / (side * sqrt(d)) keeping ||grad L|| <= 1 on the domain.
// The number of clients only enters through the shifts t_m, which are
// deterministic in (seed, m), so any M is supported.
inline Problem make_hetero_quadratic_problem(ProblemSpec spec, int M) {
  if (M < 1) throw InvalidInput("make_hetero_quadratic_problem: M >= 1");
  const int d = spec.d;
  Eigen::VectorXd center =
      spec.center.size() ? spec.center : Eigen::VectorXd::Zero(d);
  auto shifts = std::make_shared<std::vector<Eigen::VectorXd>>();
  shifts->reserve(M);
  Eigen::VectorXd tbar = Eigen::VectorXd::Zero(d);
  for (int m = 0; m < M; ++m) {
    RngStream rng = RngStream::derive(spec.seed, kStreamProblem, 4, m);
    Eigen::VectorXd t(d);
    for (int i = 0; i < d; ++i)
      t(i) = center(i) + (rng.uniform01() - 0.5) * spec.side / 2.0;
    shifts->push_back(t);
    tbar += t;
  }
  tbar /= static_cast<double>(M);
  double spread = 0.0;
  for (const auto& t : *shifts) spread += (t - tbar).squaredNorm();
  spread /= static_cast<double>(M);
  const double q = 1.0 / (spec.side * std::sqrt(static_cast<double>(d)));

  Problem p;
  p.name = "hetero_quadratic";
  p.d = d;
  p.domain_center = center;
  p.side = spec.side;
  p.sigma_g = spec.sigma_g;
  p.sigma_f = spec.sigma_f;
  const std::uint64_t data_seed = spec.seed;
  const double sg = spec.sigma_g, sf = spec.sigma_f;
  p.grad_mean = [shifts, q](const Eigen::VectorXd& x, int client) {
    const auto& t = shifts->at(static_cast<std::size_t>(client));
    return Eigen::VectorXd(q * (x - t));
  };
  p.grad_noise = [d, sg, data_seed](int client, std::int64_t index) {
    return detail::isotropic_noise(d, sg, data_seed, client, index);
  };
  p.loss_mean = [shifts, q](const Eigen::VectorXd& x, int client) {
    const auto& t = shifts->at(static_cast<std::size_t>(client));
    return 0.5 * q * (x - t).squaredNorm();
  };
  p.loss_noise = [sf, data_seed](int client, std::int64_t index) {
    return detail::scalar_noise(sf, data_seed, client, index);
  };
  p.true_loss = [tbar, q, spread](const Eigen::VectorXd& x) {
    return 0.5 * q * ((x - tbar).squaredNorm() + spread);
  };
  p.true_grad = [tbar, q](const Eigen::VectorXd& x) {
    return Eigen::VectorXd(q * (x - tbar));
  };
  p.optimal_value = 0.5 * q * spread;
  return p;
}

// M is needed only by the heterogeneous family; the others ignore it.
inline Problem make_builtin_problem(const ProblemSpec& spec, int M) {
  if (spec.key == "hard_instance") return make_hard_instance_problem(spec);
  if (spec.key == "max_abs") return make_max_abs_problem(spec);
  if (spec.key == "hetero_quadratic")
    return make_hetero_quadratic_problem(spec, M);
  throw UnknownProblem("make_builtin_problem: unknown key '" + spec.key + "'");
}

}  // namespace charter
