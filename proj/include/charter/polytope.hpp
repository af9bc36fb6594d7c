#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "charter/errors.hpp"

namespace charter {

// Bounded polyhedron P = {x : Ax >= b}. Rows are kept at unit Euclidean
// norm (b is rescaled on insertion), which fixes the scale of slacks and
// leverage scores. An interior point is carried along as a warm start.
struct Polyhedron {
  Eigen::MatrixXd A;         // p x d, unit-norm rows
  Eigen::VectorXd b;         // p
  Eigen::VectorXd interior;  // strictly feasible point

  int dim() const { return static_cast<int>(A.cols()); }
  int rows() const { return static_cast<int>(A.rows()); }

  Eigen::VectorXd slacks(const Eigen::VectorXd& x) const { return A * x - b; }

  // Axis-aligned hypercube of the given side length centered at `center`.
  static Polyhedron hypercube(const Eigen::VectorXd& center, double side) {
    const int d = static_cast<int>(center.size());
    if (d < 1 || !(side > 0) || !std::isfinite(side) || !center.allFinite())
      throw InvalidInput("hypercube: need d >= 1 and finite side > 0");
    Polyhedron P;
    P.A = Eigen::MatrixXd::Zero(2 * d, d);
    P.b = Eigen::VectorXd::Zero(2 * d);
    const double h = side / 2.0;
    for (int i = 0; i < d; ++i) {
      P.A(i, i) = 1.0;            //  x_i >= c_i - h
      P.b(i) = center(i) - h;
      P.A(d + i, i) = -1.0;       // -x_i >= -(c_i + h)
      P.b(d + i) = -(center(i) + h);
    }
    P.interior = center;
    return P;
  }

  // Builds from raw rows; normalizes each row and validates interiority.
  static Polyhedron from_rows(Eigen::MatrixXd A, Eigen::VectorXd b,
                              Eigen::VectorXd interior_point) {
    const int p = static_cast<int>(A.rows());
    const int d = static_cast<int>(A.cols());
    if (d < 1 || p < d + 1 || b.size() != p || interior_point.size() != d)
      throw InvalidInput("from_rows: need p >= d + 1 and consistent shapes");
    if (!A.allFinite() || !b.allFinite() || !interior_point.allFinite())
      throw InvalidInput("from_rows: non-finite input");
    for (int i = 0; i < p; ++i) {
      double n = A.row(i).norm();
      if (n < 1e-300) throw InvalidInput("from_rows: zero row");
      A.row(i) /= n;
      b(i) /= n;
    }
    Polyhedron P{std::move(A), std::move(b), std::move(interior_point)};
    if ((P.A * P.interior - P.b).minCoeff() <= 0)
      throw NotInterior("from_rows: supplied point is not strictly interior");
    return P;
  }

  // Appends the halfspace {x : a'x >= beta}; (a, beta) is rescaled so the
  // stored row has unit norm (the halfspace is unchanged).
  void add_row(const Eigen::VectorXd& a, double beta) {
    double n = a.norm();
    if (!(n > 1e-300) || !a.allFinite() || !std::isfinite(beta))
      throw InvalidInput("add_row: degenerate row");
    const int p = rows();
    A.conservativeResize(p + 1, Eigen::NoChange);
    b.conservativeResize(p + 1);
    A.row(p) = a.transpose() / n;
    b(p) = beta / n;
  }

  void drop_row(int i) {
    const int p = rows();
    if (i < 0 || i >= p) throw InvalidInput("drop_row: index out of range");
    if (i < p - 1) {
      A.block(i, 0, p - 1 - i, dim()) = A.bottomRows(p - 1 - i).eval();
      b.segment(i, p - 1 - i) = b.tail(p - 1 - i).eval();
    }
    A.conservativeResize(p - 1, Eigen::NoChange);
    b.conservativeResize(p - 1);
  }
};

// Snapshot of the volumetric barrier at a strictly interior point:
//   H(x)     = sum_i a_i a_i' / s_i(x)^2,  s_i(x) = a_i'x - b_i
//   V(x)     = (1/2) log det H(x)
//   sigma_i  = a_i' H^{-1} a_i / s_i^2     (leverage scores)
struct BarrierState {
  Eigen::VectorXd x;
  Eigen::VectorXd slacks;
  Eigen::VectorXd sigmas;
  Eigen::MatrixXd H;
  Eigen::LDLT<Eigen::MatrixXd> Hfact;
  double V = 0.0;
  double min_sigma = std::numeric_limits<double>::infinity();
  int argmin_sigma = -1;  // lowest index among ties
};

namespace detail {

// Scaled constraint matrix with rows a_i / s_i. H = At' At.
inline Eigen::MatrixXd scaled_rows(const Polyhedron& P,
                                   const Eigen::VectorXd& slacks) {
  return P.A.array().colwise() / slacks.array();
}

inline void factor_or_throw(const Eigen::MatrixXd& H,
                            Eigen::LDLT<Eigen::MatrixXd>& fact,
                            double* logdet_out) {
  fact.compute(H);
  const double d = static_cast<double>(H.rows());
  const double pivot_floor = 1e-12 * H.trace() / d;
  const auto& D = fact.vectorD();
  double logdet = 0.0;
  for (int i = 0; i < D.size(); ++i) {
    if (!(D(i) > pivot_floor))
      throw SingularH("volumetric barrier: H is numerically singular");
    logdet += std::log(D(i));
  }
  if (fact.info() != Eigen::Success)
    throw SingularH("volumetric barrier: factorization failed");
  if (logdet_out) *logdet_out = logdet;
}

}  // namespace detail

inline BarrierState compute_barrier_state(const Polyhedron& P,
                                          const Eigen::VectorXd& x) {
  if (x.size() != P.dim() || !x.allFinite())
    throw InvalidInput("compute_barrier_state: bad point");
  BarrierState st;
  st.x = x;
  st.slacks = P.slacks(x);
  if (!(st.slacks.minCoeff() > 0))
    throw NotInterior("compute_barrier_state: point is not strictly interior");
  Eigen::MatrixXd At = detail::scaled_rows(P, st.slacks);
  st.H = At.transpose() * At;
  double logdet = 0.0;
  detail::factor_or_throw(st.H, st.Hfact, &logdet);
  st.V = 0.5 * logdet;

  // sigma_i = at_i' H^{-1} at_i where at_i = a_i / s_i.
  Eigen::MatrixXd X = st.Hfact.solve(At.transpose());  // d x p
  const int p = P.rows();
  st.sigmas.resize(p);
  for (int i = 0; i < p; ++i) {
    double s = At.row(i).dot(X.col(i));
    st.sigmas(i) = s;
    if (s < st.min_sigma) {  // strict '<' keeps the lowest index on ties
      st.min_sigma = s;
      st.argmin_sigma = i;
    }
  }
  return st;
}

inline double barrier_value(const Polyhedron& P, const Eigen::VectorXd& x) {
  return compute_barrier_state(P, x).V;
}

inline Eigen::VectorXd leverage_scores(const Polyhedron& P,
                                       const Eigen::VectorXd& x) {
  return compute_barrier_state(P, x).sigmas;
}

// Damped Newton minimization of V from `warm`. Terminates when the
// gradient's H^{-1}-norm drops to `tol`. Steps are backtracked until
// every slack stays at or above half its pre-step value and V decreases
// (Armijo). Uses the exact Hessian
//   grad V = -At' sigma,   hess V = At' (3 diag(sigma) - 2 S.S) At
// with S = At H^{-1} At' (Hadamard square), falling back to the classical
// surrogate At' diag(sigma) At if the exact Hessian fails to factor.
inline BarrierState volumetric_center(const Polyhedron& P,
                                      const Eigen::VectorXd& warm, double tol,
                                      int max_iter = 200) {
  if (!(tol > 0)) throw InvalidInput("volumetric_center: tol must be > 0");
  Eigen::VectorXd x = warm;
  BarrierState st = compute_barrier_state(P, x);
  for (int iter = 0; iter < max_iter; ++iter) {
    Eigen::MatrixXd At = detail::scaled_rows(P, st.slacks);
    Eigen::VectorXd grad = -(At.transpose() * st.sigmas);
    double hnorm = std::sqrt(grad.dot(st.Hfact.solve(grad)));
    if (hnorm <= tol) return st;

    Eigen::MatrixXd S = At * st.Hfact.solve(At.transpose());
    Eigen::MatrixXd M =
        (-2.0 * S.array().square()).matrix();
    M.diagonal() += 3.0 * st.sigmas;
    Eigen::MatrixXd hess = At.transpose() * M * At;
    Eigen::LDLT<Eigen::MatrixXd> hfact(hess);
    bool ok = hfact.info() == Eigen::Success && hfact.vectorD().minCoeff() > 0;
    if (!ok) {
      hess = At.transpose() * st.sigmas.asDiagonal() * At;
      hfact.compute(hess);
      if (hfact.info() != Eigen::Success || hfact.vectorD().minCoeff() <= 0)
        throw SingularH("volumetric_center: Hessian factorization failed");
    }
    Eigen::VectorXd step = hfact.solve(-grad);
    double decrement = grad.dot(step);  // negative for a descent direction
    if (!(decrement < 0)) {
      // Numerically flat; treat as converged if the gradient is small.
      if (hnorm <= 10 * tol) return st;
      throw NoConvergence("volumetric_center: lost descent direction");
    }
    // Predicted decrease below the resolution of V in doubles: no
    // representable descent remains, x is the center to machine precision.
    if (-0.5 * decrement <= 4.0 * std::numeric_limits<double>::epsilon() *
                                std::max(1.0, std::abs(st.V)))
      return st;

    double t = 1.0;
    bool accepted = false;
    while (t >= 0x1.0p-40) {
      Eigen::VectorXd xn = x + t * step;
      Eigen::VectorXd sn = P.slacks(xn);
      if ((sn.array() >= 0.5 * st.slacks.array()).all()) {
        BarrierState cand = compute_barrier_state(P, xn);
        if (cand.V <= st.V + 1e-4 * t * decrement) {
          x = xn;
          st = std::move(cand);
          accepted = true;
          break;
        }
      }
      t *= 0.5;
    }
    if (!accepted)
      throw NoConvergence("volumetric_center: line search failed");
  }
  throw NoConvergence("volumetric_center: iteration cap exceeded");
}

}  // namespace charter
