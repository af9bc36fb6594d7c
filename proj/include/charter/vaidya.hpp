#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "charter/errors.hpp"
#include "charter/polytope.hpp"

namespace charter {

struct VaidyaConfig {
  // Depth and drop-threshold constants. A fresh cut enters with leverage
  // (1/2)sqrt(eta*gamma); it must sit above gamma with margin (eta > 4*gamma)
  // or the very row just added becomes the next drop candidate.
  double eta = 0.8;
  double gamma = 0.05;
  int max_rows = 2048;     // hard cap on tracked constraints
  double center_tol = 1e-8;
  int center_max_iter = 200;
  int K = 0;               // number of cutting rounds
};

inline void validate(const VaidyaConfig& cfg) {
  if (!(cfg.eta > 0) || !(cfg.eta < 1) || !(cfg.gamma > 0) ||
      !(cfg.gamma < 1) || cfg.max_rows < 1 || !(cfg.center_tol > 0) ||
      cfg.K < 0 || cfg.center_max_iter < 1)
    throw InvalidInput("VaidyaConfig: parameters out of range");
}

// One round of the cutting-plane loop. Drop removes the row named by
// `row`; Add inserts {x : direction'x >= beta} with `direction` unit norm;
// NoOp leaves the polytope unchanged (degenerate direction, guarded drop,
// or an all-null communication round).
struct CutStep {
  enum class Kind { Drop, Add, NoOp };
  Kind kind = Kind::NoOp;
  int row = -1;                // Drop only
  Eigen::VectorXd direction;   // Add only, unit norm
  double beta = 0.0;           // Add only
  bool forced_by_cap = false;  // Drop emitted because rows == max_rows
  Eigen::VectorXd center_before;
  Eigen::VectorXd center_after;
};

// Chooses Drop vs Add at the current center. Rows with leverage below
// gamma are dropped first (lowest index on ties). Otherwise a cut through
// direction c (the negated aggregated subgradient) is placed at depth
//   c'H^{-1}c / (c'x - beta)^2 = (1/2) sqrt(eta * gamma),
// taking the root with beta <= c'x.
//
// `exempt_row` (if >= 0) is skipped by the drop rule for this one call.
// The loop passes the row it added in the previous round: with eta <= 4*gamma
// a fresh cut lands below the drop threshold and the plain rule would drop
// it immediately, cycling Add/Drop forever without progress. Exempting the
// newest row for a single round restores hysteresis; when eta > 4*gamma the
// exemption never fires.
inline CutStep decide_step(const BarrierState& st, const VaidyaConfig& cfg,
                           const Eigen::VectorXd& c, int exempt_row = -1) {
  CutStep step;
  step.center_before = st.x;
  int lowest = -1;
  double lowest_sigma = std::numeric_limits<double>::infinity();
  for (int i = 0; i < st.sigmas.size(); ++i) {
    if (i == exempt_row) continue;
    if (st.sigmas[i] < lowest_sigma) {
      lowest_sigma = st.sigmas[i];
      lowest = i;
    }
  }
  if (lowest >= 0 && lowest_sigma < cfg.gamma) {
    step.kind = CutStep::Kind::Drop;
    step.row = lowest;
    return step;
  }
  double cn = c.norm();
  if (cn < 1e-12 || !c.allFinite())
    throw DegenerateDirection("decide_step: cut direction is numerically zero");
  Eigen::VectorXd chat = c / cn;
  double q = chat.dot(st.Hfact.solve(chat));
  double depth = std::sqrt(q / (0.5 * std::sqrt(cfg.eta * cfg.gamma)));
  step.kind = CutStep::Kind::Add;
  step.direction = chat;
  step.beta = chat.dot(st.x) - depth;
  return step;
}

struct CuttingPlaneResult {
  std::vector<Eigen::VectorXd> iterates;  // K + 1 entries, x_0 .. x_K
  std::vector<CutStep> steps;             // K entries
  Polyhedron polytope;                    // final state
};

// Runs K rounds from the volumetric center of `P`. `grad` is queried once
// per round at the current iterate; its value is only consumed on Add
// rounds but the query itself always happens (one estimate per round).
// A zero/near-zero gradient downgrades the round to Drop (when a row is
// below the leverage threshold) or NoOp.
inline CuttingPlaneResult run_cutting_plane(
    Polyhedron P, const VaidyaConfig& cfg,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad) {
  validate(cfg);
  CuttingPlaneResult out;
  BarrierState st =
      volumetric_center(P, P.interior, cfg.center_tol, cfg.center_max_iter);
  out.iterates.push_back(st.x);
  int added_last_round = -1;
  for (int k = 0; k < cfg.K; ++k) {
    Eigen::VectorXd g = grad(st.x);
    if (g.size() != P.dim())
      throw InvalidInput("run_cutting_plane: gradient has wrong dimension");

    CutStep step;
    try {
      step = decide_step(st, cfg, -g, added_last_round);
    } catch (const DegenerateDirection&) {
      step.kind = CutStep::Kind::NoOp;
      step.center_before = st.x;
    }
    if (step.kind == CutStep::Kind::Drop && P.rows() <= P.dim() + 1) {
      // Dropping would leave fewer than d + 1 rows; skip the round.
      step = CutStep{};
      step.center_before = st.x;
    }
    if (step.kind == CutStep::Kind::Add && P.rows() >= cfg.max_rows) {
      // At the cap: discard the least informative row instead of growing.
      step = CutStep{};
      step.center_before = st.x;
      step.kind = CutStep::Kind::Drop;
      step.row = st.argmin_sigma;
      step.forced_by_cap = true;
    }

    switch (step.kind) {
      case CutStep::Kind::Drop:
        P.drop_row(step.row);
        added_last_round = -1;
        break;
      case CutStep::Kind::Add:
        P.add_row(step.direction, step.beta);
        added_last_round = static_cast<int>(P.rows()) - 1;
        break;
      case CutStep::Kind::NoOp:
        added_last_round = -1;
        break;
    }
    if (step.kind != CutStep::Kind::NoOp) {
      st = volumetric_center(P, st.x, cfg.center_tol, cfg.center_max_iter);
      P.interior = st.x;
      if (!(st.slacks.minCoeff() >= 1e-14))
        throw CollapsedPolytope(
            "run_cutting_plane: interior collapsed below slack 1e-14");
    }
    step.center_after = st.x;
    out.steps.push_back(std::move(step));
    out.iterates.push_back(st.x);
  }
  out.polytope = std::move(P);
  return out;
}

}  // namespace charter
