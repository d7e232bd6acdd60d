// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <limits>
#include <optional>

#include "makeup/link.hpp"
#include "makeup/types.hpp"

namespace makeup {

// Generalized linear objective over a design matrix:
//
//   J(beta) = c' beta + sum_i w_i { -y_i eta_i + G(eta_i) },
//   eta_i = offset_i + x_i' beta,
//
// where G is the link antiderivative. `response`, `offset`, and
// `linear_term` (c) may be empty. Doubly robust and density-ratio losses
// enter through `linear_term`; ordinary GLMs through `response`.
struct GlmLoss {
  Link link = Link::kIdentity;
  Vector weights;
  Vector response;
  Vector offset;
  Vector linear_term;
};

// Per-coefficient penalty lambda * factor_j * |beta_j|. A factor of 0
// leaves the coordinate unpenalized (intercepts); an infinite factor
// freezes it at its initial value.
struct PenaltySpec {
  double lambda = 0.0;
  Vector factors;

  static PenaltySpec unit(Index d, double lambda) {
    PenaltySpec p;
    p.lambda = lambda;
    p.factors = Vector::Ones(d);
    return p;
  }
  // Unit factors with a free intercept in coordinate 0.
  static PenaltySpec free_intercept(Index d, double lambda) {
    PenaltySpec p = unit(d, lambda);
    p.factors[0] = 0.0;
    return p;
  }
};

struct SolverConfig {
  Index max_iter = 10000;
  double tol = 1e-8;          // sup-norm of the coefficient update
  double kkt_tol = -1.0;      // <0: defaults to 1e-7 * max(1, sum of weights)
  Vector init;                // empty: zero start
  double divergence_bound = 1e3;
  bool record_objective = false;
};

// Coefficient vector with its exact nonzero support.
struct SparseCoef {
  Vector values;
  IndexList support;

  Index dim() const { return values.size(); }
  Index nnz() const { return static_cast<Index>(support.size()); }

  static SparseCoef from_dense(Vector v) {
    SparseCoef c;
    c.values = std::move(v);
    for (Index j = 0; j < c.values.size(); ++j) {
      if (c.values[j] != 0.0) c.support.push_back(j);
    }
    return c;
  }
};

struct SolveResult {
  SparseCoef coef;
  bool converged = false;
  double kkt_residual = std::numeric_limits<double>::infinity();
  Index iterations = 0;  // coordinate sweeps
  bool clip_active = false;  // exponential link: some row sits at the clip
  std::vector<std::string> warnings;
  std::vector<double> objective_trace;  // filled when record_objective is set
};

// Smooth part of the objective and its gradient (no penalty).
double glm_objective(const Matrix& design, const GlmLoss& loss, const Vector& beta);
Vector glm_gradient(const Matrix& design, const GlmLoss& loss, const Vector& beta);

// Max violation of the subgradient optimality conditions at beta.
double kkt_residual(const Vector& gradient, const Vector& beta, const PenaltySpec& penalty);

// Penalized convex solver. Cyclic coordinate descent on a local quadratic
// model with a backtracking line search on the true objective; a proximal
// gradient step backs the line search up when curvature is unreliable
// (exponential link). Throws DivergenceError when the objective is
// unbounded below; a result that merely failed to reach tolerance is
// returned with converged = false and the last iterate.
SolveResult solve_penalized(const Matrix& design, const GlmLoss& loss, const PenaltySpec& penalty,
                            const SolverConfig& config = {});

// Smallest lambda that zeroes every penalized coordinate (unpenalized
// coordinates are solved first).
double lambda_max(const Matrix& design, const GlmLoss& loss, const Vector& factors,
                  const SolverConfig& config = {});

// Geometric grid of k values spanning [lo, hi].
std::vector<double> make_lambda_grid(double lo, double hi, Index k);

struct CvResult {
  double lambda = 0.0;
  std::vector<double> mean_losses;  // aligned with the input grid
  Index skipped_folds = 0;
  std::vector<std::string> warnings;
};

// K-fold cross-validation over a row-decomposable GLM objective. Folds are
// assigned by a seeded shuffle; fold results reduce in fixed order, so the
// choice is deterministic given the seed. Folds whose training rows lose an
// outcome class under the logistic link are skipped with a warning.
CvResult cross_validate(const Matrix& design, const GlmLoss& loss, const Vector& factors,
                        const std::vector<double>& lambda_grid, Index folds, std::uint64_t seed,
                        const SolverConfig& config = {});

}  // namespace makeup
