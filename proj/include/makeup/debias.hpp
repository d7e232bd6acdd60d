// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <optional>

#include "makeup/nuisance.hpp"

namespace makeup {

// Nuisance parameters the doubly robust loss is evaluated with. In
// stratified mode each row uses the corrected coefficients of its own sign
// stratum (rows are keyed by panel index).
struct DrLossContext {
  Subgroup subgroup = Subgroup::kMinority;
  Link g_link = Link::kLogistic;
  Link b_link = Link::kLogistic;
  Vector alpha;
  Vector gamma;

  struct Stratified {
    IndexList positive_rows, negative_rows;  // panel indices of subgroup rows
    Vector alpha_pos, alpha_neg;
    Vector gamma_pos, gamma_neg;
  };
  std::optional<Stratified> stratified;
};

// Gradient of the doubly robust loss at beta:
//   mean_S[x h(phi)(b(phi'gamma) - y)] - mean_T[x b(phi'gamma)] + mean_T[x g(x'beta)].
// Throws std::overflow_error naming the offending rows when exp(phi'alpha)
// overflows.
Vector dr_gradient(const SubgroupData& data, const DrLossContext& ctx, const Vector& beta);
Vector dr_gradient(const DrLossContext& ctx, const LabeledPanel& panel, const BasisMap& basis,
                   const Vector& beta);

// Scalar doubly robust loss (the gradient's antiderivative in beta).
double dr_loss(const SubgroupData& data, const DrLossContext& ctx, const Vector& beta);

// Preliminary sparse fit: minimizes the doubly robust loss plus
// lambda |beta_{-1}|_1 through the penalized solver (the nuisance bracket is
// a fixed linear term). Optional per-row weights are normalized to mean one
// within each stratum, so rescaling them cannot move the minimizer.
SolveResult fit_preliminary_beta(const SubgroupData& data, const Vector& alpha, const Vector& gamma,
                                 double lambda, const SolverConfig& config = {},
                                 const Vector* source_weights = nullptr,
                                 const Vector* target_weights = nullptr);
SparseCoef fit_preliminary_beta(const DrLossContext& ctx, const LabeledPanel& panel,
                                const BasisMap& basis, double lambda);

// Row j of the node-wise-lasso approximate inverse of
// Sigma = mean_T[gdot(x'beta) x x'].
struct PrecisionRow {
  Index j = 0;
  Vector omega;
  double tau_sq = 0.0;
};

PrecisionRow nodewise_row(const Matrix& x_target, Link g_link, const Vector& beta_tilde, Index j,
                          double lambda_omega, const SolverConfig& config = {});
PrecisionRow nodewise_row(const LabeledPanel& panel, Subgroup subgroup, const Vector& beta_tilde,
                          Index j, double lambda_omega);

// Hard threshold; the intercept coordinate is never thresholded.
SparseCoef hard_threshold(const Vector& dense, double tau);

// Grid value minimizing |Thre(dense, tau) - reference|_2^2 (ties toward the
// smaller tau).
double select_threshold(const Vector& dense, const Vector& reference,
                        const std::vector<double>& grid);

// Smallest grid value whose thresholded support matches the next grid
// point's; the middle grid point when no pair stabilizes.
double stabilize_threshold(const Vector& dense, const std::vector<double>& grid);

// multipliers * sqrt(log(q) / n_r)
std::vector<double> threshold_grid(Index q, Index n_r, const std::vector<double>& multipliers);

// Nuisance and outcome coefficients live at unit scales under bounded
// covariates; a tight divergence bound makes separable penalty levels fail
// fast so escalation or cross-validation can move past them.
inline SolverConfig pipeline_solver_defaults() {
  SolverConfig config;
  config.divergence_bound = 50.0;
  // Rate-level optimality is what the moment conditions need; the penalty
  // scales sit orders of magnitude above this.
  config.kkt_tol = 1e-6;
  return config;
}

struct PipelineTuning {
  std::optional<double> lambda_alpha, lambda_gamma, lambda_beta, lambda_nodewise;
  Index cv_folds = 5;
  Index cv_grid_size = 8;
  double cv_range_lo = 0.01;
  double cv_range_hi = 0.5;
  double nodewise_scale = 0.5;
  // Multiplies the chosen nuisance penalties (sensitivity experiments).
  double nuisance_lambda_inflation = 1.0;
  std::vector<double> tau_multipliers = {0.25, 0.5, 1.0, 2.0, 4.0};
  Link g_link = Link::kLogistic;
  Link b_link = Link::kLogistic;
  std::uint64_t seed = 0;
  Index threads = 1;
  SolverConfig solver = pipeline_solver_defaults();
};

struct TuningUsed {
  double lambda_alpha = 0.0, lambda_gamma = 0.0, lambda_beta = 0.0, lambda_nodewise = 0.0;
};

// Output of the covariate-shift correction pipeline for one subgroup.
struct DebiasBundle {
  SparseCoef beta_prelim;
  Vector beta_deb;  // dense by construction
  std::vector<PrecisionRow> precision_rows;
  std::vector<CalibratedCorrection> corrections;
  NuisancePair nuisances;
  TuningUsed tuning;
  Index n_source = 0, n_target = 0;
  std::vector<std::string> warnings;
};

// Preliminary nuisance and outcome fits, node-wise precision rows,
// per-coordinate calibration, and the one-step corrected coefficient
// vector. Per-coordinate failures fall back to the uncalibrated debiased
// value with a warning.
DebiasBundle debias_subgroup(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                             const PipelineTuning& tuning);

// Cross-validated penalty for the preliminary fit (held-out doubly robust
// loss with the nuisance coefficients held fixed).
CvResult cv_preliminary_lambda(const SubgroupData& data, const Vector& alpha, const Vector& gamma,
                               const std::vector<double>& lambda_grid, Index folds,
                               std::uint64_t seed, const SolverConfig& config = {});

}  // namespace makeup
