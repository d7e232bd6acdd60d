// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include "makeup/panel.hpp"
#include "makeup/solver.hpp"

namespace makeup {

// Design blocks of one subgroup, shared by the nuisance fits, the doubly
// robust loss, and the per-coordinate calibration. Built once per pipeline
// run; read-only afterwards.
struct SubgroupData {
  Subgroup subgroup = Subgroup::kMinority;
  Link g_link = Link::kLogistic;
  Link b_link = Link::kLogistic;
  Matrix phi_source, phi_target;  // basis rows, n_S x d and n_T x d
  Matrix x_source, x_target;      // risk-factor rows, n_S x q and n_T x q
  Vector y_source;
  IndexList source_rows, target_rows;  // panel indices aligned with the blocks

  Index n_source() const { return phi_source.rows(); }
  Index n_target() const { return phi_target.rows(); }
  Index d() const { return phi_source.cols(); }
  Index q() const { return x_source.cols(); }
};

SubgroupData make_subgroup_data(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                                Link g_link = Link::kLogistic, Link b_link = Link::kLogistic);

// Density-ratio and imputation coefficients for one subgroup:
// h(z) = exp(phi(z)' alpha), m(z) = b(phi(z)' gamma).
struct NuisancePair {
  SparseCoef alpha;
  SparseCoef gamma;
  Link b_link = Link::kLogistic;
  Subgroup subgroup = Subgroup::kMinority;
};

// Exponential-tilting density-ratio fit:
//   min_a  mean_S[exp(phi'a)] - mean_T[phi'a] + lambda |a_{-1}|_1,
// intercept unpenalized, so mean_S[exp(phi'a)] = 1 at the optimum.
SolveResult fit_density_ratio(const SubgroupData& data, double lambda,
                              const SolverConfig& config = {});
SparseCoef fit_density_ratio(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                             double lambda);

// Imputation-model lasso on labeled source rows with link b, intercept
// unpenalized.
SolveResult fit_imputation(const SubgroupData& data, double lambda, const SolverConfig& config = {});
SparseCoef fit_imputation(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                          double lambda);

// Five-fold style cross-validation for the density-ratio penalty; both the
// source and target strata are folded and the held-out tilting loss is the
// criterion. Deterministic given the seed.
CvResult cv_density_ratio(const SubgroupData& data, const std::vector<double>& lambda_grid,
                          Index folds, std::uint64_t seed, const SolverConfig& config = {});

// Cross-validation for the imputation penalty (held-out deviance on source
// rows).
CvResult cv_imputation(const SubgroupData& data, const std::vector<double>& lambda_grid, Index folds,
                       std::uint64_t seed, const SolverConfig& config = {});

// Calibration output for one target coordinate j. The subgroup rows are
// partitioned by the sign of w_ij = omega_j' x_i (zero weights join the
// positive stratum) and each stratum solves its own convex problem with
// absolute weights, so the signed calibration moment is a difference of two
// stratum moments that the stratum KKT conditions drive to zero.
struct CalibratedCorrection {
  Index j = 0;
  SparseCoef xi_pos, xi_neg;      // density-ratio corrections
  SparseCoef zeta_pos, zeta_neg;  // imputation corrections
  IndexList positive_rows, negative_rows;  // panel row indices
  bool failed = false;  // any stratum problem degenerate or diverged
  std::vector<std::string> warnings;
};

// Cached nuisance evaluations reused across the q per-coordinate
// calibration problems.
struct CalibrationInputs {
  const SubgroupData* data = nullptr;
  Vector alpha, gamma;       // preliminary coefficients (dense)
  Vector eta_alpha_source;   // phi_S alpha
  Vector eta_gamma_source;   // phi_S gamma
  Vector eta_gamma_target;   // phi_T gamma
  Vector h_source;           // exp(phi_S alpha)
  Vector bdot_source, bdot_target;
};

CalibrationInputs make_calibration_inputs(const SubgroupData& data, const Vector& alpha,
                                          const Vector& gamma);

// Solves the two weighted calibration lassos per sign stratum. The base
// penalties are rescaled per stratum by sqrt(n_subgroup / n_stratum) to
// keep the sqrt(log d / n) rate. Strata with fewer than two rows get a
// zero correction and a warning.
CalibratedCorrection calibrate_coordinate(const CalibrationInputs& inputs, const Vector& omega_row,
                                          Index j, double lambda_xi, double lambda_zeta,
                                          const SolverConfig& config = {});
CalibratedCorrection calibrate_coordinate(const LabeledPanel& panel, Subgroup subgroup,
                                          const BasisMap& basis, const NuisancePair& pair,
                                          const Vector& omega_row, Index j, double lambda_xi,
                                          double lambda_zeta);

}  // namespace makeup
