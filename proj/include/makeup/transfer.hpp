// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <array>

#include "makeup/debias.hpp"

namespace makeup {

// Majority-guided estimate of the minority model: the majority baseline
// plus the hard-thresholded coefficient difference.
struct TransferInputs {
  Vector beta_deb_minority;     // dense minority vector
  SparseCoef beta_thr_majority; // sparsified majority estimate
  double tau_ktr = 0.0;
};

// beta_thr_majority + Thre(beta_deb_minority - beta_thr_majority, tau_ktr),
// with the intercept difference never thresholded.
SparseCoef knowledge_transfer(const TransferInputs& inputs);

// Squared Euclidean distance to an independent dense debiased vector; the
// model-selection criterion on an unlabeled target.
double surrogate_loss(const Vector& beta, const Vector& reference);

// Exponential model-selection weight w = exp(-a q_first) /
// (exp(-a q_first) + exp(-a q_second)), evaluated in the log domain.
double ensemble_weight(double temperature, double q_first, double q_second);

struct ProtectedTransferConfig {
  PipelineTuning tuning;
  double temperature = 5.0;
  std::uint64_t seed = 0;
  // Replaces the majority pipeline's thresholded estimate (negative-transfer
  // experiments).
  std::optional<SparseCoef> majority_override;
  // Re-threshold the final average at the mean fold threshold. Off by
  // default: the plain convex combination is emitted.
  bool resparsify = false;
};

struct EnsembleResult {
  Vector beta_mu;
  std::array<double, 2> fold_weights{0.5, 0.5};
  std::array<SparseCoef, 2> fold_thresholded;
  std::array<SparseCoef, 2> fold_transferred;
  std::array<Vector, 2> fold_debiased;
  std::array<double, 2> fold_tau{0.0, 0.0};
  std::array<double, 2> fold_tau_ktr{0.0, 0.0};
  SparseCoef majority_thresholded;
  double temperature = 5.0;
  std::vector<std::string> warnings;
};

// Cross-fitted negative-transfer protection: splits the minority rows into
// two folds stratified by cohort, runs the debias pipeline per fold and on
// the full majority data, thresholds, runs knowledge transfer per fold, and
// aggregates with exponential weights contrasted against the opposite
// fold's debiased vector. Deterministic given the seed.
EnsembleResult run_protected_transfer(const LabeledPanel& panel, const BasisMap& basis,
                                      const ProtectedTransferConfig& config);

}  // namespace makeup
