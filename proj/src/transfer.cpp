// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/transfer.hpp"

#include <algorithm>
#include <cmath>

namespace makeup {

SparseCoef knowledge_transfer(const TransferInputs& inputs) {
  const Index q = inputs.beta_deb_minority.size();
  if (inputs.beta_thr_majority.values.size() != q) {
    throw ValidationError("knowledge_transfer: dimension mismatch");
  }
  if (!(inputs.tau_ktr > 0.0)) throw ValidationError("knowledge_transfer: tau_ktr must be positive");
  const Vector diff = inputs.beta_deb_minority - inputs.beta_thr_majority.values;
  const SparseCoef delta = hard_threshold(diff, inputs.tau_ktr);
  return SparseCoef::from_dense(inputs.beta_thr_majority.values + delta.values);
}

double surrogate_loss(const Vector& beta, const Vector& reference) {
  if (beta.size() != reference.size()) throw ValidationError("surrogate_loss: length mismatch");
  return (beta - reference).squaredNorm();
}

double ensemble_weight(double temperature, double q_first, double q_second) {
  // w = expit(a (q_second - q_first)); saturates instead of overflowing.
  return expit(temperature * (q_second - q_first));
}

namespace {

void seeded_shuffle(IndexList& v, std::uint64_t seed) {
  std::uint64_t state = seed;
  for (Index i = static_cast<Index>(v.size()) - 1; i > 0; --i) {
    state = splitmix64(state);
    const Index j = static_cast<Index>(state % static_cast<std::uint64_t>(i + 1));
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
  }
}

Observation observation_at(const LabeledPanel& panel, Index i) {
  Observation obs;
  obs.s = panel.cohort(i);
  obs.r = panel.subgroup(i);
  if (obs.s == Cohort::kSource) obs.y = panel.outcome()[i];
  obs.x = panel.x().row(i).transpose();
  obs.w = panel.w().row(i).transpose();
  return obs;
}

}  // namespace

EnsembleResult run_protected_transfer(const LabeledPanel& panel, const BasisMap& basis,
                                      const ProtectedTransferConfig& config) {
  const Index q = panel.q();
  for (Cohort s : {Cohort::kSource, Cohort::kTarget}) {
    if (panel.stratum_count(s, Subgroup::kMinority) < 4) {
      throw ValidationError(std::string("protected transfer: minority ") + to_string(s) +
                            " stratum needs at least 4 rows (2 per fold)");
    }
  }

  EnsembleResult out;
  out.temperature = config.temperature;

  // Fold split of the minority rows, stratified by cohort so neither fold
  // is starved of source labels.
  std::array<IndexList, 2> fold_rows;
  {
    IndexList src = panel.stratum(Cohort::kSource, Subgroup::kMinority).indices;
    IndexList tgt = panel.stratum(Cohort::kTarget, Subgroup::kMinority).indices;
    seeded_shuffle(src, derive_seed(config.seed, 1));
    seeded_shuffle(tgt, derive_seed(config.seed, 2));
    for (std::size_t i = 0; i < src.size(); ++i) fold_rows[i % 2].push_back(src[i]);
    for (std::size_t i = 0; i < tgt.size(); ++i) fold_rows[i % 2].push_back(tgt[i]);
  }

  // Majority knowledge source: the full-majority pipeline unless overridden.
  if (config.majority_override) {
    if (config.majority_override->values.size() != q) {
      throw ValidationError("protected transfer: majority override length mismatch");
    }
    out.majority_thresholded = *config.majority_override;
  } else {
    PipelineTuning tuning = config.tuning;
    tuning.seed = derive_seed(config.seed, 3);
    const DebiasBundle majority =
        debias_subgroup(panel, Subgroup::kMajority, basis, tuning);
    for (const auto& w : majority.warnings) out.warnings.push_back("majority: " + w);
    const Index n1 = std::min(majority.n_source, majority.n_target);
    const std::vector<double> grid = threshold_grid(q, n1, config.tuning.tau_multipliers);
    out.majority_thresholded =
        hard_threshold(majority.beta_deb, stabilize_threshold(majority.beta_deb, grid));
  }

  // Per-fold debias pipelines.
  std::array<Index, 2> fold_n{0, 0};
  for (int k = 0; k < 2; ++k) {
    std::vector<Observation> rows;
    rows.reserve(fold_rows[static_cast<std::size_t>(k)].size());
    for (Index i : fold_rows[static_cast<std::size_t>(k)]) rows.push_back(observation_at(panel, i));
    LabeledPanel fold_panel = build_panel(rows);
    Index n_src = fold_panel.stratum_count(Cohort::kSource, Subgroup::kMinority);
    Index n_tgt = fold_panel.stratum_count(Cohort::kTarget, Subgroup::kMinority);
    if (n_src < 2 || n_tgt < 2) {
      throw ValidationError("protected transfer: fold " + std::to_string(k + 1) +
                            " too small in minority " +
                            (n_src < 2 ? "source" : "target") + " stratum");
    }
    fold_n[static_cast<std::size_t>(k)] = std::min(n_src, n_tgt);
    PipelineTuning tuning = config.tuning;
    tuning.seed = derive_seed(config.seed, 10 + static_cast<std::uint64_t>(k));
    // Fixed penalty levels were chosen at the whole-minority sample size;
    // rescale them to the fold's target-stratum size to keep the
    // sqrt(log d / n) rate. Cross-validated penalties adapt on their own.
    const double scale =
        std::sqrt(static_cast<double>(panel.stratum_count(Cohort::kTarget, Subgroup::kMinority)) /
                  static_cast<double>(n_tgt));
    if (tuning.lambda_alpha) *tuning.lambda_alpha *= scale;
    if (tuning.lambda_gamma) *tuning.lambda_gamma *= scale;
    if (tuning.lambda_beta) *tuning.lambda_beta *= scale;
    if (tuning.lambda_nodewise) *tuning.lambda_nodewise *= scale;
    try {
      const DebiasBundle bundle =
          debias_subgroup(fold_panel, Subgroup::kMinority, basis, tuning);
      out.fold_debiased[static_cast<std::size_t>(k)] = bundle.beta_deb;
      for (const auto& w : bundle.warnings) {
        out.warnings.push_back("fold " + std::to_string(k + 1) + ": " + w);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("protected transfer: fold " + std::to_string(k + 1) +
                               " pipeline failed: " + e.what());
    }
  }

  // Threshold, transfer, and aggregate with the opposite fold as reference.
  for (int k = 0; k < 2; ++k) {
    const std::size_t self = static_cast<std::size_t>(k);
    const std::size_t other = static_cast<std::size_t>(1 - k);
    const Vector& deb = out.fold_debiased[self];
    const Vector& reference = out.fold_debiased[other];
    const std::vector<double> grid =
        threshold_grid(q, fold_n[self], config.tuning.tau_multipliers);

    out.fold_tau[self] = select_threshold(deb, reference, grid);
    out.fold_thresholded[self] = hard_threshold(deb, out.fold_tau[self]);

    const Vector majority = out.majority_thresholded.values;
    out.fold_tau_ktr[self] = select_threshold(deb - majority, reference - majority, grid);
    out.fold_transferred[self] =
        knowledge_transfer({deb, out.majority_thresholded, out.fold_tau_ktr[self]});

    const double q_thr = surrogate_loss(out.fold_thresholded[self].values, reference);
    const double q_ktr = surrogate_loss(out.fold_transferred[self].values, reference);
    out.fold_weights[self] = ensemble_weight(config.temperature, q_thr, q_ktr);
  }

  Vector mu = Vector::Zero(q);
  for (std::size_t k = 0; k < 2; ++k) {
    mu += out.fold_weights[k] * out.fold_thresholded[k].values +
          (1.0 - out.fold_weights[k]) * out.fold_transferred[k].values;
  }
  mu *= 0.5;
  if (config.resparsify) {
    const double tau = 0.5 * (out.fold_tau[0] + out.fold_tau[1]);
    mu = hard_threshold(mu, tau).values;
  }
  out.beta_mu = std::move(mu);
  return out;
}

}  // namespace makeup
