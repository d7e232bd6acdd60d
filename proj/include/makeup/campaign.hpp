// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include "makeup/baselines.hpp"
#include "makeup/io.hpp"
#include "makeup/metrics.hpp"
#include "makeup/simgen.hpp"
#include "makeup/transfer.hpp"

namespace makeup {

enum class MethodId : std::uint8_t {
  kMu,
  kMuMajG,
  kMuMinO,
  kIw,
  kIwALasso,
  kIm,
  kImALasso,
  kNaive,
};

std::string to_string(MethodId m);
MethodId method_from_string(const std::string& name);

struct MethodFit {
  Vector coef;
  IndexList support;
  std::vector<std::string> warnings;
  std::vector<double> fold_weights;  // filled for the ensemble method
  nlohmann::json tuning;
};

struct MethodOutcome {
  std::optional<MethodFit> fit;
  std::string error;  // set when the method failed
};

// Fits the requested methods on one panel, sharing the majority pipeline
// and the whole-minority pipeline across methods. Per-method failures are
// captured in the outcome rather than thrown.
std::map<MethodId, MethodOutcome> fit_methods(const LabeledPanel& panel, const BasisMap& basis,
                                              const std::vector<MethodId>& methods,
                                              const PipelineTuning& tuning, double temperature,
                                              std::uint64_t seed);

struct CampaignConfig {
  SimConfig base;
  std::string sweep_param;            // "", "n_s0", or "t"
  std::vector<double> sweep_values;   // empty for a single-cell campaign
  Index replicates = 1;
  std::vector<MethodId> methods;
  std::uint64_t root_seed = 1;
  Index workers = 1;
  std::string out_dir;
  PipelineTuning tuning;
  double temperature = 5.0;
  Index n_oracle = 200000;
  bool emit_panels = false;
};

struct ReplicateRow {
  double sweep_value = 0.0;
  Index replicate = 0;
  std::uint64_t seed = 0;
  MethodId method = MethodId::kNaive;
  bool ok = false;
  double l2_err = std::numeric_limits<double>::quiet_NaN();
  double l1_err = std::numeric_limits<double>::quiet_NaN();
  Index nnz = 0;
  std::string error;
  std::string warnings;
};

struct SummaryCell {
  double mean_l2 = std::numeric_limits<double>::quiet_NaN();
  double se_l2 = std::numeric_limits<double>::quiet_NaN();
  Index n_ok = 0;
  Index n_failed = 0;
};

struct CampaignResult {
  std::vector<ReplicateRow> rows;
  // keyed by (sweep value, method)
  std::map<std::pair<double, MethodId>, SummaryCell> summary;
  std::map<double, TruthRecord> truths;
};

// Runs (or resumes) a simulation campaign: per replicate, generate a panel,
// score every requested method against the oracle truth, and append to
// results.csv. Completed replicates found in results.csv are not recomputed,
// and the canonical outputs are byte-identical for any worker count.
CampaignResult run_campaign(const CampaignConfig& config);

// Parses the CLI's JSON configuration (see README for the schema).
CampaignConfig campaign_from_json(const nlohmann::json& j);
PipelineTuning tuning_from_json(const nlohmann::json& j);

}  // namespace makeup
