// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include "makeup/debias.hpp"

namespace makeup {

// Single-nuisance comparison estimators sharing the penalized solver.
enum class BaselineMethod : std::uint8_t { kIw, kIwAdaptive, kIm, kImAdaptive, kNaive };

struct BaselineSpec {
  BaselineMethod method = BaselineMethod::kNaive;
  Index cv_folds = 5;
  Index cv_grid_size = 8;
  double cv_range_lo = 0.01;
  double cv_range_hi = 0.5;
  std::optional<double> lambda;           // fixed penalty for the outcome fit
  std::optional<double> lambda_nuisance;  // fixed penalty for the nuisance fit
  Link g_link = Link::kLogistic;
  Link b_link = Link::kLogistic;
  // Diagnostic-only clipping of importance weights at this quantile.
  std::optional<double> weight_clip_quantile;
  SolverConfig solver = pipeline_solver_defaults();
};

// iw: density-ratio-weighted lasso GLM of y on x over the subgroup's source
// rows (weights rescaled to mean one); im: lasso GLM of the imputed outcome
// on x over the subgroup's target rows; naive: unweighted source lasso.
// Adaptive variants derive penalty factors 1/max(|pilot_j|, 1e-3) from the
// plain fit. Deterministic given the seed.
SparseCoef fit_baseline(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                        const BaselineSpec& spec, std::uint64_t seed);

const char* to_string(BaselineMethod m);

}  // namespace makeup
