// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace makeup {

namespace {

constexpr double kAdaptiveFloor = 1e-3;

struct OutcomeProblem {
  Matrix design;
  GlmLoss loss;
};

// Importance weights exp(phi' alpha) over source rows, rescaled to mean one
// so the penalty scale decouples from the weight scale.
Vector importance_weights(const SubgroupData& data, const Vector& alpha,
                          std::optional<double> clip_quantile) {
  Vector h = (data.phi_source * alpha).array().min(700.0).exp();
  if (clip_quantile) {
    std::vector<double> sorted(h.data(), h.data() + h.size());
    std::sort(sorted.begin(), sorted.end());
    const auto pos = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(sorted.size()) - 1.0,
                         *clip_quantile * static_cast<double>(sorted.size())));
    const double cap = sorted[pos];
    h = h.cwiseMin(cap);
  }
  return h / h.mean();
}

OutcomeProblem make_outcome_problem(const SubgroupData& data, const BaselineSpec& spec,
                                    const Vector& nuisance) {
  OutcomeProblem p;
  p.loss.link = spec.g_link;
  switch (spec.method) {
    case BaselineMethod::kIw:
    case BaselineMethod::kIwAdaptive: {
      const Vector h = importance_weights(data, nuisance, spec.weight_clip_quantile);
      p.design = data.x_source;
      p.loss.weights = h / static_cast<double>(data.n_source());
      p.loss.response = data.y_source;
      break;
    }
    case BaselineMethod::kIm:
    case BaselineMethod::kImAdaptive: {
      p.design = data.x_target;
      p.loss.weights =
          Vector::Constant(data.n_target(), 1.0 / static_cast<double>(data.n_target()));
      p.loss.response = link_mean(spec.b_link, (data.phi_target * nuisance).eval());
      break;
    }
    case BaselineMethod::kNaive: {
      p.design = data.x_source;
      p.loss.weights =
          Vector::Constant(data.n_source(), 1.0 / static_cast<double>(data.n_source()));
      p.loss.response = data.y_source;
      break;
    }
  }
  return p;
}

SparseCoef solve_outcome(const OutcomeProblem& problem, const Vector& factors,
                         const BaselineSpec& spec, std::uint64_t seed) {
  const Index n = problem.design.rows();
  double lambda;
  if (spec.lambda) {
    lambda = *spec.lambda;
  } else {
    const double rate = std::sqrt(
        std::log(static_cast<double>(std::max<Index>(problem.design.cols(), 2))) /
        static_cast<double>(n));
    const std::vector<double> grid =
        make_lambda_grid(spec.cv_range_lo * rate, spec.cv_range_hi * rate, spec.cv_grid_size);
    lambda = cross_validate(problem.design, problem.loss, factors, grid, spec.cv_folds, seed,
                            spec.solver)
                 .lambda;
  }
  PenaltySpec penalty{lambda, factors};
  return solve_penalized(problem.design, problem.loss, penalty, spec.solver).coef;
}

}  // namespace

const char* to_string(BaselineMethod m) {
  switch (m) {
    case BaselineMethod::kIw: return "iw";
    case BaselineMethod::kIwAdaptive: return "iw_alasso";
    case BaselineMethod::kIm: return "im";
    case BaselineMethod::kImAdaptive: return "im_alasso";
    case BaselineMethod::kNaive: return "naive";
  }
  return "naive";
}

SparseCoef fit_baseline(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                        const BaselineSpec& spec, std::uint64_t seed) {
  const SubgroupData data = make_subgroup_data(panel, subgroup, basis, spec.g_link, spec.b_link);

  // Nuisance stage.
  Vector nuisance;
  const bool needs_alpha =
      spec.method == BaselineMethod::kIw || spec.method == BaselineMethod::kIwAdaptive;
  const bool needs_gamma =
      spec.method == BaselineMethod::kIm || spec.method == BaselineMethod::kImAdaptive;
  if (needs_alpha || needs_gamma) {
    const double rate = std::sqrt(std::log(static_cast<double>(std::max<Index>(data.d(), 2))) /
                                  static_cast<double>(data.n_target()));
    const std::vector<double> grid =
        make_lambda_grid(spec.cv_range_lo * rate, spec.cv_range_hi * rate, spec.cv_grid_size);
    double lambda_nuisance;
    if (spec.lambda_nuisance) {
      lambda_nuisance = *spec.lambda_nuisance;
    } else if (needs_alpha) {
      lambda_nuisance =
          cv_density_ratio(data, grid, spec.cv_folds, derive_seed(seed, 1), spec.solver).lambda;
    } else {
      lambda_nuisance =
          cv_imputation(data, grid, spec.cv_folds, derive_seed(seed, 1), spec.solver).lambda;
    }
    nuisance = needs_alpha ? fit_density_ratio(data, lambda_nuisance, spec.solver).coef.values
                           : fit_imputation(data, lambda_nuisance, spec.solver).coef.values;
  }

  const OutcomeProblem problem = make_outcome_problem(data, spec, nuisance);
  Vector factors = Vector::Ones(data.q());
  factors[0] = 0.0;

  const bool adaptive = spec.method == BaselineMethod::kIwAdaptive ||
                        spec.method == BaselineMethod::kImAdaptive;
  if (!adaptive) return solve_outcome(problem, factors, spec, derive_seed(seed, 2));

  const SparseCoef pilot = solve_outcome(problem, factors, spec, derive_seed(seed, 2));
  for (Index j = 1; j < data.q(); ++j) {
    factors[j] = 1.0 / std::max(std::abs(pilot.values[j]), kAdaptiveFloor);
  }
  return solve_outcome(problem, factors, spec, derive_seed(seed, 3));
}

}  // namespace makeup
