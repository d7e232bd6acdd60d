// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include <doctest.h>

#include "makeup/baselines.hpp"
#include "makeup/metrics.hpp"
#include "makeup/simgen.hpp"
#include "oracles.hpp"

using namespace makeup;

TEST_CASE("importance weighting with a unit density ratio matches the naive fit") {
  SimConfig config;
  config.setting = SimSetting::kI;
  config.q = 5;
  config.p = 3;
  config.n_s1 = 10;
  config.n_t1 = 10;
  config.n_s0 = 300;
  config.n_t0 = 300;
  config.seed = 21;
  const LabeledPanel panel = generate_panel(config);
  const BasisMap basis = BasisMap::identity(config.q, config.p);

  BaselineSpec iw;
  iw.method = BaselineMethod::kIw;
  iw.lambda_nuisance = 1e6;  // full shrinkage pins every weight to one
  BaselineSpec naive;
  naive.method = BaselineMethod::kNaive;

  const SparseCoef a = fit_baseline(panel, Subgroup::kMinority, basis, iw, 11);
  const SparseCoef b = fit_baseline(panel, Subgroup::kMinority, basis, naive, 11);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("imputation baseline recovers the target projection of a perfect model") {
  // Outcomes equal the imputation surface exactly, so the pseudo-outcome
  // regression matches an independent Newton solve on the true conditional
  // means.
  oracle::TestRng rng(31);
  const Index q = 3, p = 2;
  Vector gamma(q + p);
  gamma << 0.2, 0.8, -0.5, 0.6, -0.4;
  std::vector<Observation> rows;
  for (Index i = 0; i < 500; ++i) {
    Vector z(q + p);
    z[0] = 1.0;
    for (Index j = 1; j < q + p; ++j) z[j] = rng.normal();
    Observation obs;
    obs.r = Subgroup::kMinority;
    obs.s = i % 2 ? Cohort::kSource : Cohort::kTarget;
    if (obs.s == Cohort::kSource) {
      obs.y = oracle::mean_fn(oracle::Kind::kLogistic, z.dot(gamma));
    }
    obs.x = z.head(q);
    obs.w = z.tail(p);
    rows.push_back(std::move(obs));
  }
  const LabeledPanel panel = build_panel(rows);
  const BasisMap basis = BasisMap::identity(q, p);

  BaselineSpec spec;
  spec.method = BaselineMethod::kIm;
  spec.lambda = 0.0;
  spec.lambda_nuisance = 0.0;
  const SparseCoef fit = fit_baseline(panel, Subgroup::kMinority, basis, spec, 5);

  const SubgroupData data = make_subgroup_data(panel, Subgroup::kMinority, basis);
  Vector pseudo(data.n_target());
  for (Index i = 0; i < data.n_target(); ++i) {
    pseudo[i] = oracle::mean_fn(oracle::Kind::kLogistic, data.phi_target.row(i).dot(gamma));
  }
  oracle::Problem problem{data.x_target,
                          Vector::Constant(data.n_target(),
                                           1.0 / static_cast<double>(data.n_target())),
                          pseudo,
                          {},
                          {},
                          oracle::Kind::kLogistic};
  const Vector projection = oracle::newton_glm(problem);
  CHECK((fit.values - projection).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("baselines are deterministic given the seed") {
  SimConfig config;
  config.setting = SimSetting::kI;
  config.q = 5;
  config.p = 3;
  config.n_s1 = 10;
  config.n_t1 = 10;
  config.n_s0 = 250;
  config.n_t0 = 250;
  config.seed = 77;
  const LabeledPanel panel = generate_panel(config);
  const BasisMap basis = BasisMap::identity(config.q, config.p);
  for (BaselineMethod m : {BaselineMethod::kIw, BaselineMethod::kIwAdaptive, BaselineMethod::kIm,
                           BaselineMethod::kImAdaptive, BaselineMethod::kNaive}) {
    BaselineSpec spec;
    spec.method = m;
    const SparseCoef a = fit_baseline(panel, Subgroup::kMinority, basis, spec, 1234);
    const SparseCoef b = fit_baseline(panel, Subgroup::kMinority, basis, spec, 1234);
    CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("adaptive variants differ from their pilots through the penalty factors") {
  SimConfig config;
  config.setting = SimSetting::kI;
  config.q = 8;
  config.p = 4;
  config.n_s1 = 10;
  config.n_t1 = 10;
  config.n_s0 = 300;
  config.n_t0 = 300;
  config.seed = 13;
  const LabeledPanel panel = generate_panel(config);
  const BasisMap basis = BasisMap::identity(config.q, config.p);
  BaselineSpec plain;
  plain.method = BaselineMethod::kIm;
  BaselineSpec adaptive;
  adaptive.method = BaselineMethod::kImAdaptive;
  const SparseCoef a = fit_baseline(panel, Subgroup::kMinority, basis, plain, 3);
  const SparseCoef b = fit_baseline(panel, Subgroup::kMinority, basis, adaptive, 3);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("weight clipping at the top half percentile moves the fit by under ten percent") {
  SimConfig config;
  config.setting = SimSetting::kI;
  config.q = 8;
  config.p = 6;
  config.n_s1 = 10;
  config.n_t1 = 10;
  config.n_s0 = 400;
  config.n_t0 = 400;
  config.seed = 41;
  const LabeledPanel panel = generate_panel(config);
  const BasisMap basis = BasisMap::identity(config.q, config.p);

  BaselineSpec spec;
  spec.method = BaselineMethod::kIw;
  spec.lambda = 0.02;
  spec.lambda_nuisance = 0.01;
  const SparseCoef plain = fit_baseline(panel, Subgroup::kMinority, basis, spec, 9);
  spec.weight_clip_quantile = 0.995;
  const SparseCoef clipped = fit_baseline(panel, Subgroup::kMinority, basis, spec, 9);
  const double rel = (plain.values - clipped.values).norm() / std::max(plain.values.norm(), 1e-12);
  CHECK(rel < 0.10);
}

TEST_CASE("correct density ratio beats wrong imputation under outcome misspecification") {
  // Setting II: the density ratio is linear while the outcome model is not,
  // so importance weighting should win the sign test against imputation.
  SimConfig config;
  config.setting = SimSetting::kII;
  config.q = 20;
  config.p = 20;
  config.n_s1 = 10;
  config.n_t1 = 10;
  config.n_s0 = 400;
  config.n_t0 = 1000;
  const TruthRecord truth = compute_truth(config, 400000, 888);

  Index iw_wins = 0;
  const Index reps = 25;
  for (Index rep = 0; rep < reps; ++rep) {
    config.seed = derive_seed(5150, static_cast<std::uint64_t>(rep));
    const LabeledPanel panel = generate_panel(config);
    const BasisMap basis = BasisMap::identity(config.q, config.p);
    BaselineSpec iw;
    iw.method = BaselineMethod::kIw;
    BaselineSpec im;
    im.method = BaselineMethod::kIm;
    const double err_iw =
        coef_error(fit_baseline(panel, Subgroup::kMinority, basis, iw, config.seed).values,
                   truth.beta_bar_minority, Norm::kL2);
    const double err_im =
        coef_error(fit_baseline(panel, Subgroup::kMinority, basis, im, config.seed).values,
                   truth.beta_bar_minority, Norm::kL2);
    if (err_iw < err_im) ++iw_wins;
  }
  INFO("iw wins ", iw_wins, " of ", reps);
  CHECK(iw_wins > reps / 2);
}
