// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include <doctest.h>

#include <cmath>

#include "makeup/simgen.hpp"
#include "oracles.hpp"

using namespace makeup;

namespace {

SimConfig base_config(SimSetting setting) {
  SimConfig config;
  config.setting = setting;
  config.q = 5;
  config.p = 4;
  config.t = 0;
  config.n_s1 = 120;
  config.n_s0 = 80;
  config.n_t1 = 150;
  config.n_t0 = 90;
  config.seed = 2024;
  return config;
}

}  // namespace

TEST_CASE("equal seeds generate identical panels") {
  const SimConfig config = base_config(SimSetting::kI);
  const LabeledPanel a = generate_panel(config);
  const LabeledPanel b = generate_panel(config);
  REQUIRE(a.rows() == b.rows());
  CHECK((a.x() - b.x()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.w() - b.w()).cwiseAbs().maxCoeff() == 0.0);
  for (Index i = 0; i < a.rows(); ++i) {
    CHECK(a.cohort(i) == b.cohort(i));
    CHECK(a.subgroup(i) == b.subgroup(i));
    if (a.cohort(i) == Cohort::kSource) {
      CHECK(a.outcome()[i] == b.outcome()[i]);
    } else {
      CHECK(std::isnan(a.outcome()[i]));
    }
  }
  SimConfig other = config;
  other.seed = 2025;
  const LabeledPanel c = generate_panel(other);
  CHECK((a.x() - c.x()).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("stratum quotas are filled exactly") {
  for (SimSetting setting : {SimSetting::kI, SimSetting::kII, SimSetting::kIII}) {
    const SimConfig config = base_config(setting);
    GenerationMeta meta;
    const LabeledPanel panel = generate_panel(config, &meta);
    CHECK(panel.stratum_count(Cohort::kSource, Subgroup::kMajority) == config.n_s1);
    CHECK(panel.stratum_count(Cohort::kSource, Subgroup::kMinority) == config.n_s0);
    CHECK(panel.stratum_count(Cohort::kTarget, Subgroup::kMajority) == config.n_t1);
    CHECK(panel.stratum_count(Cohort::kTarget, Subgroup::kMinority) == config.n_t0);
    CHECK(meta.candidates >= panel.rows());
    CHECK(meta.acceptance_rate > 0.0);
  }
}

TEST_CASE("covariates stay inside the truncation interval with a unit first coordinate") {
  const LabeledPanel panel = generate_panel(base_config(SimSetting::kIII));
  CHECK((panel.x().col(0).array() == 1.0).all());
  CHECK(panel.x().rightCols(panel.q() - 1).cwiseAbs().maxCoeff() < 1.5);
  CHECK(panel.w().cwiseAbs().maxCoeff() < 1.5);
}

TEST_CASE("no heterogeneity collapses the two subgroup outcome laws") {
  SimConfig config = base_config(SimSetting::kI);
  config.t = 0;
  oracle::TestRng rng(9);
  for (int rep = 0; rep < 25; ++rep) {
    Vector z(config.q + config.p);
    z[0] = 1.0;
    for (Index j = 1; j < z.size(); ++j) z[j] = 3.0 * (rng.uniform() - 0.5);
    CHECK(success_probability(config, z, Subgroup::kMinority) ==
          success_probability(config, z, Subgroup::kMajority));
  }
  config.t = 2;
  Vector z = Vector::Zero(config.q + config.p);
  z[0] = 1.0;
  z[1] = 1.0;
  CHECK(success_probability(config, z, Subgroup::kMajority) !=
        success_probability(config, z, Subgroup::kMinority));
}

TEST_CASE("the intercept-only covariate point has an even success probability") {
  const SimConfig config = base_config(SimSetting::kI);
  Vector z = Vector::Zero(config.q + config.p);
  z[0] = 1.0;
  CHECK(success_probability(config, z, Subgroup::kMinority) == doctest::Approx(0.5));
}

TEST_CASE("heterogeneity shift has t leading entries of one fifth") {
  SimConfig config = base_config(SimSetting::kI);
  config.t = 3;
  const Vector delta = heterogeneity_shift(config);
  CHECK(delta[0] == 0.0);
  for (Index j = 1; j <= 3; ++j) CHECK(delta[j] == doctest::Approx(0.2));
  CHECK(delta.tail(delta.size() - 4).cwiseAbs().maxCoeff() == 0.0);
  config.t = config.q + config.p;  // above the feasible limit
  CHECK_THROWS_AS(generate_panel(config), ValidationError);
}

TEST_CASE("sampler quantiles match a quadrature oracle of the truncated normal") {
  // Quadrature CDF of the standard normal truncated to (-1.5, 1.5).
  const auto density = [](double z) { return std::exp(-0.5 * z * z); };
  const double total = oracle::simpson(density, -1.5, 1.5, 4001);
  const auto cdf = [&](double x) { return oracle::simpson(density, -1.5, x, 4001) / total; };
  double cuts[3];
  for (int k = 0; k < 3; ++k) {
    double lo = -1.5, hi = 1.5;
    const double target = 0.25 * (k + 1);
    for (int iter = 0; iter < 60; ++iter) {
      const double mid = 0.5 * (lo + hi);
      (cdf(mid) < target ? lo : hi) = mid;
    }
    cuts[k] = 0.5 * (lo + hi);
  }

  const Index n = 1000000;
  Rng rng(31415);
  Index counts[4] = {0, 0, 0, 0};
  for (Index i = 0; i < n; ++i) {
    const double z = rng.truncated_normal(-1.5, 1.5);
    int bucket = 0;
    while (bucket < 3 && z > cuts[bucket]) ++bucket;
    ++counts[bucket];
  }
  const double se = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
  for (int k = 0; k < 4; ++k) {
    const double freq = static_cast<double>(counts[k]) / static_cast<double>(n);
    CHECK(std::abs(freq - 0.25) < 3.0 * se);
  }
}

TEST_CASE("normal quantile inverts the normal distribution function") {
  for (double p : {1e-8, 1e-4, 0.02, 0.2, 0.5, 0.8, 0.975, 0.9999, 1.0 - 1e-8}) {
    CHECK(std::abs(normal_cdf(normal_quantile(p)) - p) < 1e-7);
  }
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-7));
  CHECK_THROWS_AS(normal_quantile(0.0), ValidationError);
}

TEST_CASE("panel outcomes follow the specified success probabilities") {
  // Bucket labeled rows by their true success probability deciles and
  // compare the empirical rates against the model, three binomial standard
  // errors wide.
  SimConfig config = base_config(SimSetting::kI);
  config.t = 1;
  config.n_s1 = 50000;
  config.n_s0 = 50000;
  config.n_t1 = 100;
  config.n_t0 = 100;
  config.seed = 271828;
  const LabeledPanel panel = generate_panel(config);

  struct Bucket {
    double sum_p = 0.0, sum_y = 0.0, sum_var = 0.0;
    Index n = 0;
  };
  Bucket buckets[10];
  for (Index i = 0; i < panel.rows(); ++i) {
    if (panel.cohort(i) != Cohort::kSource) continue;
    Vector z(config.q + config.p);
    z.head(config.q) = panel.x().row(i).transpose();
    z.tail(config.p) = panel.w().row(i).transpose();
    const double prob = success_probability(config, z, panel.subgroup(i));
    const int b = std::min(9, static_cast<int>(prob * 10.0));
    buckets[b].sum_p += prob;
    buckets[b].sum_y += panel.outcome()[i];
    buckets[b].sum_var += prob * (1.0 - prob);
    ++buckets[b].n;
  }
  Index tested = 0;
  for (const Bucket& bucket : buckets) {
    if (bucket.n < 200) continue;
    ++tested;
    const double se = std::sqrt(bucket.sum_var) / static_cast<double>(bucket.n);
    CHECK(std::abs((bucket.sum_y - bucket.sum_p) / static_cast<double>(bucket.n)) < 3.0 * se);
  }
  CHECK(tested >= 5);
}

TEST_CASE("moment solve returns the exact projection for balanced-noise linear outcomes") {
  // Duplicated design rows with +/-e outcomes cancel exactly, so the
  // identity-link projection equals the generating coefficients.
  oracle::TestRng rng(55);
  const Index n = 40, q = 3;
  Vector b_star(q);
  b_star << 0.4, -1.2, 0.7;
  Matrix x(2 * n, q);
  Vector y(2 * n);
  for (Index i = 0; i < n; ++i) {
    Vector row(q);
    row[0] = 1.0;
    for (Index j = 1; j < q; ++j) row[j] = rng.normal();
    const double noise = 0.3 + rng.uniform();
    x.row(2 * i) = row.transpose();
    x.row(2 * i + 1) = row.transpose();
    y[2 * i] = row.dot(b_star) + noise;
    y[2 * i + 1] = row.dot(b_star) - noise;
  }
  const MomentSolve solve = solve_moment_equation(x, y, Link::kIdentity);
  REQUIRE(solve.converged);
  CHECK((solve.beta - b_star).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("truth oracle is self-consistent across seeds") {
  SimConfig config = base_config(SimSetting::kI);
  const TruthRecord a = compute_truth(config, 200000, 1);
  const TruthRecord b = compute_truth(config, 200000, 2);
  for (Index j = 0; j < config.q; ++j) {
    const double combined =
        std::sqrt(a.se_minority[j] * a.se_minority[j] + b.se_minority[j] * b.se_minority[j]);
    CHECK(std::abs(a.beta_bar_minority[j] - b.beta_bar_minority[j]) < 3.5 * combined + 1e-6);
  }
  CHECK(a.how == TruthRecord::How::kOracleMonteCarlo);
  CHECK(a.n_oracle == 200000);
}

TEST_CASE("no heterogeneity equalizes the two subgroup targets") {
  SimConfig config = base_config(SimSetting::kI);
  config.t = 0;
  const TruthRecord truth = compute_truth(config, 200000, 5);
  for (Index j = 0; j < config.q; ++j) {
    const double combined = std::sqrt(truth.se_minority[j] * truth.se_minority[j] +
                                      truth.se_majority[j] * truth.se_majority[j]);
    CHECK(std::abs(truth.beta_bar_minority[j] - truth.beta_bar_majority[j]) <
          3.5 * combined + 1e-6);
  }
}

TEST_CASE("a two-covariate logistic law without auxiliaries matches its coefficients") {
  // No W and no covariate shift: the projection equals the generating
  // coefficients; checked through the oracle root-finder on a large draw.
  const double c0 = -0.3, c1 = 0.9;
  Rng rng(777);
  const Index n = 300000;
  Matrix x(n, 2);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.truncated_normal(-1.5, 1.5);
    y[i] = rng.uniform() < expit(c0 + c1 * x(i, 1)) ? 1.0 : 0.0;
  }
  const MomentSolve solve = solve_moment_equation(x, y, Link::kLogistic);
  REQUIRE(solve.converged);
  CHECK(std::abs(solve.beta[0] - c0) < 3.0 * solve.se[0]);
  CHECK(std::abs(solve.beta[1] - c1) < 3.0 * solve.se[1]);
}

TEST_CASE("setting validation rejects undersized dimensions") {
  SimConfig config = base_config(SimSetting::kI);
  config.p = 2;  // setting I needs three auxiliary coordinates
  CHECK_THROWS_AS(generate_panel(config), ValidationError);
  SimConfig three = base_config(SimSetting::kIII);
  three.p = 1;
  CHECK_THROWS_AS(generate_panel(three), ValidationError);
}
