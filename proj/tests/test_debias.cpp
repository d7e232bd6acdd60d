// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include <doctest.h>

#include <Eigen/Dense>

#include "makeup/debias.hpp"
#include "oracles.hpp"

using namespace makeup;

namespace {

struct ToyLaw {
  Vector alpha;  // source-assignment tilt, exp(z'alpha)-correct
  Vector gamma;  // outcome model expit(z'gamma)
  Index q = 0;
};

LabeledPanel draw_panel(const ToyLaw& law, Index n, std::uint64_t seed) {
  oracle::TestRng rng(seed);
  const Index d = law.alpha.size();
  std::vector<Observation> rows;
  rows.reserve(static_cast<std::size_t>(n));
  while (static_cast<Index>(rows.size()) < n) {
    Vector z(d);
    z[0] = 1.0;
    for (Index j = 1; j < d; ++j) z[j] = rng.normal() * 0.8;
    Observation obs;
    obs.r = Subgroup::kMinority;
    obs.s = rng.uniform() < oracle::mean_fn(oracle::Kind::kLogistic, z.dot(law.alpha))
                ? Cohort::kSource
                : Cohort::kTarget;
    if (obs.s == Cohort::kSource) {
      obs.y =
          rng.uniform() < oracle::mean_fn(oracle::Kind::kLogistic, z.dot(law.gamma)) ? 1.0 : 0.0;
    }
    obs.x = z.head(law.q);
    obs.w = z.tail(d - law.q);
    rows.push_back(std::move(obs));
  }
  return build_panel(rows);
}

// Population target: the X-only projection of the outcome model on the
// target stratum, solved on a large oracle draw.
Vector toy_truth(const ToyLaw& law, Index n_oracle, std::uint64_t seed) {
  oracle::TestRng rng(seed);
  const Index d = law.alpha.size();
  Matrix x(n_oracle, law.q);
  Vector y(n_oracle);
  Index filled = 0;
  while (filled < n_oracle) {
    Vector z(d);
    z[0] = 1.0;
    for (Index j = 1; j < d; ++j) z[j] = rng.normal() * 0.8;
    if (rng.uniform() < oracle::mean_fn(oracle::Kind::kLogistic, z.dot(law.alpha))) continue;
    x.row(filled) = z.head(law.q).transpose();
    y[filled] =
        rng.uniform() < oracle::mean_fn(oracle::Kind::kLogistic, z.dot(law.gamma)) ? 1.0 : 0.0;
    ++filled;
  }
  oracle::Problem problem{x, Vector::Constant(n_oracle, 1.0 / static_cast<double>(n_oracle)), y,
                          {}, {}, oracle::Kind::kLogistic};
  return oracle::newton_glm(problem, 1e-11);
}

ToyLaw default_law() {
  ToyLaw law;
  law.q = 4;
  law.alpha = (Vector(6) << 0.0, 0.3, -0.2, 0.0, 0.4, 0.0).finished();
  law.gamma = (Vector(6) << 0.1, 0.9, -0.6, 0.0, 0.7, -0.4).finished();
  return law;
}

}  // namespace

TEST_CASE("dr gradient reduces to the plain score when the nuisances are degenerate") {
  // Source rows equal target rows; unit density ratio and exact imputation.
  oracle::TestRng rng(3);
  const Index q = 3, p = 1;
  const Vector gamma = (Vector(4) << 0.2, 0.5, -0.4, 0.3).finished();
  std::vector<Observation> rows;
  for (Index i = 0; i < 30; ++i) {
    Vector z(4);
    z[0] = 1.0;
    for (Index j = 1; j < 4; ++j) z[j] = rng.normal();
    Observation src;
    src.r = Subgroup::kMinority;
    src.s = Cohort::kSource;
    src.y = oracle::mean_fn(oracle::Kind::kLogistic, z.dot(gamma));  // y = m(z) exactly
    src.x = z.head(q);
    src.w = z.tail(p);
    Observation tgt = src;
    tgt.s = Cohort::kTarget;
    tgt.y.reset();
    rows.push_back(src);
    rows.push_back(tgt);
  }
  const LabeledPanel panel = build_panel(rows);
  const SubgroupData data =
      make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(q, p));

  DrLossContext ctx;
  ctx.alpha = Vector::Zero(4);  // h = 1
  ctx.gamma = gamma;            // m matches y on every row
  const Vector beta = (Vector(3) << 0.1, -0.2, 0.4).finished();
  const Vector grad = dr_gradient(data, ctx, beta);

  Vector plain = Vector::Zero(q);
  for (Index i = 0; i < data.n_target(); ++i) {
    const double g = oracle::mean_fn(oracle::Kind::kLogistic, data.x_target.row(i).dot(beta));
    const double m = oracle::mean_fn(oracle::Kind::kLogistic,
                                     data.phi_target.row(i).dot(gamma));
    plain += (g - m) * data.x_target.row(i).transpose();
  }
  plain /= static_cast<double>(data.n_target());
  CHECK((grad - plain).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("dr gradient vanishes at the finite-population root") {
  // Constructed 20-row population whose outcomes sit near the imputation
  // surface, so the estimating equation has an interior root.
  oracle::TestRng rng(11);
  DrLossContext ctx;
  ctx.alpha = rng.normal_vector(6) * 0.3;
  ctx.gamma = rng.normal_vector(6) * 0.4;

  std::vector<Observation> rows;
  for (Index i = 0; i < 20; ++i) {
    Vector z(6);
    z[0] = 1.0;
    for (Index j = 1; j < 6; ++j) z[j] = rng.normal() * 0.8;
    Observation obs;
    obs.r = Subgroup::kMinority;
    obs.s = i % 2 ? Cohort::kSource : Cohort::kTarget;
    if (obs.s == Cohort::kSource) {
      const double m = oracle::mean_fn(oracle::Kind::kLogistic, z.dot(ctx.gamma));
      obs.y = m + (i % 4 == 1 ? 0.05 : -0.05);
    }
    obs.x = z.head(4);
    obs.w = z.tail(2);
    rows.push_back(std::move(obs));
  }
  const LabeledPanel panel = build_panel(rows);
  const SubgroupData data =
      make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(4, 2));

  // Root of the estimating equation by an independent Newton solve: the
  // target-block score with the fixed nuisance bracket as a linear term.
  const Vector at_zero = dr_gradient(data, ctx, Vector::Zero(4));
  Vector g0 = Vector::Zero(4);
  for (Index i = 0; i < data.n_target(); ++i) {
    g0 += 0.5 * data.x_target.row(i).transpose() / static_cast<double>(data.n_target());
  }
  oracle::Problem problem{data.x_target,
                          Vector::Constant(data.n_target(),
                                           1.0 / static_cast<double>(data.n_target())),
                          {},
                          {},
                          at_zero - g0,
                          oracle::Kind::kLogistic};
  const Vector root = oracle::newton_glm(problem, 1e-13);
  REQUIRE(oracle::gradient(problem, root).cwiseAbs().maxCoeff() < 1e-11);
  CHECK(dr_gradient(data, ctx, root).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("dr gradient matches finite differences of the scalar loss") {
  const ToyLaw law = default_law();
  const LabeledPanel panel = draw_panel(law, 300, 13);
  const SubgroupData data =
      make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(4, 2));
  oracle::TestRng rng(17);
  DrLossContext ctx;
  ctx.alpha = rng.normal_vector(6) * 0.3;
  ctx.gamma = rng.normal_vector(6) * 0.3;
  for (int rep = 0; rep < 5; ++rep) {
    const Vector beta = rng.normal_vector(4) * 0.5;
    const Vector analytic = dr_gradient(data, ctx, beta);
    const Vector fd = oracle::fd_gradient(
        [&](const Vector& b) { return dr_loss(data, ctx, b); }, beta);
    for (Index j = 0; j < 4; ++j) {
      CHECK(std::abs(analytic[j] - fd[j]) <= 1e-6 * std::max(1.0, std::abs(analytic[j])));
    }
  }
}

TEST_CASE("dr gradient names rows whose density-ratio weight overflows") {
  const ToyLaw law = default_law();
  const LabeledPanel panel = draw_panel(law, 40, 19);
  const SubgroupData data =
      make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(4, 2));
  DrLossContext ctx;
  ctx.alpha = Vector::Zero(6);
  ctx.alpha[0] = 800.0;  // exp overflows on every source row
  ctx.gamma = Vector::Zero(6);
  CHECK_THROWS_AS(dr_gradient(data, ctx, Vector::Zero(4)), std::overflow_error);
}

TEST_CASE("preliminary fit at full shrinkage solves the corrected intercept problem") {
  const ToyLaw law = default_law();
  const LabeledPanel panel = draw_panel(law, 500, 23);
  const SubgroupData data =
      make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(4, 2));
  oracle::TestRng rng(29);
  const Vector alpha = rng.normal_vector(6) * 0.2;
  const Vector gamma = rng.normal_vector(6) * 0.2;
  const SolveResult fit = fit_preliminary_beta(data, alpha, gamma, 5.0);
  CHECK(fit.coef.nnz() == 1);
  // The free intercept zeroes the first gradient coordinate exactly.
  DrLossContext ctx;
  ctx.alpha = alpha;
  ctx.gamma = gamma;
  CHECK(std::abs(dr_gradient(data, ctx, fit.coef.values)[0]) < 1e-7);
}

TEST_CASE("preliminary fit is consistent without covariate shift") {
  ToyLaw law = default_law();
  law.alpha.setZero();  // no shift
  const Vector beta_bar = toy_truth(law, 400000, 31);
  for (std::uint64_t rep = 0; rep < 3; ++rep) {
    const LabeledPanel panel = draw_panel(law, 40000, 33 + rep);
    const SubgroupData data =
        make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(4, 2));
    const Vector alpha = fit_density_ratio(data, 0.003).coef.values;
    const Vector gamma = fit_imputation(data, 0.003).coef.values;
    const SolveResult fit = fit_preliminary_beta(data, alpha, gamma, 1e-4);
    CHECK((fit.coef.values - beta_bar).norm() < 0.05);
  }
}

TEST_CASE("doubling the per-row weights leaves the preliminary fit unchanged") {
  const ToyLaw law = default_law();
  const LabeledPanel panel = draw_panel(law, 400, 37);
  const SubgroupData data =
      make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(4, 2));
  oracle::TestRng rng(41);
  const Vector alpha = rng.normal_vector(6) * 0.2;
  const Vector gamma = rng.normal_vector(6) * 0.2;
  Vector ws(data.n_source()), wt(data.n_target());
  for (Index i = 0; i < ws.size(); ++i) ws[i] = 0.5 + rng.uniform();
  for (Index i = 0; i < wt.size(); ++i) wt[i] = 0.5 + rng.uniform();
  const Vector ws2 = 2.0 * ws, wt2 = 2.0 * wt;

  const SolveResult a = fit_preliminary_beta(data, alpha, gamma, 0.02, {}, &ws, &wt);
  const SolveResult b = fit_preliminary_beta(data, alpha, gamma, 0.02, {}, &ws2, &wt2);
  CHECK((a.coef.values - b.coef.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nodewise row inverts a diagonal second-moment matrix") {
  // Orthogonal columns: scaled coordinate blocks.
  const Index q = 3, n = 6;
  Matrix x = Matrix::Zero(n, q);
  x(0, 0) = x(1, 0) = 2.0;
  x(2, 1) = x(3, 1) = 1.5;
  x(4, 2) = x(5, 2) = 0.5;
  const Vector beta = Vector::Zero(q);
  for (Index j = 0; j < q; ++j) {
    const PrecisionRow row = nodewise_row(x, Link::kIdentity, beta, j, 0.01);
    const double sigma_jj = x.col(j).squaredNorm() / static_cast<double>(n);
    for (Index k = 0; k < q; ++k) {
      CHECK(row.omega[k] ==
            doctest::Approx(k == j ? 1.0 / sigma_jj : 0.0).epsilon(1e-10));
    }
  }
}

TEST_CASE("nodewise rows at zero penalty match the exact inverse") {
  const Index q = 3, n = 60;
  oracle::TestRng rng(43);
  Matrix x(n, q);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Index j = 1; j < q; ++j) x(i, j) = rng.normal();
  }
  const Vector beta = (Vector(3) << 0.2, -0.4, 0.3).finished();
  const Vector eta = x * beta;
  Matrix sigma = Matrix::Zero(q, q);
  for (Index i = 0; i < n; ++i) {
    sigma += oracle::deriv_fn(oracle::Kind::kLogistic, eta[i]) * x.row(i).transpose() * x.row(i);
  }
  sigma /= static_cast<double>(n);
  const Matrix inverse = sigma.inverse();

  SolverConfig config;
  config.tol = 1e-12;
  config.kkt_tol = 1e-12;
  for (Index j = 0; j < q; ++j) {
    const PrecisionRow row = nodewise_row(x, Link::kLogistic, beta, j, 0.0, config);
    CHECK((row.omega - inverse.row(j).transpose()).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(std::abs(row.omega.dot(sigma.col(j)) - 1.0) < 1e-8);
  }
}

TEST_CASE("nodewise KKT conditions bound the off-diagonal residual") {
  const Index q = 6, n = 120;
  oracle::TestRng rng(47);
  Matrix x(n, q);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Index j = 1; j < q; ++j) x(i, j) = rng.normal();
  }
  const Vector beta = rng.normal_vector(q) * 0.3;
  const double lambda = 0.05;
  const Vector eta = x * beta;
  Matrix sigma = Matrix::Zero(q, q);
  for (Index i = 0; i < n; ++i) {
    sigma += oracle::deriv_fn(oracle::Kind::kLogistic, eta[i]) * x.row(i).transpose() * x.row(i);
  }
  sigma /= static_cast<double>(n);

  for (Index j = 0; j < q; ++j) {
    const PrecisionRow row = nodewise_row(x, Link::kLogistic, beta, j, lambda);
    const Vector resid = sigma * row.omega - Vector::Unit(q, j);
    for (Index k = 0; k < q; ++k) {
      if (k == j) continue;
      CHECK(std::abs(resid[k]) <= lambda / row.tau_sq + 1e-8);
    }
  }
}

TEST_CASE("duplicated coordinates make the node-wise residual singular") {
  const Index n = 40;
  oracle::TestRng rng(53);
  Matrix x(n, 3);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.normal();
    x(i, 2) = x(i, 1);
  }
  CHECK_THROWS_AS(nodewise_row(x, Link::kIdentity, Vector::Zero(3), 1, 0.0), SingularityError);
}

TEST_CASE("one-step correction vanishes at an exact stationary point") {
  // With no penalty on beta and full shrinkage of the calibration
  // corrections, the evaluated gradient is the stationarity condition of
  // the preliminary fit, so the debiased vector equals it exactly.
  const ToyLaw law = default_law();
  const LabeledPanel panel = draw_panel(law, 1200, 59);
  PipelineTuning tuning;
  tuning.lambda_alpha = 0.01;
  tuning.lambda_gamma = 0.01;
  tuning.lambda_beta = 0.0;
  tuning.lambda_nodewise = 0.01;
  tuning.nuisance_lambda_inflation = 1.0;
  tuning.solver.kkt_tol = 1e-11;
  tuning.solver.tol = 1e-12;

  // Full shrinkage of the calibration problems: inflate their penalties via
  // the shared nuisance lambdas by running the pipeline with huge
  // calibration scales. The pipeline derives the calibration penalties from
  // lambda_alpha / lambda_gamma, so a dedicated run uses large values there
  // while the preliminary fits get their own solves below.
  const SubgroupData data =
      make_subgroup_data(panel, Subgroup::kMinority, BasisMap::identity(4, 2));
  const Vector alpha = fit_density_ratio(data, 0.01, tuning.solver).coef.values;
  const Vector gamma = fit_imputation(data, 0.01, tuning.solver).coef.values;
  const SolveResult prelim = fit_preliminary_beta(data, alpha, gamma, 0.0, tuning.solver);
  REQUIRE(prelim.converged);

  DrLossContext ctx;
  ctx.alpha = alpha;
  ctx.gamma = gamma;
  CHECK(dr_gradient(data, ctx, prelim.coef.values).cwiseAbs().maxCoeff() < 1e-9);

  PipelineTuning big_calib = tuning;
  big_calib.lambda_alpha = 0.01;
  big_calib.lambda_gamma = 0.01;
  const DebiasBundle bundle =
      debias_subgroup(panel, Subgroup::kMinority, BasisMap::identity(4, 2), big_calib);
  // Corrections that came back zero leave the calibrated gradient equal to
  // the preliminary one; those coordinates must reproduce beta_tilde.
  for (Index j = 0; j < 4; ++j) {
    const CalibratedCorrection& corr = bundle.corrections[static_cast<std::size_t>(j)];
    if (corr.xi_pos.nnz() + corr.xi_neg.nnz() + corr.zeta_pos.nnz() + corr.zeta_neg.nnz() == 0) {
      CHECK(bundle.beta_deb[j] ==
            doctest::Approx(bundle.beta_prelim.values[j]).epsilon(1e-8));
    }
  }

  // Explicit full-shrinkage calibration: every coordinate collapses.
  const CalibrationInputs inputs = make_calibration_inputs(data, alpha, gamma);
  const PrecisionRow row = nodewise_row(data.x_target, Link::kLogistic, prelim.coef.values, 1,
                                        *tuning.lambda_nodewise);
  const CalibratedCorrection corr = calibrate_coordinate(inputs, row.omega, 1, 100.0, 100.0);
  CHECK(corr.xi_pos.nnz() + corr.xi_neg.nnz() + corr.zeta_pos.nnz() + corr.zeta_neg.nnz() == 0);
  const double projected = row.omega.dot(dr_gradient(data, ctx, prelim.coef.values));
  CHECK(std::abs(projected) < 1e-8);
}

TEST_CASE("debiasing lowers the squared error of a shrunk coordinate") {
  // Paired Monte Carlo at a deliberately biased penalty level: the one-step
  // corrected coordinate must not do worse than the preliminary one.
  ToyLaw law = default_law();
  const Vector beta_bar = toy_truth(law, 400000, 61);
  const Index target_coord = 1;
  const Index reps = 100;
  double mse_prelim = 0.0, mse_deb = 0.0;
  for (Index rep = 0; rep < reps; ++rep) {
    const LabeledPanel panel = draw_panel(law, 1500, 1000 + static_cast<std::uint64_t>(rep));
    PipelineTuning tuning;
    const double rate = std::sqrt(std::log(4.0) / 750.0);
    tuning.lambda_alpha = 0.05 * rate;
    tuning.lambda_gamma = 0.05 * rate;
    tuning.lambda_beta = 1.5 * rate;  // strong shrinkage induces visible bias
    tuning.lambda_nodewise = 0.5 * rate;
    const DebiasBundle bundle =
        debias_subgroup(panel, Subgroup::kMinority, BasisMap::identity(4, 2), tuning);
    const double ep = bundle.beta_prelim.values[target_coord] - beta_bar[target_coord];
    const double ed = bundle.beta_deb[target_coord] - beta_bar[target_coord];
    mse_prelim += ep * ep;
    mse_deb += ed * ed;
  }
  INFO("mse prelim ", mse_prelim / reps, " vs debiased ", mse_deb / reps);
  CHECK(mse_deb <= mse_prelim);
}

TEST_CASE("relabeling non-intercept coordinates permutes the debiased vector") {
  const ToyLaw law = default_law();
  const LabeledPanel panel = draw_panel(law, 900, 67);
  PipelineTuning tuning;
  const double rate = std::sqrt(std::log(4.0) / 450.0);
  tuning.lambda_alpha = 0.1 * rate;
  tuning.lambda_gamma = 0.1 * rate;
  tuning.lambda_beta = 0.5 * rate;
  tuning.lambda_nodewise = 0.5 * rate;
  const BasisMap basis = BasisMap::identity(4, 2);
  const DebiasBundle base = debias_subgroup(panel, Subgroup::kMinority, basis, tuning);

  // Swap x-coordinates 1 and 3 (and the matching basis columns).
  std::vector<Observation> rows;
  for (Index i = 0; i < panel.rows(); ++i) {
    Observation obs;
    obs.s = panel.cohort(i);
    obs.r = panel.subgroup(i);
    if (obs.s == Cohort::kSource) obs.y = panel.outcome()[i];
    obs.x = panel.x().row(i).transpose();
    std::swap(obs.x[1], obs.x[3]);
    obs.w = panel.w().row(i).transpose();
    rows.push_back(std::move(obs));
  }
  const DebiasBundle permuted =
      debias_subgroup(build_panel(rows), Subgroup::kMinority, basis, tuning);
  Vector expected = base.beta_deb;
  std::swap(expected[1], expected[3]);
  CHECK((permuted.beta_deb - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("hard threshold keeps the intercept and large coordinates") {
  const Vector v = (Vector(3) << 0.5, 0.2, -0.4).finished();
  const SparseCoef thr = hard_threshold(v, 0.3);
  CHECK(thr.values[0] == 0.5);
  CHECK(thr.values[1] == 0.0);
  CHECK(thr.values[2] == -0.4);

  const SparseCoef tiny = hard_threshold(v, 1e-300);
  CHECK((tiny.values - v).cwiseAbs().maxCoeff() == 0.0);

  const SparseCoef huge = hard_threshold(v, 10.0);
  CHECK(huge.values[0] == 0.5);
  CHECK(huge.nnz() == 1);

  CHECK_THROWS_AS(hard_threshold(v, 0.0), ValidationError);
}

TEST_CASE("hard threshold perturbs each coordinate by less than tau") {
  oracle::TestRng rng(71);
  for (int rep = 0; rep < 20; ++rep) {
    const Vector v = rng.normal_vector(12);
    const double tau = 0.1 + rng.uniform();
    CHECK((hard_threshold(v, tau).values - v).cwiseAbs().maxCoeff() < tau);
  }
}

TEST_CASE("threshold selection against a reference") {
  const std::vector<double> grid = {0.05, 0.1, 0.2, 0.4};
  const Vector deb = (Vector(4) << 0.3, 0.15, -0.3, 0.08).finished();

  // Self-reference: nothing should be thresholded away.
  CHECK(select_threshold(deb, deb, grid) == 0.05);

  // Null reference: everything should go.
  Vector null_ref = Vector::Zero(4);
  null_ref[0] = 0.3;
  CHECK(select_threshold(deb, null_ref, grid) == 0.4);

  CHECK(select_threshold(deb, deb, {0.1}) == 0.1);
}

TEST_CASE("support stabilization picks the first repeated support") {
  const Vector deb = (Vector(5) << 0.5, 0.30, 0.28, 0.05, 0.02).finished();
  // tau = 0.1: support {0,1,2}; tau = 0.2: {0,1,2}; stabilized at 0.1.
  CHECK(stabilize_threshold(deb, {0.03, 0.1, 0.2, 0.4}) == 0.1);
  // No consecutive pair matches: fall back to the sparsest grid point.
  const Vector spread = (Vector(4) << 0.5, 0.35, 0.15, 0.06).finished();
  CHECK(stabilize_threshold(spread, {0.05, 0.1, 0.25, 0.45}) == 0.45);
}

TEST_CASE("threshold grid follows the rate") {
  const std::vector<double> grid = threshold_grid(100, 400, {0.25, 1.0, 4.0});
  const double rate = std::sqrt(std::log(100.0) / 400.0);
  CHECK(grid[0] == doctest::Approx(0.25 * rate));
  CHECK(grid[1] == doctest::Approx(rate));
  CHECK(grid[2] == doctest::Approx(4.0 * rate));
}
