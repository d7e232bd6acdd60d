// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/nuisance.hpp"

#include <algorithm>
#include <cmath>

namespace makeup {

namespace {

void require_non_empty(const LabeledPanel& panel, Cohort s, Subgroup r) {
  if (panel.stratum(s, r).empty()) {
    throw ValidationError(std::string("empty stratum: ") + to_string(s) + "/" + to_string(r));
  }
}

Matrix take_rows(const Matrix& m, const IndexList& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (Index k = 0; k < out.rows(); ++k) out.row(k) = m.row(rows[static_cast<std::size_t>(k)]);
  return out;
}

void seeded_shuffle(IndexList& v, std::uint64_t seed) {
  std::uint64_t state = seed;
  for (Index i = static_cast<Index>(v.size()) - 1; i > 0; --i) {
    state = splitmix64(state);
    const Index j = static_cast<Index>(state % static_cast<std::uint64_t>(i + 1));
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
  }
}

// Density-ratio problem over given row subsets: design is the source block,
// the target block enters through the linear term.
struct TiltingProblem {
  Matrix design;
  GlmLoss loss;
};

TiltingProblem make_tilting_problem(const Matrix& phi_source, const Matrix& phi_target) {
  TiltingProblem p;
  p.design = phi_source;
  p.loss.link = Link::kExponential;
  p.loss.weights =
      Vector::Constant(phi_source.rows(), 1.0 / static_cast<double>(phi_source.rows()));
  p.loss.linear_term = -phi_target.colwise().mean().transpose();
  return p;
}

}  // namespace

SubgroupData make_subgroup_data(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                                Link g_link, Link b_link) {
  require_non_empty(panel, Cohort::kSource, subgroup);
  require_non_empty(panel, Cohort::kTarget, subgroup);

  const Matrix phi = expand_basis(panel, basis);
  SubgroupData data;
  data.subgroup = subgroup;
  data.g_link = g_link;
  data.b_link = b_link;
  data.source_rows = panel.stratum(Cohort::kSource, subgroup).indices;
  data.target_rows = panel.stratum(Cohort::kTarget, subgroup).indices;
  data.phi_source = take_rows(phi, data.source_rows);
  data.phi_target = take_rows(phi, data.target_rows);
  data.x_source = take_rows(panel.x(), data.source_rows);
  data.x_target = take_rows(panel.x(), data.target_rows);
  data.y_source.resize(static_cast<Index>(data.source_rows.size()));
  for (Index k = 0; k < data.y_source.size(); ++k) {
    data.y_source[k] = panel.outcome()[data.source_rows[static_cast<std::size_t>(k)]];
  }
  return data;
}

SolveResult fit_density_ratio(const SubgroupData& data, double lambda, const SolverConfig& config) {
  TiltingProblem problem = make_tilting_problem(data.phi_source, data.phi_target);
  const PenaltySpec penalty = PenaltySpec::free_intercept(data.d(), lambda);
  SolveResult result;
  try {
    result = solve_penalized(problem.design, problem.loss, penalty, config);
  } catch (const DivergenceError& e) {
    throw DivergenceError("density ratio fit diverged: source and target are separable along basis "
                          "coordinate " + std::to_string(e.direction()),
                          e.direction());
  }
  if (result.clip_active) {
    Index worst = 0;
    result.coef.values.cwiseAbs().maxCoeff(&worst);
    throw DivergenceError(
        "density ratio fit pinned at the exponential clip: source and target are effectively "
        "separable at this penalty (largest coefficient " + std::to_string(worst) + ")",
        worst);
  }
  return result;
}

SparseCoef fit_density_ratio(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                             double lambda) {
  return fit_density_ratio(make_subgroup_data(panel, subgroup, basis), lambda).coef;
}

SolveResult fit_imputation(const SubgroupData& data, double lambda, const SolverConfig& config) {
  GlmLoss loss;
  loss.link = data.b_link;
  loss.weights = Vector::Constant(data.n_source(), 1.0 / static_cast<double>(data.n_source()));
  loss.response = data.y_source;
  const PenaltySpec penalty = PenaltySpec::free_intercept(data.d(), lambda);
  return solve_penalized(data.phi_source, loss, penalty, config);
}

SparseCoef fit_imputation(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                          double lambda) {
  return fit_imputation(make_subgroup_data(panel, subgroup, basis), lambda).coef;
}

CvResult cv_density_ratio(const SubgroupData& data, const std::vector<double>& lambda_grid,
                          Index folds, std::uint64_t seed, const SolverConfig& config) {
  if (lambda_grid.empty()) throw ValidationError("cv_density_ratio: empty lambda grid");
  if (folds < 2) throw ValidationError("cv_density_ratio: folds must be >= 2");
  const Index ns = data.n_source();
  const Index nt = data.n_target();
  folds = std::min<Index>({folds, ns, nt});
  if (folds < 2) throw ValidationError("cv_density_ratio: strata too small to fold");

  IndexList src(static_cast<std::size_t>(ns)), tgt(static_cast<std::size_t>(nt));
  for (Index i = 0; i < ns; ++i) src[static_cast<std::size_t>(i)] = i;
  for (Index i = 0; i < nt; ++i) tgt[static_cast<std::size_t>(i)] = i;
  seeded_shuffle(src, derive_seed(seed, 0));
  seeded_shuffle(tgt, derive_seed(seed, 1));

  std::vector<std::size_t> eval_order(lambda_grid.size());
  for (std::size_t i = 0; i < eval_order.size(); ++i) eval_order[i] = i;
  std::sort(eval_order.begin(), eval_order.end(),
            [&](std::size_t a, std::size_t b) { return lambda_grid[a] > lambda_grid[b]; });

  CvResult out;
  out.mean_losses.assign(lambda_grid.size(), 0.0);
  std::vector<Index> contributing(lambda_grid.size(), 0);

  for (Index f = 0; f < folds; ++f) {
    IndexList in_s, out_s, in_t, out_t;
    for (Index pos = 0; pos < ns; ++pos) {
      (pos % folds == f ? out_s : in_s).push_back(src[static_cast<std::size_t>(pos)]);
    }
    for (Index pos = 0; pos < nt; ++pos) {
      (pos % folds == f ? out_t : in_t).push_back(tgt[static_cast<std::size_t>(pos)]);
    }
    if (in_s.empty() || out_s.empty() || in_t.empty() || out_t.empty()) {
      ++out.skipped_folds;
      out.warnings.push_back("fold " + std::to_string(f) + " skipped: empty split");
      continue;
    }
    const Matrix phi_s_in = take_rows(data.phi_source, in_s);
    const Matrix phi_t_in = take_rows(data.phi_target, in_t);
    const Matrix phi_s_out = take_rows(data.phi_source, out_s);
    const Matrix phi_t_out = take_rows(data.phi_target, out_t);
    TiltingProblem problem = make_tilting_problem(phi_s_in, phi_t_in);
    const Vector target_mean_out = phi_t_out.colwise().mean().transpose();

    SolverConfig fit_config = config;
    Vector warm = Vector::Zero(data.d());
    for (std::size_t pos : eval_order) {
      const PenaltySpec penalty = PenaltySpec::free_intercept(data.d(), lambda_grid[pos]);
      fit_config.init = warm;
      double heldout = std::numeric_limits<double>::infinity();
      try {
        const SolveResult fit = solve_penalized(problem.design, problem.loss, penalty, fit_config);
        warm = fit.coef.values;
        const Vector eta_out = phi_s_out * fit.coef.values;
        double acc = 0.0;
        for (Index i = 0; i < eta_out.size(); ++i) {
          acc += std::exp(std::min(eta_out[i], 700.0));
        }
        heldout = acc / static_cast<double>(eta_out.size()) - target_mean_out.dot(fit.coef.values);
      } catch (const DivergenceError&) {
        warm.setZero();
      }
      out.mean_losses[pos] += heldout;
      ++contributing[pos];
    }
  }

  if (folds == out.skipped_folds) throw ValidationError("cv_density_ratio: every fold was skipped");
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_pos = 0;
  for (std::size_t pos = 0; pos < lambda_grid.size(); ++pos) {
    out.mean_losses[pos] /= static_cast<double>(contributing[pos]);
    const bool better = out.mean_losses[pos] < best ||
                        (out.mean_losses[pos] == best && lambda_grid[pos] > lambda_grid[best_pos]);
    if (better) {
      best = out.mean_losses[pos];
      best_pos = pos;
    }
  }
  out.lambda = lambda_grid[best_pos];
  return out;
}

CvResult cv_imputation(const SubgroupData& data, const std::vector<double>& lambda_grid, Index folds,
                       std::uint64_t seed, const SolverConfig& config) {
  GlmLoss loss;
  loss.link = data.b_link;
  loss.weights = Vector::Constant(data.n_source(), 1.0 / static_cast<double>(data.n_source()));
  loss.response = data.y_source;
  Vector factors = Vector::Ones(data.d());
  factors[0] = 0.0;
  return cross_validate(data.phi_source, loss, factors, lambda_grid, folds, seed, config);
}

CalibrationInputs make_calibration_inputs(const SubgroupData& data, const Vector& alpha,
                                          const Vector& gamma) {
  if (alpha.size() != data.d() || gamma.size() != data.d()) {
    throw ValidationError("calibration: nuisance coefficient length does not match basis dimension");
  }
  CalibrationInputs in;
  in.data = &data;
  in.alpha = alpha;
  in.gamma = gamma;
  in.eta_alpha_source = data.phi_source * alpha;
  in.eta_gamma_source = data.phi_source * gamma;
  in.eta_gamma_target = data.phi_target * gamma;
  in.h_source = in.eta_alpha_source.unaryExpr(
      [](double u) { return std::exp(std::min(u, kExpClip)); });
  in.bdot_source = link_derivative(data.b_link, in.eta_gamma_source);
  in.bdot_target = link_derivative(data.b_link, in.eta_gamma_target);
  return in;
}

namespace {

struct StratumSolve {
  SparseCoef xi, zeta;
  bool failed = false;
  std::vector<std::string> warnings;
};

// One sign stratum: masked absolute weights on the full subgroup blocks.
// Normalizers stay the full-stratum counts so the two stratum moments add
// up to the signed calibration moment.
StratumSolve solve_stratum(const CalibrationInputs& in, const Vector& w_abs_source,
                           const Vector& w_abs_target, Index n_stratum_union,
                           Index n_stratum_source, const char* tag, double lambda_xi,
                           double lambda_zeta, const SolverConfig& base_config) {
  // Corrections are perturbations of order one; a tight magnitude bound
  // lets separable penalty levels fail fast before escalation.
  SolverConfig config = base_config;
  config.divergence_bound = std::min(config.divergence_bound, 10.0);
  const SubgroupData& data = *in.data;
  const Index d = data.d();
  const double ns = static_cast<double>(data.n_source());
  const double nt = static_cast<double>(data.n_target());
  StratumSolve out;
  out.xi.values = Vector::Zero(d);
  out.zeta.values = Vector::Zero(d);

  if (n_stratum_union < 2) {
    out.warnings.push_back(std::string("calibration stratum ") + tag +
                           " has fewer than 2 rows; correction set to zero");
    out.failed = n_stratum_union > 0;  // empty stratum is a vacuous zero, not a failure
    return out;
  }

  const Index n_union = data.n_source() + data.n_target();
  const double scale_xi =
      lambda_xi * std::sqrt(static_cast<double>(n_union) / static_cast<double>(n_stratum_union));
  const double scale_zeta =
      n_stratum_source > 0
          ? lambda_zeta * std::sqrt(ns / static_cast<double>(n_stratum_source))
          : lambda_zeta;

  // Density-ratio correction: exp-link rows on the source block with the
  // target block folded into the linear term. A separable stratum gets its
  // penalty escalated before the correction is dropped.
  {
    GlmLoss loss;
    loss.link = Link::kExponential;
    loss.weights = (w_abs_source.array() * in.bdot_source.array()).matrix() / ns;
    loss.offset = in.eta_alpha_source;
    loss.linear_term =
        -(data.phi_target.transpose() * (w_abs_target.array() * in.bdot_target.array()).matrix()) /
        nt;
    bool solved = false;
    std::string failure;
    for (int attempt = 0; attempt < 3 && !solved; ++attempt) {
      const double level = scale_xi * std::pow(4.0, attempt);
      const PenaltySpec penalty = PenaltySpec::unit(d, level);
      try {
        SolveResult r = solve_penalized(data.phi_source, loss, penalty, config);
        if (r.clip_active) {
          failure = "solution pinned at the exponential clip";
          continue;
        }
        out.xi = std::move(r.coef);
        solved = true;
        if (attempt > 0) {
          out.warnings.push_back(std::string("density-ratio calibration (") + tag +
                                 ") needed a " + std::to_string(1 << (2 * attempt)) +
                                 "x penalty escalation");
        }
        if (!r.converged) {
          out.warnings.push_back(std::string("density-ratio calibration (") + tag +
                                 ") did not converge");
        }
      } catch (const DivergenceError& e) {
        failure = e.what();
      }
    }
    if (!solved) {
      out.failed = true;
      out.warnings.push_back(std::string("density-ratio calibration (") + tag + ") failed: " +
                             failure);
    }
  }

  // Imputation correction: b-link rows on the labeled source block.
  {
    GlmLoss loss;
    loss.link = data.b_link;
    loss.weights = (w_abs_source.array() * in.h_source.array()).matrix() / ns;
    loss.offset = in.eta_gamma_source;
    loss.response = data.y_source;
    bool solved = false;
    std::string failure;
    for (int attempt = 0; attempt < 3 && !solved; ++attempt) {
      const PenaltySpec penalty = PenaltySpec::unit(d, scale_zeta * std::pow(4.0, attempt));
      try {
        SolveResult r = solve_penalized(data.phi_source, loss, penalty, config);
        out.zeta = std::move(r.coef);
        solved = true;
        if (attempt > 0) {
          out.warnings.push_back(std::string("imputation calibration (") + tag + ") needed a " +
                                 std::to_string(1 << (2 * attempt)) + "x penalty escalation");
        }
        if (!r.converged) {
          out.warnings.push_back(std::string("imputation calibration (") + tag +
                                 ") did not converge");
        }
      } catch (const DivergenceError& e) {
        failure = e.what();
      }
    }
    if (!solved) {
      out.failed = true;
      out.warnings.push_back(std::string("imputation calibration (") + tag + ") failed: " +
                             failure);
    }
  }
  return out;
}

}  // namespace

CalibratedCorrection calibrate_coordinate(const CalibrationInputs& inputs, const Vector& omega_row,
                                          Index j, double lambda_xi, double lambda_zeta,
                                          const SolverConfig& config) {
  const SubgroupData& data = *inputs.data;
  if (omega_row.size() != data.q()) {
    throw ValidationError("calibrate_coordinate: omega row length does not match q");
  }
  CalibratedCorrection out;
  out.j = j;

  const Vector w_source = data.x_source * omega_row;
  const Vector w_target = data.x_target * omega_row;

  Vector pos_s = Vector::Zero(data.n_source()), neg_s = Vector::Zero(data.n_source());
  Vector pos_t = Vector::Zero(data.n_target()), neg_t = Vector::Zero(data.n_target());
  Index n_pos = 0, n_neg = 0, n_pos_s = 0, n_neg_s = 0;
  for (Index i = 0; i < data.n_source(); ++i) {
    if (w_source[i] >= 0.0) {
      pos_s[i] = w_source[i];
      out.positive_rows.push_back(data.source_rows[static_cast<std::size_t>(i)]);
      ++n_pos;
      ++n_pos_s;
    } else {
      neg_s[i] = -w_source[i];
      out.negative_rows.push_back(data.source_rows[static_cast<std::size_t>(i)]);
      ++n_neg;
      ++n_neg_s;
    }
  }
  for (Index i = 0; i < data.n_target(); ++i) {
    if (w_target[i] >= 0.0) {
      pos_t[i] = w_target[i];
      out.positive_rows.push_back(data.target_rows[static_cast<std::size_t>(i)]);
      ++n_pos;
    } else {
      neg_t[i] = -w_target[i];
      out.negative_rows.push_back(data.target_rows[static_cast<std::size_t>(i)]);
      ++n_neg;
    }
  }

  StratumSolve pos = solve_stratum(inputs, pos_s, pos_t, n_pos, n_pos_s, "positive", lambda_xi,
                                   lambda_zeta, config);
  StratumSolve neg = solve_stratum(inputs, neg_s, neg_t, n_neg, n_neg_s, "negative", lambda_xi,
                                   lambda_zeta, config);
  out.xi_pos = std::move(pos.xi);
  out.zeta_pos = std::move(pos.zeta);
  out.xi_neg = std::move(neg.xi);
  out.zeta_neg = std::move(neg.zeta);
  out.failed = pos.failed || neg.failed;
  for (auto& w : pos.warnings) out.warnings.push_back("j=" + std::to_string(j) + ": " + w);
  for (auto& w : neg.warnings) out.warnings.push_back("j=" + std::to_string(j) + ": " + w);
  return out;
}

CalibratedCorrection calibrate_coordinate(const LabeledPanel& panel, Subgroup subgroup,
                                          const BasisMap& basis, const NuisancePair& pair,
                                          const Vector& omega_row, Index j, double lambda_xi,
                                          double lambda_zeta) {
  const SubgroupData data = make_subgroup_data(panel, subgroup, basis, Link::kLogistic, pair.b_link);
  const CalibrationInputs inputs =
      make_calibration_inputs(data, pair.alpha.values, pair.gamma.values);
  return calibrate_coordinate(inputs, omega_row, j, lambda_xi, lambda_zeta);
}

}  // namespace makeup
