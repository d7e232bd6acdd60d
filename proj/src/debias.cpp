// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/debias.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace makeup {

namespace {

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

// Adds the sparse column combination design * coef to out.
void add_sparse_product(const Matrix& design, const SparseCoef& coef, Vector& out) {
  for (Index j : coef.support) out += coef.values[j] * design.col(j);
}

void check_h_finite(const Vector& h, const IndexList& rows) {
  if (h.allFinite()) return;
  std::string offenders;
  int count = 0;
  for (Index i = 0; i < h.size(); ++i) {
    if (!std::isfinite(h[i])) {
      if (count++) offenders += ", ";
      offenders += std::to_string(rows.empty() ? i : rows[static_cast<std::size_t>(i)]);
      if (count >= 8) break;
    }
  }
  throw std::overflow_error("density-ratio weights overflowed exp at rows: " + offenders);
}

struct RowNuisance {
  Vector h_source;  // exp(phi' alpha_i)
  Vector m_source;  // b(phi' gamma_i)
  Vector m_target;
};

RowNuisance evaluate_nuisance(const SubgroupData& data, const DrLossContext& ctx) {
  RowNuisance out;
  Vector eta_a = data.phi_source * ctx.alpha;
  Vector eta_gs = data.phi_source * ctx.gamma;
  Vector eta_gt = data.phi_target * ctx.gamma;
  if (ctx.stratified) {
    const auto& st = *ctx.stratified;
    std::unordered_set<Index> negative(st.negative_rows.begin(), st.negative_rows.end());
    const Vector eta_a_pos = data.phi_source * st.alpha_pos;
    const Vector eta_a_neg = data.phi_source * st.alpha_neg;
    const Vector eta_gs_pos = data.phi_source * st.gamma_pos;
    const Vector eta_gs_neg = data.phi_source * st.gamma_neg;
    const Vector eta_gt_pos = data.phi_target * st.gamma_pos;
    const Vector eta_gt_neg = data.phi_target * st.gamma_neg;
    for (Index i = 0; i < data.n_source(); ++i) {
      const bool neg = negative.count(data.source_rows[static_cast<std::size_t>(i)]) > 0;
      eta_a[i] = neg ? eta_a_neg[i] : eta_a_pos[i];
      eta_gs[i] = neg ? eta_gs_neg[i] : eta_gs_pos[i];
    }
    for (Index i = 0; i < data.n_target(); ++i) {
      const bool neg = negative.count(data.target_rows[static_cast<std::size_t>(i)]) > 0;
      eta_gt[i] = neg ? eta_gt_neg[i] : eta_gt_pos[i];
    }
  }
  out.h_source = eta_a.array().exp();
  check_h_finite(out.h_source, data.source_rows);
  out.m_source = link_mean(ctx.b_link, eta_gs);
  out.m_target = link_mean(ctx.b_link, eta_gt);
  return out;
}

Vector dr_linear_term(const SubgroupData& data, const RowNuisance& nu,
                      const Vector* source_weights = nullptr,
                      const Vector* target_weights = nullptr) {
  const double ns = static_cast<double>(data.n_source());
  const double nt = static_cast<double>(data.n_target());
  Vector rs = nu.h_source.cwiseProduct(nu.m_source - data.y_source);
  Vector rt = nu.m_target;
  if (source_weights) rs = rs.cwiseProduct(*source_weights);
  if (target_weights) rt = rt.cwiseProduct(*target_weights);
  Vector c = data.x_source.transpose() * rs / ns - data.x_target.transpose() * rt / nt;
  if (!c.allFinite()) throw std::overflow_error("doubly robust linear term overflowed");
  return c;
}

}  // namespace

Vector dr_gradient(const SubgroupData& data, const DrLossContext& ctx, const Vector& beta) {
  if (beta.size() != data.q()) throw ValidationError("dr_gradient: beta length != q");
  const RowNuisance nu = evaluate_nuisance(data, ctx);
  const Vector c = dr_linear_term(data, nu);
  const Vector g = link_mean(ctx.g_link, (data.x_target * beta).eval());
  return c + data.x_target.transpose() * g / static_cast<double>(data.n_target());
}

Vector dr_gradient(const DrLossContext& ctx, const LabeledPanel& panel, const BasisMap& basis,
                   const Vector& beta) {
  const SubgroupData data = make_subgroup_data(panel, ctx.subgroup, basis, ctx.g_link, ctx.b_link);
  return dr_gradient(data, ctx, beta);
}

double dr_loss(const SubgroupData& data, const DrLossContext& ctx, const Vector& beta) {
  const RowNuisance nu = evaluate_nuisance(data, ctx);
  const Vector c = dr_linear_term(data, nu);
  const Vector eta = data.x_target * beta;
  double acc = 0.0;
  for (Index i = 0; i < eta.size(); ++i) acc += link_antiderivative(ctx.g_link, eta[i]);
  return c.dot(beta) + acc / static_cast<double>(data.n_target());
}

SolveResult fit_preliminary_beta(const SubgroupData& data, const Vector& alpha, const Vector& gamma,
                                 double lambda, const SolverConfig& config,
                                 const Vector* source_weights, const Vector* target_weights) {
  DrLossContext ctx;
  ctx.subgroup = data.subgroup;
  ctx.g_link = data.g_link;
  ctx.b_link = data.b_link;
  ctx.alpha = alpha;
  ctx.gamma = gamma;
  const RowNuisance nu = evaluate_nuisance(data, ctx);

  Vector ws, wt;
  if (source_weights) {
    if (source_weights->size() != data.n_source()) {
      throw ValidationError("fit_preliminary_beta: source weight length mismatch");
    }
    ws = *source_weights / source_weights->mean();
  }
  if (target_weights) {
    if (target_weights->size() != data.n_target()) {
      throw ValidationError("fit_preliminary_beta: target weight length mismatch");
    }
    wt = *target_weights / target_weights->mean();
  }

  GlmLoss loss;
  loss.link = data.g_link;
  loss.weights = wt.size() > 0
                     ? (wt / static_cast<double>(data.n_target())).eval()
                     : Vector::Constant(data.n_target(), 1.0 / static_cast<double>(data.n_target()));
  loss.linear_term = dr_linear_term(data, nu, ws.size() > 0 ? &ws : nullptr,
                                    wt.size() > 0 ? &wt : nullptr);
  const PenaltySpec penalty = PenaltySpec::free_intercept(data.q(), lambda);
  return solve_penalized(data.x_target, loss, penalty, config);
}

SparseCoef fit_preliminary_beta(const DrLossContext& ctx, const LabeledPanel& panel,
                                const BasisMap& basis, double lambda) {
  const SubgroupData data = make_subgroup_data(panel, ctx.subgroup, basis, ctx.g_link, ctx.b_link);
  return fit_preliminary_beta(data, ctx.alpha, ctx.gamma, lambda).coef;
}

PrecisionRow nodewise_row(const Matrix& x_target, Link g_link, const Vector& beta_tilde, Index j,
                          double lambda_omega, const SolverConfig& config) {
  const Index n = x_target.rows();
  const Index q = x_target.cols();
  if (j < 0 || j >= q) throw ValidationError("nodewise_row: coordinate out of range");
  if (beta_tilde.size() != q) throw ValidationError("nodewise_row: beta length != q");

  Vector s(n);
  const Vector eta = x_target * beta_tilde;
  for (Index i = 0; i < n; ++i) {
    s[i] = link_derivative(g_link, eta[i]) / static_cast<double>(n);
  }

  // Regression of coordinate j on the others in the Sigma inner product,
  // realized as a weighted row-form lasso with coordinate j frozen.
  GlmLoss loss;
  loss.link = Link::kIdentity;
  loss.weights = s;
  loss.response = x_target.col(j);
  PenaltySpec penalty = PenaltySpec::unit(q, lambda_omega);
  penalty.factors[j] = std::numeric_limits<double>::infinity();
  const SolveResult fit = solve_penalized(x_target, loss, penalty, config);
  const Vector& kappa = fit.coef.values;

  const Vector sigma_col = x_target.transpose() * s.cwiseProduct(x_target.col(j));
  const double tau_sq = sigma_col[j] - kappa.dot(sigma_col);
  if (!(tau_sq > 1e-10)) {
    throw SingularityError("nodewise_row: residual scale tau^2 <= 1e-10 for coordinate " +
                           std::to_string(j));
  }

  PrecisionRow row;
  row.j = j;
  row.tau_sq = tau_sq;
  row.omega = -kappa / tau_sq;
  row.omega[j] = 1.0 / tau_sq;
  const double diag = row.omega.dot(sigma_col);
  if (std::abs(diag - 1.0) > 1e-8) {
    throw SingularityError("nodewise_row: diagonal normalization failed for coordinate " +
                           std::to_string(j));
  }
  return row;
}

PrecisionRow nodewise_row(const LabeledPanel& panel, Subgroup subgroup, const Vector& beta_tilde,
                          Index j, double lambda_omega) {
  const StratumView& view = panel.stratum(Cohort::kTarget, subgroup);
  if (view.empty()) throw ValidationError("nodewise_row: empty target stratum");
  const Matrix x_target = take_rows(panel.x(), view.indices);
  return nodewise_row(x_target, Link::kLogistic, beta_tilde, j, lambda_omega);
}

SparseCoef hard_threshold(const Vector& dense, double tau) {
  if (!(tau > 0.0)) throw ValidationError("hard_threshold: tau must be positive");
  Vector out = dense;
  for (Index j = 1; j < out.size(); ++j) {
    if (std::abs(out[j]) < tau) out[j] = 0.0;
  }
  return SparseCoef::from_dense(std::move(out));
}

double select_threshold(const Vector& dense, const Vector& reference,
                        const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("select_threshold: empty grid");
  if (dense.size() != reference.size()) throw ValidationError("select_threshold: length mismatch");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  double best_tau = sorted.front();
  double best = std::numeric_limits<double>::infinity();
  for (double tau : sorted) {
    const double loss = (hard_threshold(dense, tau).values - reference).squaredNorm();
    if (loss < best) {
      best = loss;
      best_tau = tau;
    }
  }
  return best_tau;
}

double stabilize_threshold(const Vector& dense, const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("stabilize_threshold: empty grid");
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  std::vector<IndexList> supports;
  supports.reserve(sorted.size());
  for (double tau : sorted) supports.push_back(hard_threshold(dense, tau).support);
  for (std::size_t k = 0; k + 1 < supports.size(); ++k) {
    if (supports[k] == supports[k + 1]) return sorted[k];
  }
  // No stabilization within the grid: the support is still shrinking at the
  // top, so noise dominates and the sparsest point is the safe choice.
  return sorted.back();
}

std::vector<double> threshold_grid(Index q, Index n_r, const std::vector<double>& multipliers) {
  if (n_r < 1) throw ValidationError("threshold_grid: n_r must be positive");
  const double rate = std::sqrt(std::log(static_cast<double>(std::max<Index>(q, 2))) /
                                static_cast<double>(n_r));
  std::vector<double> grid;
  grid.reserve(multipliers.size());
  for (double m : multipliers) grid.push_back(m * rate);
  return grid;
}

CvResult cv_preliminary_lambda(const SubgroupData& data, const Vector& alpha, const Vector& gamma,
                               const std::vector<double>& lambda_grid, Index folds,
                               std::uint64_t seed, const SolverConfig& config) {
  if (lambda_grid.empty()) throw ValidationError("cv_preliminary_lambda: empty lambda grid");
  if (folds < 2) throw ValidationError("cv_preliminary_lambda: folds must be >= 2");
  const Index ns = data.n_source();
  const Index nt = data.n_target();
  folds = std::min<Index>({folds, ns, nt});
  if (folds < 2) throw ValidationError("cv_preliminary_lambda: strata too small to fold");

  DrLossContext ctx;
  ctx.subgroup = data.subgroup;
  ctx.g_link = data.g_link;
  ctx.b_link = data.b_link;
  ctx.alpha = alpha;
  ctx.gamma = gamma;
  const RowNuisance nu = evaluate_nuisance(data, ctx);
  const Vector rs = nu.h_source.cwiseProduct(nu.m_source - data.y_source);

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

    auto linear_term = [&](const IndexList& s_rows, const IndexList& t_rows) {
      Vector c = Vector::Zero(data.q());
      for (Index i : s_rows) c += rs[i] * data.x_source.row(i).transpose();
      c /= static_cast<double>(s_rows.size());
      Vector ct = Vector::Zero(data.q());
      for (Index i : t_rows) ct += nu.m_target[i] * data.x_target.row(i).transpose();
      c -= ct / static_cast<double>(t_rows.size());
      return c;
    };

    const Matrix x_t_in = take_rows(data.x_target, in_t);
    GlmLoss loss;
    loss.link = data.g_link;
    loss.weights =
        Vector::Constant(x_t_in.rows(), 1.0 / static_cast<double>(x_t_in.rows()));
    loss.linear_term = linear_term(in_s, in_t);
    const Vector c_out = linear_term(out_s, out_t);

    SolverConfig fit_config = config;
    Vector warm = Vector::Zero(data.q());
    for (std::size_t pos : eval_order) {
      const PenaltySpec penalty = PenaltySpec::free_intercept(data.q(), lambda_grid[pos]);
      fit_config.init = warm;
      double heldout = std::numeric_limits<double>::infinity();
      try {
        const SolveResult fit = solve_penalized(x_t_in, loss, penalty, fit_config);
        warm = fit.coef.values;
        double acc = 0.0;
        for (Index i : out_t) {
          acc += link_antiderivative(data.g_link, data.x_target.row(i).dot(fit.coef.values));
        }
        heldout = c_out.dot(fit.coef.values) + acc / static_cast<double>(out_t.size());
      } catch (const DivergenceError&) {
        warm.setZero();
      }
      out.mean_losses[pos] += heldout;
      ++contributing[pos];
    }
  }

  if (out.skipped_folds == folds) throw ValidationError("cv_preliminary_lambda: every fold skipped");
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

DebiasBundle debias_subgroup(const LabeledPanel& panel, Subgroup subgroup, const BasisMap& basis,
                             const PipelineTuning& tuning) {
  const SubgroupData data = make_subgroup_data(panel, subgroup, basis, tuning.g_link, tuning.b_link);
  const Index q = data.q();
  const Index d = data.d();
  const double nt = static_cast<double>(data.n_target());

  DebiasBundle bundle;
  bundle.n_source = data.n_source();
  bundle.n_target = data.n_target();

  const double nuisance_rate =
      std::sqrt(std::log(static_cast<double>(std::max<Index>(d, 2))) / nt);
  const double beta_rate = std::sqrt(std::log(static_cast<double>(std::max<Index>(q, 2))) / nt);
  const std::vector<double> nuisance_grid = make_lambda_grid(
      tuning.cv_range_lo * nuisance_rate, tuning.cv_range_hi * nuisance_rate, tuning.cv_grid_size);
  const std::vector<double> beta_grid = make_lambda_grid(
      tuning.cv_range_lo * beta_rate, tuning.cv_range_hi * beta_rate, tuning.cv_grid_size);

  // Step 1: preliminary nuisance fits and the preliminary outcome fit.
  double lambda_alpha = tuning.lambda_alpha.value_or(0.0);
  if (!tuning.lambda_alpha) {
    lambda_alpha = cv_density_ratio(data, nuisance_grid, tuning.cv_folds,
                                    derive_seed(tuning.seed, 11), tuning.solver)
                       .lambda;
  }
  lambda_alpha *= tuning.nuisance_lambda_inflation;
  double lambda_gamma = tuning.lambda_gamma.value_or(0.0);
  if (!tuning.lambda_gamma) {
    lambda_gamma =
        cv_imputation(data, nuisance_grid, tuning.cv_folds, derive_seed(tuning.seed, 12),
                      tuning.solver)
            .lambda;
  }
  lambda_gamma *= tuning.nuisance_lambda_inflation;

  // Preliminary fits, escalating the nuisance penalties when a candidate
  // level leaves a fit unbounded (separable strata at small lambda).
  SolveResult alpha_fit, gamma_fit, beta_fit;
  double lambda_beta = tuning.lambda_beta.value_or(0.0);
  {
    bool done = false;
    std::string failure;
    for (int attempt = 0; attempt < 5 && !done; ++attempt) {
      try {
        alpha_fit = fit_density_ratio(data, lambda_alpha, tuning.solver);
        gamma_fit = fit_imputation(data, lambda_gamma, tuning.solver);
        if (!tuning.lambda_beta) {
          lambda_beta =
              cv_preliminary_lambda(data, alpha_fit.coef.values, gamma_fit.coef.values, beta_grid,
                                    tuning.cv_folds, derive_seed(tuning.seed, 13), tuning.solver)
                  .lambda;
        }
        beta_fit = fit_preliminary_beta(data, alpha_fit.coef.values, gamma_fit.coef.values,
                                        lambda_beta, tuning.solver);
        done = true;
      } catch (const DivergenceError& e) {
        failure = e.what();
        lambda_alpha *= 2.0;
        lambda_gamma *= 2.0;
        bundle.warnings.push_back("preliminary fits diverged (" + failure +
                                  "); nuisance penalties doubled");
      }
    }
    if (!done) {
      throw DivergenceError("debias pipeline: preliminary fits diverged after escalation: " +
                                failure,
                            -1);
    }
  }
  for (const auto& w : alpha_fit.warnings) bundle.warnings.push_back("density ratio: " + w);
  for (const auto& w : gamma_fit.warnings) bundle.warnings.push_back("imputation: " + w);
  for (const auto& w : beta_fit.warnings) bundle.warnings.push_back("preliminary fit: " + w);

  const double lambda_omega =
      tuning.lambda_nodewise.value_or(tuning.nodewise_scale * beta_rate);
  bundle.tuning = {lambda_alpha, lambda_gamma, lambda_beta, lambda_omega};
  bundle.nuisances.alpha = alpha_fit.coef;
  bundle.nuisances.gamma = gamma_fit.coef;
  bundle.nuisances.b_link = tuning.b_link;
  bundle.nuisances.subgroup = subgroup;
  bundle.beta_prelim = beta_fit.coef;
  const Vector& beta_tilde = bundle.beta_prelim.values;

  // Shared caches for the per-coordinate work.
  const CalibrationInputs calib =
      make_calibration_inputs(data, alpha_fit.coef.values, gamma_fit.coef.values);
  const Vector g_target = link_mean(data.g_link, (data.x_target * beta_tilde).eval());
  DrLossContext base_ctx;
  base_ctx.subgroup = subgroup;
  base_ctx.g_link = data.g_link;
  base_ctx.b_link = data.b_link;
  base_ctx.alpha = alpha_fit.coef.values;
  base_ctx.gamma = gamma_fit.coef.values;
  const Vector base_gradient = dr_gradient(data, base_ctx, beta_tilde);
  const Vector sigma_diag = [&] {
    Vector diag = Vector::Zero(q);
    const Vector eta = data.x_target * beta_tilde;
    for (Index i = 0; i < data.n_target(); ++i) {
      diag += link_derivative(data.g_link, eta[i]) *
              data.x_target.row(i).cwiseAbs2().transpose();
    }
    return (diag / nt).eval();
  }();

  bundle.beta_deb.resize(q);
  bundle.precision_rows.assign(static_cast<std::size_t>(q), PrecisionRow{});
  bundle.corrections.assign(static_cast<std::size_t>(q), CalibratedCorrection{});
  std::vector<std::vector<std::string>> slot_warnings(static_cast<std::size_t>(q));

  parallel_for(q, tuning.threads, [&](Index j) {
    auto& warn = slot_warnings[static_cast<std::size_t>(j)];
    PrecisionRow row;
    bool have_row = true;
    try {
      row = nodewise_row(data.x_target, data.g_link, beta_tilde, j, lambda_omega, tuning.solver);
    } catch (const std::exception& e) {
      warn.push_back("nodewise row " + std::to_string(j) + ": " + e.what());
      row.j = j;
      row.tau_sq = sigma_diag[j];
      row.omega = Vector::Zero(q);
      if (sigma_diag[j] > 1e-10) {
        row.omega[j] = 1.0 / sigma_diag[j];
      } else {
        have_row = false;
      }
    }
    bundle.precision_rows[static_cast<std::size_t>(j)] = row;
    if (!have_row) {
      bundle.beta_deb[j] = beta_tilde[j];
      CalibratedCorrection none;
      none.j = j;
      none.failed = true;
      bundle.corrections[static_cast<std::size_t>(j)] = none;
      warn.push_back("coordinate " + std::to_string(j) + ": kept preliminary value");
      return;
    }

    CalibratedCorrection corr;
    bool calibrated = true;
    try {
      corr = calibrate_coordinate(calib, row.omega, j, lambda_alpha, lambda_gamma, tuning.solver);
      if (corr.failed) calibrated = false;
    } catch (const std::exception& e) {
      warn.push_back("calibration j=" + std::to_string(j) + ": " + e.what());
      calibrated = false;
      corr.j = j;
      corr.failed = true;
    }
    bundle.corrections[static_cast<std::size_t>(j)] = corr;
    for (const auto& w : corr.warnings) warn.push_back(w);

    double projection = 0.0;
    bool have_projection = false;
    if (calibrated) {
      try {
        const Vector w_s = data.x_source * row.omega;
        const Vector w_t = data.x_target * row.omega;
        Vector da_pos = Vector::Zero(data.n_source());
        Vector da_neg = Vector::Zero(data.n_source());
        Vector dg_pos_s = Vector::Zero(data.n_source());
        Vector dg_neg_s = Vector::Zero(data.n_source());
        Vector dg_pos_t = Vector::Zero(data.n_target());
        Vector dg_neg_t = Vector::Zero(data.n_target());
        add_sparse_product(data.phi_source, corr.xi_pos, da_pos);
        add_sparse_product(data.phi_source, corr.xi_neg, da_neg);
        add_sparse_product(data.phi_source, corr.zeta_pos, dg_pos_s);
        add_sparse_product(data.phi_source, corr.zeta_neg, dg_neg_s);
        add_sparse_product(data.phi_target, corr.zeta_pos, dg_pos_t);
        add_sparse_product(data.phi_target, corr.zeta_neg, dg_neg_t);

        double acc_s = 0.0;
        for (Index i = 0; i < data.n_source(); ++i) {
          const bool pos = w_s[i] >= 0.0;
          const double eta_a = calib.eta_alpha_source[i] + (pos ? da_pos[i] : da_neg[i]);
          if (eta_a > 700.0) throw std::overflow_error("calibrated density-ratio weight overflow");
          const double h = std::exp(eta_a);
          const double m =
              link_mean(data.b_link, calib.eta_gamma_source[i] + (pos ? dg_pos_s[i] : dg_neg_s[i]));
          acc_s += w_s[i] * h * (m - data.y_source[i]);
        }
        double acc_t = 0.0;
        for (Index i = 0; i < data.n_target(); ++i) {
          const bool pos = w_t[i] >= 0.0;
          const double m =
              link_mean(data.b_link, calib.eta_gamma_target[i] + (pos ? dg_pos_t[i] : dg_neg_t[i]));
          acc_t += w_t[i] * (g_target[i] - m);
        }
        projection = acc_s / static_cast<double>(data.n_source()) +
                     acc_t / static_cast<double>(data.n_target());
        have_projection = std::isfinite(projection);
      } catch (const std::exception& e) {
        warn.push_back("calibrated gradient j=" + std::to_string(j) + ": " + e.what());
        have_projection = false;
      }
    }
    if (!have_projection) {
      // Fall back to the debiased value under the preliminary nuisances.
      projection = row.omega.dot(base_gradient);
      if (calibrated) {
        warn.push_back("coordinate " + std::to_string(j) +
                       ": fell back to uncalibrated debiased value");
      }
    }
    bundle.beta_deb[j] = beta_tilde[j] - projection;
  });

  for (auto& ws : slot_warnings) {
    for (auto& w : ws) bundle.warnings.push_back(std::move(w));
  }
  return bundle;
}

}  // namespace makeup
