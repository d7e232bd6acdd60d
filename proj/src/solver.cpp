// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/solver.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

namespace makeup {

namespace {

double soft_threshold(double u, double t) {
  if (u > t) return u - t;
  if (u < -t) return u + t;
  return 0.0;
}

// Largest per-coordinate move accepted inside one quadratic-model sweep.
// The exponential link gets a tight cap: its curvature changes too fast for
// long Newton steps to be trustworthy.
double step_cap(Link link) { return link == Link::kExponential ? 2.0 : 100.0; }

struct ProblemView {
  const Matrix& x;
  const GlmLoss& loss;
  Index n = 0;
  Index d = 0;
  bool has_y = false;
  bool has_offset = false;
  bool has_c = false;
};

ProblemView make_view(const Matrix& design, const GlmLoss& loss) {
  ProblemView v{design, loss};
  v.n = design.rows();
  v.d = design.cols();
  v.has_y = loss.response.size() > 0;
  v.has_offset = loss.offset.size() > 0;
  v.has_c = loss.linear_term.size() > 0;
  if (loss.weights.size() != v.n) {
    throw ValidationError("solver: weight count " + std::to_string(loss.weights.size()) +
                          " does not match design rows " + std::to_string(v.n));
  }
  if (v.has_y && loss.response.size() != v.n) throw ValidationError("solver: response length mismatch");
  if (v.has_offset && loss.offset.size() != v.n) throw ValidationError("solver: offset length mismatch");
  if (v.has_c && loss.linear_term.size() != v.d) throw ValidationError("solver: linear term length mismatch");
  if (!design.allFinite()) throw ValidationError("solver: non-finite design entries");
  if (!loss.weights.allFinite() || loss.weights.minCoeff() < 0.0) {
    throw ValidationError("solver: weights must be finite and non-negative");
  }
  return v;
}

void compute_eta(const ProblemView& v, const Vector& beta, Vector& eta) {
  if (v.has_offset) {
    eta = v.loss.offset;
  } else {
    eta.setZero(v.n);
  }
  for (Index j = 0; j < v.d; ++j) {
    if (beta[j] != 0.0) eta += beta[j] * v.x.col(j);
  }
}

double smooth_value(const ProblemView& v, const Vector& beta, const Vector& eta) {
  double acc = 0.0;
  for (Index i = 0; i < v.n; ++i) {
    const double w = v.loss.weights[i];
    if (w == 0.0) continue;
    double term = link_antiderivative(v.loss.link, eta[i]);
    if (v.has_y) term -= v.loss.response[i] * eta[i];
    acc += w * term;
  }
  if (v.has_c) acc += v.loss.linear_term.dot(beta);
  return acc;
}

double penalty_value(const Vector& beta, const PenaltySpec& penalty) {
  double acc = 0.0;
  for (Index j = 0; j < beta.size(); ++j) {
    const double f = penalty.factors[j];
    if (f > 0.0 && std::isfinite(f)) acc += f * std::abs(beta[j]);
  }
  return penalty.lambda * acc;
}

void compute_gradient(const ProblemView& v, const Vector& eta, Vector& resid, Vector& grad) {
  resid.resize(v.n);
  for (Index i = 0; i < v.n; ++i) {
    const double w = v.loss.weights[i];
    if (w == 0.0) {
      resid[i] = 0.0;
      continue;
    }
    double r = link_mean(v.loss.link, eta[i]);
    if (v.has_y) r -= v.loss.response[i];
    resid[i] = w * r;
  }
  grad.noalias() = v.x.transpose() * resid;
  if (v.has_c) grad += v.loss.linear_term;
}

// Backtracking proximal gradient step; returns false when no descent step
// exists at any feasible curvature (a stall).
bool prox_gradient_step(const ProblemView& v, const PenaltySpec& penalty, Vector& beta, Vector& eta,
                        const Vector& grad, double smooth0, double& curvature) {
  const Index d = v.d;
  Vector cand(d), diff(d), eta_c;
  double L = std::max(curvature, 1e-6);
  for (int attempt = 0; attempt < 80; ++attempt) {
    double move = 0.0;
    for (Index j = 0; j < d; ++j) {
      const double f = penalty.factors[j];
      if (!std::isfinite(f)) {
        cand[j] = beta[j];
        diff[j] = 0.0;
        continue;
      }
      cand[j] = soft_threshold(beta[j] - grad[j] / L, penalty.lambda * f / L);
      diff[j] = cand[j] - beta[j];
      move = std::max(move, std::abs(diff[j]));
    }
    if (move == 0.0) return false;
    compute_eta(v, cand, eta_c);
    const double smooth_c = smooth_value(v, cand, eta_c);
    const double model = smooth0 + grad.dot(diff) + 0.5 * L * diff.squaredNorm();
    if (std::isfinite(smooth_c) && smooth_c <= model + 1e-12 * (1.0 + std::abs(model))) {
      beta = cand;
      eta.swap(eta_c);
      curvature = std::max(L * 0.5, 1e-6);
      return true;
    }
    L *= 2.0;
  }
  return false;
}

void check_divergence(const Vector& beta, double bound) {
  Index worst = 0;
  const double m = beta.cwiseAbs().maxCoeff(&worst);
  if (m > bound || !beta.allFinite()) {
    throw DivergenceError("solver: coefficient " + std::to_string(worst) +
                          " exceeded magnitude bound " + std::to_string(bound) +
                          "; objective appears unbounded along that direction",
                          worst);
  }
}

}  // namespace

double glm_objective(const Matrix& design, const GlmLoss& loss, const Vector& beta) {
  const ProblemView v = make_view(design, loss);
  Vector eta;
  compute_eta(v, beta, eta);
  return smooth_value(v, beta, eta);
}

Vector glm_gradient(const Matrix& design, const GlmLoss& loss, const Vector& beta) {
  const ProblemView v = make_view(design, loss);
  Vector eta, resid, grad;
  compute_eta(v, beta, eta);
  compute_gradient(v, eta, resid, grad);
  return grad;
}

double kkt_residual(const Vector& gradient, const Vector& beta, const PenaltySpec& penalty) {
  double worst = 0.0;
  for (Index j = 0; j < beta.size(); ++j) {
    const double f = penalty.factors[j];
    if (!std::isfinite(f)) continue;
    double r;
    if (f == 0.0) {
      r = std::abs(gradient[j]);
    } else if (beta[j] != 0.0) {
      r = std::abs(gradient[j] + penalty.lambda * f * (beta[j] > 0.0 ? 1.0 : -1.0));
    } else {
      r = std::max(0.0, std::abs(gradient[j]) - penalty.lambda * f);
    }
    worst = std::max(worst, r);
  }
  return worst;
}

SolveResult solve_penalized(const Matrix& design, const GlmLoss& loss, const PenaltySpec& penalty,
                            const SolverConfig& config) {
  const ProblemView v = make_view(design, loss);
  if (penalty.factors.size() != v.d) throw ValidationError("solver: penalty factor length mismatch");
  if (!(penalty.lambda >= 0.0) || !std::isfinite(penalty.lambda)) {
    throw ValidationError("solver: lambda must be finite and non-negative");
  }
  if (config.tol <= 0.0 || config.max_iter < 1) {
    throw ValidationError("solver: tol must be positive and max_iter >= 1");
  }

  Vector beta;
  if (config.init.size() > 0) {
    if (config.init.size() != v.d) throw ValidationError("solver: init length mismatch");
    beta = config.init;
  } else {
    beta = Vector::Zero(v.d);
  }

  const double kkt_tol =
      config.kkt_tol > 0.0 ? config.kkt_tol : 1e-7 * std::max(1.0, loss.weights.sum());

  // A logistic response constant at its boundary value never attains its
  // optimum along an effectively unpenalized coordinate.
  if (v.loss.link == Link::kLogistic && v.has_y) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Index i = 0; i < v.n; ++i) {
      if (v.loss.weights[i] <= 0.0) continue;
      lo = std::min(lo, v.loss.response[i]);
      hi = std::max(hi, v.loss.response[i]);
    }
    if (lo == hi && (lo == 0.0 || lo == 1.0)) {
      for (Index j = 0; j < v.d; ++j) {
        const double f = penalty.factors[j];
        if (!std::isfinite(f) || penalty.lambda * f > 0.0) continue;
        bool live = false;
        for (Index i = 0; i < v.n && !live; ++i) {
          live = v.loss.weights[i] > 0.0 && v.x(i, j) != 0.0;
        }
        if (live) {
          throw DivergenceError("solver: constant boundary outcome drives coordinate " +
                                    std::to_string(j) + " to infinity",
                                j);
        }
      }
    }
  }

  SolveResult result;
  Vector eta(v.n), resid(v.n), grad(v.d), s(v.n), z(v.n), delta(v.d), h(v.d);
  Vector beta_cand, eta_cand;
  IndexList working;
  working.reserve(static_cast<std::size_t>(v.d));
  double prox_curvature = 1.0;
  [[maybe_unused]] double previous_objective = std::numeric_limits<double>::infinity();

  Index outer_cap = config.max_iter;
  for (Index outer = 0; outer < outer_cap; ++outer) {
    compute_eta(v, beta, eta);
    compute_gradient(v, eta, resid, grad);
    result.kkt_residual = kkt_residual(grad, beta, penalty);

    const double smooth0 = smooth_value(v, beta, eta);
    const double objective = smooth0 + penalty_value(beta, penalty);
    if (!std::isfinite(objective)) check_divergence(beta, config.divergence_bound / 2.0);
    if (config.record_objective) result.objective_trace.push_back(objective);
    assert(objective <= previous_objective + 1e-9 * (1.0 + std::abs(previous_objective)));
    previous_objective = objective;

    if (result.kkt_residual <= kkt_tol) {
      result.converged = true;
      break;
    }
    if (result.iterations >= config.max_iter) break;

    for (Index i = 0; i < v.n; ++i) {
      s[i] = v.loss.weights[i] == 0.0 ? 0.0 : v.loss.weights[i] * link_derivative(v.loss.link, eta[i]);
    }

    working.clear();
    for (Index j = 0; j < v.d; ++j) {
      const double f = penalty.factors[j];
      if (!std::isfinite(f)) continue;
      if (beta[j] != 0.0 || f == 0.0 || std::abs(grad[j]) >= 0.9 * penalty.lambda * f) {
        working.push_back(j);
        h[j] = std::max(s.dot(v.x.col(j).cwiseAbs2()), 1e-12);
      }
    }

    // Cyclic coordinate descent on the quadratic model at beta.
    delta.setZero();
    z.setZero();
    bool moved = false;
    bool runaway = false;
    const double cap = step_cap(v.loss.link);
    // The identity link's quadratic model is exact, so its subproblem is
    // worth solving tightly; for curved links a few sweeps per Newton step
    // suffice.
    const Index inner_cap = v.loss.link == Link::kIdentity ? 100 : 8;
    for (Index sweep = 0; sweep < inner_cap && !runaway; ++sweep) {
      double max_step = 0.0;
      for (Index j : working) {
        const double gj = grad[j] + v.x.col(j).dot(s.cwiseProduct(z));
        const double b = beta[j] + delta[j];
        double nb = soft_threshold(b - gj / h[j], penalty.lambda * penalty.factors[j] / h[j]);
        if (nb - b > cap) nb = b + cap;
        if (b - nb > cap) nb = b - cap;
        const double step = nb - b;
        if (step != 0.0) {
          delta[j] += step;
          z += step * v.x.col(j);
          max_step = std::max(max_step, std::abs(step));
          moved = true;
          if (std::abs(nb) > 2.0 * config.divergence_bound) runaway = true;
        }
      }
      ++result.iterations;
      if (max_step <= config.tol || result.iterations >= config.max_iter) break;
    }

    bool stepped = false;
    if (moved) {
      const double descent = grad.dot(delta) +
                             penalty_value(beta + delta, penalty) - penalty_value(beta, penalty);
      double t = 1.0;
      for (int ls = 0; ls < 40; ++ls) {
        beta_cand = beta + t * delta;
        eta_cand = eta + t * z;
        const double cand_obj =
            smooth_value(v, beta_cand, eta_cand) + penalty_value(beta_cand, penalty);
        if (std::isfinite(cand_obj) &&
            cand_obj <= objective + 1e-4 * t * descent + 1e-14 * (1.0 + std::abs(objective))) {
          if (t == 1.0) {
            // Full step: coordinates the sweep soft-thresholded to zero stay
            // exactly zero.
            for (Index j : working) beta[j] += delta[j];
            for (Index j : working) {
              if (std::abs(beta[j]) < 1e-300) beta[j] = 0.0;
            }
          } else {
            beta = beta_cand;
          }
          stepped = true;
          break;
        }
        t *= 0.5;
      }
    }
    if (!stepped) {
      if (!prox_gradient_step(v, penalty, beta, eta, grad, smooth0, prox_curvature)) {
        result.warnings.push_back("solver stalled before reaching tolerance");
        break;
      }
      ++result.iterations;
    }
    check_divergence(beta, config.divergence_bound);
  }

  if (!result.converged) {
    compute_eta(v, beta, eta);
    compute_gradient(v, eta, resid, grad);
    result.kkt_residual = kkt_residual(grad, beta, penalty);
    result.converged = result.kkt_residual <= kkt_tol;
    if (!result.converged) {
      result.warnings.push_back("solver did not reach KKT tolerance; residual " +
                                std::to_string(result.kkt_residual));
    }
  }

  if (v.loss.link == Link::kExponential) {
    compute_eta(v, beta, eta);
    for (Index i = 0; i < v.n; ++i) {
      if (v.loss.weights[i] > 0.0 && std::abs(eta[i]) >= kExpClip - 1e-9) {
        result.clip_active = true;
        result.warnings.push_back("exponential link: linear predictor at clip boundary (row " +
                                  std::to_string(i) + ")");
        break;
      }
    }
  }

  result.coef = SparseCoef::from_dense(beta);
  return result;
}

double lambda_max(const Matrix& design, const GlmLoss& loss, const Vector& factors,
                  const SolverConfig& config) {
  const Index d = design.cols();
  if (factors.size() != d) throw ValidationError("lambda_max: factor length mismatch");
  PenaltySpec frozen;
  frozen.lambda = 0.0;
  frozen.factors.resize(d);
  for (Index j = 0; j < d; ++j) {
    frozen.factors[j] = factors[j] == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  SolverConfig null_config = config;
  null_config.init.resize(0);
  const SolveResult base = solve_penalized(design, loss, frozen, null_config);
  const Vector grad = glm_gradient(design, loss, base.coef.values);
  double lam = 0.0;
  for (Index j = 0; j < d; ++j) {
    if (factors[j] > 0.0 && std::isfinite(factors[j])) {
      lam = std::max(lam, std::abs(grad[j]) / factors[j]);
    }
  }
  return lam;
}

std::vector<double> make_lambda_grid(double lo, double hi, Index k) {
  if (!(lo > 0.0) || !(hi >= lo) || k < 1) throw ValidationError("make_lambda_grid: bad range");
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(k));
  if (k == 1) {
    grid.push_back(hi);
    return grid;
  }
  const double ratio = std::log(hi / lo) / static_cast<double>(k - 1);
  for (Index i = 0; i < k; ++i) grid.push_back(lo * std::exp(ratio * static_cast<double>(i)));
  grid.back() = hi;
  return grid;
}

namespace {

// Deterministic Fisher-Yates shuffle (independent of standard library
// distribution internals).
void seeded_shuffle(IndexList& v, std::uint64_t seed) {
  std::uint64_t state = seed;
  for (Index i = static_cast<Index>(v.size()) - 1; i > 0; --i) {
    state = splitmix64(state);
    const Index j = static_cast<Index>(state % static_cast<std::uint64_t>(i + 1));
    std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
  }
}

}  // namespace

CvResult cross_validate(const Matrix& design, const GlmLoss& loss, const Vector& factors,
                        const std::vector<double>& lambda_grid, Index folds, std::uint64_t seed,
                        const SolverConfig& config) {
  const Index n = design.rows();
  const Index d = design.cols();
  if (lambda_grid.empty()) throw ValidationError("cross_validate: empty lambda grid");
  if (folds < 2) throw ValidationError("cross_validate: folds must be >= 2");
  if (loss.linear_term.size() > 0) {
    throw ValidationError("cross_validate: objective with a linear term is not row-decomposable");
  }
  folds = std::min(folds, n);

  IndexList order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  seeded_shuffle(order, seed);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (Index pos = 0; pos < n; ++pos) {
    fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] =
        static_cast<int>(pos % folds);
  }

  // Evaluate the grid from the largest penalty down, warm-starting each fit.
  std::vector<std::size_t> eval_order(lambda_grid.size());
  for (std::size_t i = 0; i < eval_order.size(); ++i) eval_order[i] = i;
  std::sort(eval_order.begin(), eval_order.end(),
            [&](std::size_t a, std::size_t b) { return lambda_grid[a] > lambda_grid[b]; });

  CvResult out;
  out.mean_losses.assign(lambda_grid.size(), 0.0);
  std::vector<Index> contributing(lambda_grid.size(), 0);

  for (Index f = 0; f < folds; ++f) {
    IndexList train, test;
    for (Index i = 0; i < n; ++i) {
      (fold_of[static_cast<std::size_t>(i)] == f ? test : train).push_back(i);
    }
    if (train.empty() || test.empty()) {
      ++out.skipped_folds;
      out.warnings.push_back("fold " + std::to_string(f) + " skipped: empty split");
      continue;
    }
    if (loss.link == Link::kLogistic && loss.response.size() > 0) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (Index i : train) {
        lo = std::min(lo, loss.response[i]);
        hi = std::max(hi, loss.response[i]);
      }
      if (lo == hi) {
        ++out.skipped_folds;
        out.warnings.push_back("fold " + std::to_string(f) +
                               " skipped: single outcome class in training split");
        continue;
      }
    }

    const Index nt = static_cast<Index>(train.size());
    Matrix x_train(nt, d);
    GlmLoss train_loss;
    train_loss.link = loss.link;
    train_loss.weights.resize(nt);
    if (loss.response.size() > 0) train_loss.response.resize(nt);
    if (loss.offset.size() > 0) train_loss.offset.resize(nt);
    for (Index k = 0; k < nt; ++k) {
      const Index i = train[static_cast<std::size_t>(k)];
      x_train.row(k) = design.row(i);
      train_loss.weights[k] = loss.weights[i];
      if (loss.response.size() > 0) train_loss.response[k] = loss.response[i];
      if (loss.offset.size() > 0) train_loss.offset[k] = loss.offset[i];
    }

    SolverConfig fit_config = config;
    Vector warm = Vector::Zero(d);
    for (std::size_t pos : eval_order) {
      PenaltySpec pen{lambda_grid[pos], factors};
      fit_config.init = warm;
      double heldout = std::numeric_limits<double>::infinity();
      try {
        const SolveResult fit = solve_penalized(x_train, train_loss, pen, fit_config);
        warm = fit.coef.values;
        double acc = 0.0, wsum = 0.0;
        for (Index i : test) {
          const double w = loss.weights[i];
          if (w == 0.0) continue;
          double eta = design.row(i).dot(fit.coef.values);
          if (loss.offset.size() > 0) eta += loss.offset[i];
          double term = link_antiderivative(loss.link, eta);
          if (loss.response.size() > 0) term -= loss.response[i] * eta;
          acc += w * term;
          wsum += w;
        }
        if (wsum > 0.0) heldout = acc / wsum;
      } catch (const DivergenceError&) {
        warm.setZero();
      }
      out.mean_losses[pos] += heldout;
      ++contributing[pos];
    }
  }

  const Index used = folds - out.skipped_folds;
  if (used == 0) throw ValidationError("cross_validate: every fold was skipped");
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

}  // namespace makeup
