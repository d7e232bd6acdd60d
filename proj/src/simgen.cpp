// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/simgen.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>

namespace makeup {

namespace {

constexpr double kTruncLo = -1.5;
constexpr double kTruncHi = 1.5;
constexpr Index kOracleBlock = 100000;
constexpr Index kWarmRows = 200000;
// ~1e5 consecutive rejected candidates signals an acceptance rate below
// roughly 1e-4 for the remaining strata.
constexpr Index kMaxConsecutiveRejects = 100000;

void validate_law(const SimConfig& config) {
  Index min_q = 4;
  Index min_p = 0;
  switch (config.setting) {
    case SimSetting::kI: min_p = 3; break;
    case SimSetting::kII: min_p = 1; break;
    case SimSetting::kIII: min_p = 2; break;
  }
  if (config.q < min_q || config.p < min_p) {
    throw ValidationError("simgen: setting requires q >= " + std::to_string(min_q) +
                          " and p >= " + std::to_string(min_p));
  }
  if (config.t < 0 || config.t > config.q + config.p - 1) {
    throw ValidationError("simgen: t must lie in [0, q+p-1]");
  }
}

void validate(const SimConfig& config) {
  validate_law(config);
  if (config.n_s1 < 0 || config.n_s0 < 0 || config.n_t1 < 0 || config.n_t0 < 0 ||
      config.n_s1 + config.n_s0 + config.n_t1 + config.n_t0 < 1) {
    throw ValidationError("simgen: stratum sizes must be non-negative with at least one row");
  }
}

double psi1(const Vector& z) {
  return -1.5 * z[0] + 1.2 * (std::abs(z[1]) + 0.9 * z[1]) + 1.2 * (std::abs(z[2]) + 0.9 * z[2]) +
         1.2 * z[3];
}

double psi2(const Vector& z, Index q) {
  return -0.2 * z[0] - 0.8 * z[1] * z[q] - 0.5 * z[2] * z[q + 1];
}

Vector outcome_base(const SimConfig& config) {
  const Index q = config.q, p = config.p;
  Vector gamma = Vector::Zero(q + p);
  switch (config.setting) {
    case SimSetting::kI:
      gamma[1] = gamma[2] = gamma[3] = 1.2;
      gamma[q] = 1.0;
      gamma[q + 1] = 0.8;
      gamma[q + 2] = 0.5;
      break;
    case SimSetting::kIII:
      gamma[1] = 0.7;
      gamma[2] = 0.9;
      gamma[3] = 0.8;
      gamma[q] = 0.75;
      gamma[q + 1] = -0.75;
      break;
    case SimSetting::kII:
      throw ValidationError("simgen: setting II has no linear outcome coefficients");
  }
  return gamma;
}

Vector source_coefficients(const SimConfig& config) {
  const Index q = config.q, p = config.p;
  Vector alpha = Vector::Zero(q + p);
  switch (config.setting) {
    case SimSetting::kI:
      alpha[1] = alpha[2] = alpha[3] = 0.2;
      alpha[q] = alpha[q + 1] = alpha[q + 2] = 0.5;
      break;
    case SimSetting::kII:
      alpha[1] = alpha[2] = -1.0;
      alpha[q] = 0.5;
      break;
    case SimSetting::kIII:
      throw ValidationError("simgen: setting III has no linear source coefficients");
  }
  return alpha;
}

}  // namespace

Vector heterogeneity_shift(const SimConfig& config) {
  Vector delta = Vector::Zero(config.q + config.p);
  for (Index j = 1; j <= config.t; ++j) delta[j] = 0.2;
  return delta;
}

double success_probability(const SimConfig& config, const Vector& z, Subgroup r) {
  const double maj = r == Subgroup::kMajority ? 1.0 : 0.0;
  switch (config.setting) {
    case SimSetting::kI:
    case SimSetting::kIII: {
      const Vector gamma = outcome_base(config) + maj * heterogeneity_shift(config);
      return expit(z.dot(gamma));
    }
    case SimSetting::kII: {
      const double shift = 0.2 * z[3] + 0.5 * z[config.q] + z.dot(heterogeneity_shift(config));
      return expit(psi1(z) - maj * shift);
    }
  }
  return 0.5;
}

double source_probability(const SimConfig& config, const Vector& z, Subgroup /*r*/) {
  switch (config.setting) {
    case SimSetting::kI:
    case SimSetting::kII:
      return expit(z.dot(source_coefficients(config)));
    case SimSetting::kIII:
      return expit(psi2(z, config.q));
  }
  return 0.5;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * (1.0 / std::sqrt(2.0))); }

// Rational approximation (relative error ~1.2e-9); a dedicated sampler
// primitive rather than a special-function library.
double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("normal_quantile: p must lie in (0, 1)");
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  if (p < p_low) {
    const double u = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
           ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double u = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * u + c[1]) * u + c[2]) * u + c[3]) * u + c[4]) * u + c[5]) /
           ((((d[0] * u + d[1]) * u + d[2]) * u + d[3]) * u + 1.0);
  }
  const double s = p - 0.5;
  const double r = s * s;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * s /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

std::uint64_t Rng::next() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::truncated_normal(double lo, double hi) {
  const double cdf_lo = normal_cdf(lo);
  const double cdf_hi = normal_cdf(hi);
  const double u = cdf_lo + uniform() * (cdf_hi - cdf_lo);
  return normal_quantile(u);
}

namespace {

Vector draw_z(Rng& rng, Index dim) {
  Vector z(dim);
  z[0] = 1.0;
  for (Index j = 1; j < dim; ++j) z[j] = rng.truncated_normal(kTruncLo, kTruncHi);
  return z;
}

}  // namespace

LabeledPanel generate_panel(const SimConfig& config, GenerationMeta* meta) {
  validate(config);
  const Index dim = config.q + config.p;
  Index quota[2][2];  // [cohort source=1][subgroup majority=1]
  quota[1][1] = config.n_s1;
  quota[1][0] = config.n_s0;
  quota[0][1] = config.n_t1;
  quota[0][0] = config.n_t0;
  Index filled[2][2] = {{0, 0}, {0, 0}};
  const Index total = config.n_s1 + config.n_s0 + config.n_t1 + config.n_t0;

  std::vector<Observation> rows;
  rows.reserve(static_cast<std::size_t>(total));
  Rng rng(config.seed);
  Index candidates = 0;
  Index consecutive_rejects = 0;
  Index accepted = 0;

  while (accepted < total) {
    const Subgroup r = (candidates % 2 == 0) ? Subgroup::kMajority : Subgroup::kMinority;
    ++candidates;
    const Vector z = draw_z(rng, dim);
    const bool is_source = rng.uniform() < source_probability(config, z, r);
    const double y = rng.uniform() < success_probability(config, z, r) ? 1.0 : 0.0;

    const int si = is_source ? 1 : 0;
    const int ri = r == Subgroup::kMajority ? 1 : 0;
    if (filled[si][ri] < quota[si][ri]) {
      ++filled[si][ri];
      ++accepted;
      consecutive_rejects = 0;
      Observation obs;
      obs.s = is_source ? Cohort::kSource : Cohort::kTarget;
      obs.r = r;
      if (is_source) obs.y = y;  // target outcomes are stripped
      obs.x = z.head(config.q);
      obs.w = z.tail(config.p);
      rows.push_back(std::move(obs));
    } else if (++consecutive_rejects >= kMaxConsecutiveRejects) {
      std::string unfilled;
      for (int s = 0; s < 2; ++s) {
        for (int g = 0; g < 2; ++g) {
          if (filled[s][g] < quota[s][g]) {
            if (!unfilled.empty()) unfilled += ", ";
            unfilled += std::string(s ? "source" : "target") + "/" +
                        (g ? "majority" : "minority");
          }
        }
      }
      throw ValidationError(
          "generate_panel: stratum sizes infeasible (acceptance rate below 1e-4) for strata: " +
          unfilled);
    }
  }

  if (meta) {
    meta->candidates = candidates;
    meta->acceptance_rate = static_cast<double>(total) / static_cast<double>(candidates);
  }
  return build_panel(rows);
}

MomentSolve solve_moment_equation(const Matrix& x, const Vector& y, Link link, double tol,
                                  Index max_iter) {
  const Index n = x.rows();
  const Index q = x.cols();
  if (y.size() != n) throw ValidationError("solve_moment_equation: response length mismatch");

  MomentSolve out;
  out.beta = Vector::Zero(q);
  Vector mu(n), moment(q);
  auto compute_moment = [&](const Vector& beta, Vector& m) {
    const Vector eta = x * beta;
    for (Index i = 0; i < n; ++i) mu[i] = link_mean(link, eta[i]);
    m.noalias() = x.transpose() * (y - mu) / static_cast<double>(n);
  };

  compute_moment(out.beta, moment);
  for (Index iter = 0; iter < max_iter; ++iter) {
    out.iterations = iter;
    if (moment.cwiseAbs().maxCoeff() <= tol) {
      out.converged = true;
      break;
    }
    const Vector eta = x * out.beta;
    Matrix hess = Matrix::Zero(q, q);
    for (Index i = 0; i < n; ++i) {
      hess.selfadjointView<Eigen::Lower>().rankUpdate(x.row(i).transpose(),
                                                      link_derivative(link, eta[i]));
    }
    hess /= static_cast<double>(n);
    hess.triangularView<Eigen::Upper>() = hess.transpose();
    hess.diagonal().array() += 1e-12;
    const Vector step = hess.ldlt().solve(moment);

    const double base_norm = moment.norm();
    double t = 1.0;
    Vector trial_moment(q);
    for (int half = 0; half < 30; ++half) {
      compute_moment(out.beta + t * step, trial_moment);
      if (trial_moment.norm() <= (1.0 - 1e-4 * t) * base_norm) break;
      t *= 0.5;
    }
    out.beta += t * step;
    moment = trial_moment;
  }
  if (!out.converged && moment.cwiseAbs().maxCoeff() <= tol) out.converged = true;

  // Sandwich standard errors.
  const Vector eta = x * out.beta;
  Matrix hess = Matrix::Zero(q, q);
  Matrix meat = Matrix::Zero(q, q);
  for (Index i = 0; i < n; ++i) {
    const double resid = y[i] - link_mean(link, eta[i]);
    hess.selfadjointView<Eigen::Lower>().rankUpdate(x.row(i).transpose(),
                                                    link_derivative(link, eta[i]));
    meat.selfadjointView<Eigen::Lower>().rankUpdate(x.row(i).transpose(), resid * resid);
  }
  hess /= static_cast<double>(n);
  meat /= static_cast<double>(n);
  hess.triangularView<Eigen::Upper>() = hess.transpose();
  meat.triangularView<Eigen::Upper>() = meat.transpose();
  hess.diagonal().array() += 1e-12;
  const Matrix hinv = hess.ldlt().solve(Matrix::Identity(q, q));
  const Matrix cov = hinv * meat * hinv.transpose() / static_cast<double>(n);
  out.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

namespace {

// Deterministic stream of target-stratum rows with outcomes for one
// subgroup; block b regenerates identically from derive_seed(seed, b).
class TargetOracle {
 public:
  TargetOracle(const SimConfig& config, Subgroup r, std::uint64_t seed)
      : config_(config), r_(r), seed_(seed) {}

  void fill_block(Index block, Index rows, Matrix& x, Vector& y) const {
    x.resize(rows, config_.q);
    y.resize(rows);
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(block)));
    const Index dim = config_.q + config_.p;
    for (Index k = 0; k < rows; ++k) {
      for (Index attempt = 0;; ++attempt) {
        if (attempt >= 1000000) {
          throw ValidationError("truth oracle: target stratum has vanishing probability");
        }
        const Vector z = draw_z(rng, dim);
        if (rng.uniform() < source_probability(config_, z, r_)) continue;  // source draw
        x.row(k) = z.head(config_.q).transpose();
        y[k] = rng.uniform() < success_probability(config_, z, r_) ? 1.0 : 0.0;
        break;
      }
    }
  }

 private:
  SimConfig config_;
  Subgroup r_;
  std::uint64_t seed_;
};

struct OracleSolve {
  Vector beta;
  Vector se;
};

OracleSolve oracle_solve(const SimConfig& config, Subgroup r, Index n_oracle, std::uint64_t seed) {
  const TargetOracle oracle(config, r, seed);
  const Index q = config.q;
  const Index warm_rows = std::min<Index>(n_oracle, kWarmRows);

  Matrix x_block;
  Vector y_block;
  Matrix x_warm(warm_rows, q);
  Vector y_warm(warm_rows);
  const Index n_blocks = (n_oracle + kOracleBlock - 1) / kOracleBlock;
  Index filled = 0;
  for (Index b = 0; b < n_blocks && filled < warm_rows; ++b) {
    const Index rows = std::min<Index>(kOracleBlock, n_oracle - b * kOracleBlock);
    oracle.fill_block(b, rows, x_block, y_block);
    const Index take = std::min<Index>(rows, warm_rows - filled);
    x_warm.middleRows(filled, take) = x_block.topRows(take);
    y_warm.segment(filled, take) = y_block.head(take);
    filled += take;
  }

  const MomentSolve warm = solve_moment_equation(x_warm, y_warm, Link::kLogistic);
  if (!warm.converged) {
    throw std::runtime_error("compute_truth: oracle root-finder did not converge");
  }
  if (n_oracle <= warm_rows) return {warm.beta, warm.se};

  // Streaming Newton over regenerated blocks from the warm start.
  Vector beta = warm.beta;
  const double n = static_cast<double>(n_oracle);
  bool converged = false;
  for (Index iter = 0; iter < 20; ++iter) {
    Vector moment = Vector::Zero(q);
    Matrix hess = Matrix::Zero(q, q);
    for (Index b = 0; b < n_blocks; ++b) {
      const Index rows = std::min<Index>(kOracleBlock, n_oracle - b * kOracleBlock);
      oracle.fill_block(b, rows, x_block, y_block);
      const Vector eta = x_block * beta;
      Vector resid(rows), gdot(rows);
      for (Index i = 0; i < rows; ++i) {
        const double mu = expit(eta[i]);
        resid[i] = y_block[i] - mu;
        gdot[i] = mu * (1.0 - mu);
      }
      moment.noalias() += x_block.transpose() * resid;
      hess.selfadjointView<Eigen::Lower>().rankUpdate(
          (gdot.cwiseSqrt().asDiagonal() * x_block).transpose(), 1.0);
    }
    moment /= n;
    hess /= n;
    hess.triangularView<Eigen::Upper>() = hess.transpose();
    hess.diagonal().array() += 1e-12;
    if (moment.cwiseAbs().maxCoeff() <= 1e-9) {
      converged = true;
      break;
    }
    beta += hess.ldlt().solve(moment);
  }
  if (!converged) throw std::runtime_error("compute_truth: streaming root-finder did not converge");

  // Final pass: sandwich standard errors at the solution.
  Matrix hess = Matrix::Zero(q, q);
  Matrix meat = Matrix::Zero(q, q);
  for (Index b = 0; b < n_blocks; ++b) {
    const Index rows = std::min<Index>(kOracleBlock, n_oracle - b * kOracleBlock);
    oracle.fill_block(b, rows, x_block, y_block);
    const Vector eta = x_block * beta;
    Vector resid(rows), gdot(rows);
    for (Index i = 0; i < rows; ++i) {
      const double mu = expit(eta[i]);
      resid[i] = y_block[i] - mu;
      gdot[i] = mu * (1.0 - mu);
    }
    hess.selfadjointView<Eigen::Lower>().rankUpdate(
        (gdot.cwiseSqrt().asDiagonal() * x_block).transpose(), 1.0);
    meat.selfadjointView<Eigen::Lower>().rankUpdate(
        (resid.cwiseAbs().asDiagonal() * x_block).transpose(), 1.0);
  }
  hess /= n;
  meat /= n;
  hess.triangularView<Eigen::Upper>() = hess.transpose();
  meat.triangularView<Eigen::Upper>() = meat.transpose();
  hess.diagonal().array() += 1e-12;
  const Matrix hinv = hess.ldlt().solve(Matrix::Identity(q, q));
  const Matrix cov = hinv * meat * hinv.transpose() / n;
  return {beta, cov.diagonal().cwiseMax(0.0).cwiseSqrt()};
}

}  // namespace

TruthRecord compute_truth(const SimConfig& config, Index n_oracle, std::uint64_t seed) {
  validate_law(config);
  if (n_oracle < 1000) throw ValidationError("compute_truth: n_oracle too small");
  TruthRecord record;
  record.how = TruthRecord::How::kOracleMonteCarlo;
  record.n_oracle = n_oracle;
  const OracleSolve minority = oracle_solve(config, Subgroup::kMinority, n_oracle,
                                            derive_seed(seed, 0));
  const OracleSolve majority = oracle_solve(config, Subgroup::kMajority, n_oracle,
                                            derive_seed(seed, 1));
  record.beta_bar_minority = minority.beta;
  record.se_minority = minority.se;
  record.beta_bar_majority = majority.beta;
  record.se_majority = majority.se;
  return record;
}

}  // namespace makeup
