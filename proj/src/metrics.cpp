// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace makeup {

double coef_error(const Vector& beta_hat, const Vector& beta_bar, Norm norm) {
  if (beta_hat.size() != beta_bar.size()) throw ValidationError("coef_error: length mismatch");
  const Vector diff = beta_hat - beta_bar;
  return norm == Norm::kL1 ? diff.lpNorm<1>() : diff.norm();
}

namespace {

void check_validation(const Vector& beta, const Matrix& x, const Vector& y) {
  if (x.rows() != y.size()) throw ValidationError("metrics: row/label count mismatch");
  if (x.cols() != beta.size()) throw ValidationError("metrics: coefficient length mismatch");
  if (y.size() == 0) throw ValidationError("metrics: empty validation set");
}

}  // namespace

double brier_skill(const Vector& beta, const Matrix& x_val, const Vector& y_val, Link g) {
  check_validation(beta, x_val, y_val);
  const double n = static_cast<double>(y_val.size());
  const double mean = y_val.mean();
  const double variance = (y_val.array() - mean).square().sum() / n;
  if (variance <= 0.0) {
    throw ValidationError("brier_skill: constant outcome has undefined variance");
  }
  const Vector pred = link_mean(g, (x_val * beta).eval());
  const double mse = (y_val - pred).squaredNorm() / n;
  return 1.0 - mse / variance;
}

double goodness_of_fit(const Vector& beta, const Matrix& x_val, const Vector& y_val, Link g) {
  check_validation(beta, x_val, y_val);
  const Vector eta = x_val * beta;
  double acc = 0.0;
  for (Index i = 0; i < eta.size(); ++i) {
    acc += -y_val[i] * eta[i] + link_antiderivative(g, eta[i]);
  }
  return 1.0 - 2.0 * acc / static_cast<double>(eta.size());
}

double auc(const Vector& beta, const Matrix& x_val, const Vector& y_val) {
  check_validation(beta, x_val, y_val);
  const Vector score = x_val * beta;
  const Index n = score.size();
  IndexList order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return score[a] < score[b]; });

  // Midrank Mann-Whitney statistic.
  double rank_sum_pos = 0.0;
  Index n_pos = 0;
  Index i = 0;
  while (i < n) {
    Index j = i;
    while (j + 1 < n && score[order[static_cast<std::size_t>(j + 1)]] ==
                            score[order[static_cast<std::size_t>(i)]]) {
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) {
      if (y_val[order[static_cast<std::size_t>(k)]] > 0.5) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const Index n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw ValidationError("auc: validation set contains a single class");
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      (static_cast<double>(n_pos) + 1.0);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace makeup
