// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include "makeup/link.hpp"
#include "makeup/types.hpp"

namespace makeup {

enum class Norm : std::uint8_t { kL1, kL2 };

// |beta_hat - beta_bar| in the requested norm.
double coef_error(const Vector& beta_hat, const Vector& beta_bar, Norm norm);

// Brier skill score 1 - mean{(y - g(x'beta))^2} / var(y) with the
// population (1/n) variance convention. Errors on constant y.
double brier_skill(const Vector& beta, const Matrix& x_val, const Vector& y_val,
                   Link g = Link::kLogistic);

// Negative-deviance goodness of fit 1 - 2 mean{-y x'beta + G(x'beta)}.
double goodness_of_fit(const Vector& beta, const Matrix& x_val, const Vector& y_val,
                       Link g = Link::kLogistic);

// Mann-Whitney AUC of the linear score with ties counted 1/2. Errors when
// only one class is present.
double auc(const Vector& beta, const Matrix& x_val, const Vector& y_val);

// One scored fit: simulation mode fills the coefficient errors, validation
// mode the predictive metrics.
struct EstimatorReport {
  std::string method;
  Vector coefficients;
  double l1_err = std::numeric_limits<double>::quiet_NaN();
  double l2_err = std::numeric_limits<double>::quiet_NaN();
  double bss = std::numeric_limits<double>::quiet_NaN();
  double gof = std::numeric_limits<double>::quiet_NaN();
  double auc = std::numeric_limits<double>::quiet_NaN();
  Index replicate = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

}  // namespace makeup
