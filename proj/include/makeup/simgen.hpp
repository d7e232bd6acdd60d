// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include "makeup/link.hpp"
#include "makeup/panel.hpp"

namespace makeup {

// Synthetic data-generating configurations: (I) both nuisance models hold,
// (II) the density ratio holds but the imputation model is misspecified,
// (III) the reverse.
enum class SimSetting : std::uint8_t { kI, kII, kIII };

struct SimConfig {
  SimSetting setting = SimSetting::kI;
  Index q = 0;
  Index p = 0;
  Index t = 0;  // number of shifted majority coefficients in delta_t
  Index n_s1 = 0, n_s0 = 0, n_t1 = 0, n_t0 = 0;
  std::uint64_t seed = 0;
};

struct GenerationMeta {
  Index candidates = 0;
  double acceptance_rate = 1.0;
};

// Covariate draws: z_1 = 1, z_j i.i.d. standard normal truncated to
// (-1.5, 1.5) via the inverse CDF. Candidates alternate subgroup labels,
// receive a cohort by its conditional law, and fill each stratum's quota
// by rejection, which preserves the within-stratum covariate law. Outcomes
// are drawn for every row and stripped from target rows.
LabeledPanel generate_panel(const SimConfig& config, GenerationMeta* meta = nullptr);

// P(Y = 1 | Z = z, R = r) and P(S = source | Z = z, R = r).
double success_probability(const SimConfig& config, const Vector& z, Subgroup r);
double source_probability(const SimConfig& config, const Vector& z, Subgroup r);

// The sparse majority-minority shift vector (0, 0.2 x 1_t, 0, ...).
Vector heterogeneity_shift(const SimConfig& config);

struct TruthRecord {
  enum class How : std::uint8_t { kAnalytic, kOracleMonteCarlo };
  Vector beta_bar_minority, beta_bar_majority;
  Vector se_minority, se_majority;  // sandwich Monte Carlo standard errors
  How how = How::kOracleMonteCarlo;
  Index n_oracle = 0;
};

// Population targets solved from a large oracle draw of the target-stratum
// law with outcomes attached; Newton root-finding on the moment equation.
TruthRecord compute_truth(const SimConfig& config, Index n_oracle, std::uint64_t seed);

struct MomentSolve {
  Vector beta;
  Vector se;
  bool converged = false;
  Index iterations = 0;
};

// Damped Newton solve of mean_i[x_i (y_i - g(x_i' beta))] = 0 with sandwich
// standard errors; the oracle root-finder behind compute_truth.
MomentSolve solve_moment_equation(const Matrix& x, const Vector& y, Link link,
                                  double tol = 1e-10, Index max_iter = 200);

// Standard normal quantile (rational approximation plus one Halley step).
double normal_quantile(double p);
double normal_cdf(double x);

// Deterministic uniform and truncated-normal streams built on splitmix64
// seeding; reproducible across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xA5A5A5A5A5A5A5A5ULL)) {}
  double uniform();  // [0, 1)
  double truncated_normal(double lo, double hi);

 private:
  std::uint64_t next();
  std::uint64_t state_;
};

}  // namespace makeup
