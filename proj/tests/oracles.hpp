// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Test-side reference implementations. These stay independent of the
// library's solver path: links, Newton steps, and quadrature are written
// from scratch here.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>

#include "makeup/types.hpp"

namespace oracle {

using makeup::Index;
using makeup::Matrix;
using makeup::Vector;

enum class Kind { kIdentity, kLogistic, kExponential };

inline double mean_fn(Kind k, double u) {
  switch (k) {
    case Kind::kIdentity: return u;
    case Kind::kLogistic: return u >= 0 ? 1.0 / (1.0 + std::exp(-u))
                                        : std::exp(u) / (1.0 + std::exp(u));
    case Kind::kExponential: return std::exp(u);
  }
  return u;
}

inline double deriv_fn(Kind k, double u) {
  switch (k) {
    case Kind::kIdentity: return 1.0;
    case Kind::kLogistic: {
      const double m = mean_fn(Kind::kLogistic, u);
      return m * (1.0 - m);
    }
    case Kind::kExponential: return std::exp(u);
  }
  return 1.0;
}

inline double anti_fn(Kind k, double u) {
  switch (k) {
    case Kind::kIdentity: return 0.5 * u * u;
    case Kind::kLogistic: return u > 30 ? u : std::log1p(std::exp(u));
    case Kind::kExponential: return std::exp(u);
  }
  return 0.5 * u * u;
}

// Objective c'b + sum_i w_i { -y_i eta_i + G(eta_i) }, eta = offset + x b.
struct Problem {
  Matrix x;
  Vector w;
  Vector y;       // may be empty
  Vector offset;  // may be empty
  Vector c;       // may be empty
  Kind kind = Kind::kIdentity;
};

inline double objective(const Problem& p, const Vector& b) {
  double acc = 0.0;
  for (Index i = 0; i < p.x.rows(); ++i) {
    double eta = p.x.row(i).dot(b);
    if (p.offset.size()) eta += p.offset[i];
    double term = anti_fn(p.kind, eta);
    if (p.y.size()) term -= p.y[i] * eta;
    acc += p.w[i] * term;
  }
  if (p.c.size()) acc += p.c.dot(b);
  return acc;
}

inline Vector gradient(const Problem& p, const Vector& b) {
  Vector g = p.c.size() ? p.c : Vector::Zero(p.x.cols());
  for (Index i = 0; i < p.x.rows(); ++i) {
    double eta = p.x.row(i).dot(b);
    if (p.offset.size()) eta += p.offset[i];
    double r = mean_fn(p.kind, eta);
    if (p.y.size()) r -= p.y[i];
    g += p.w[i] * r * p.x.row(i).transpose();
  }
  return g;
}

// Damped Newton minimizer of the smooth objective above.
inline Vector newton_glm(const Problem& p, double tol = 1e-12, int max_iter = 300) {
  const Index d = p.x.cols();
  Vector b = Vector::Zero(d);
  for (int iter = 0; iter < max_iter; ++iter) {
    const Vector g = gradient(p, b);
    if (g.cwiseAbs().maxCoeff() <= tol) break;
    Matrix h = Matrix::Zero(d, d);
    for (Index i = 0; i < p.x.rows(); ++i) {
      double eta = p.x.row(i).dot(b);
      if (p.offset.size()) eta += p.offset[i];
      h += p.w[i] * deriv_fn(p.kind, eta) * p.x.row(i).transpose() * p.x.row(i);
    }
    h.diagonal().array() += 1e-12;
    const Vector step = h.ldlt().solve(g);
    double t = 1.0;
    const double f0 = objective(p, b);
    while (t > 1e-8 && objective(p, b - t * step) > f0) t *= 0.5;
    b -= t * step;
  }
  return b;
}

// Central finite differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& at,
                          double h = 1e-5) {
  Vector g(at.size());
  for (Index j = 0; j < at.size(); ++j) {
    Vector up = at, dn = at;
    up[j] += h;
    dn[j] -= h;
    g[j] = (f(up) - f(dn)) / (2.0 * h);
  }
  return g;
}

// Composite Simpson quadrature (n must be odd node count).
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2001) {
  if (n % 2 == 0) ++n;
  const double h = (b - a) / (n - 1);
  double acc = f(a) + f(b);
  for (int i = 1; i < n - 1; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

struct TestRng {
  std::mt19937_64 eng;
  explicit TestRng(std::uint64_t s) : eng(s) {}
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(eng); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(eng); }
  Vector normal_vector(Index n) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }
};

}  // namespace oracle
