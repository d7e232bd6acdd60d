// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <cmath>
#include <string>

#include "makeup/types.hpp"

namespace makeup {

// Pointwise mean functions u -> u, expit(u), exp(u). Each link's
// antiderivative G(a) = int_0^a g(u) du is convex, so every generalized
// linear objective built from them is convex.
enum class Link : std::uint8_t { kIdentity, kLogistic, kExponential };

// Linear predictors are clipped to +-kExpClip inside exp() while the
// exponential link iterates; solutions sitting at the clip are flagged.
inline constexpr double kExpClip = 30.0;

inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log1pexp(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double link_mean(Link link, double u) {
  switch (link) {
    case Link::kIdentity: return u;
    case Link::kLogistic: return expit(u);
    case Link::kExponential: return std::exp(std::min(u, kExpClip));
  }
  return u;
}

inline double link_derivative(Link link, double u) {
  switch (link) {
    case Link::kIdentity: return 1.0;
    case Link::kLogistic: {
      const double m = expit(u);
      return m * (1.0 - m);
    }
    case Link::kExponential: return std::exp(std::min(u, kExpClip));
  }
  return 1.0;
}

inline double link_antiderivative(Link link, double u) {
  switch (link) {
    case Link::kIdentity: return 0.5 * u * u;
    case Link::kLogistic: return log1pexp(u);
    case Link::kExponential: return std::exp(std::min(u, kExpClip));
  }
  return 0.5 * u * u;
}

inline double link_inverse(Link link, double m) {
  switch (link) {
    case Link::kIdentity: return m;
    case Link::kLogistic: return std::log(m) - std::log1p(-m);
    case Link::kExponential: return std::log(m);
  }
  return m;
}

template <class Derived>
Vector link_mean(Link link, const Eigen::MatrixBase<Derived>& u) {
  Vector out(u.size());
  for (Index i = 0; i < u.size(); ++i) out[i] = link_mean(link, u[i]);
  return out;
}

template <class Derived>
Vector link_derivative(Link link, const Eigen::MatrixBase<Derived>& u) {
  Vector out(u.size());
  for (Index i = 0; i < u.size(); ++i) out[i] = link_derivative(link, u[i]);
  return out;
}

inline const char* to_string(Link link) {
  switch (link) {
    case Link::kIdentity: return "identity";
    case Link::kLogistic: return "logistic";
    case Link::kExponential: return "exponential";
  }
  return "identity";
}

inline Link link_from_string(const std::string& s) {
  if (s == "identity") return Link::kIdentity;
  if (s == "logistic") return Link::kLogistic;
  if (s == "exponential") return Link::kExponential;
  throw ValidationError("unknown link: " + s);
}

}  // namespace makeup
