// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <functional>
#include <optional>
#include <type_traits>

#include "makeup/types.hpp"

namespace makeup {

// One raw input row. The outcome is present exactly on source rows; x
// always starts with the constant 1.
struct Observation {
  Cohort s = Cohort::kSource;
  Subgroup r = Subgroup::kMajority;
  std::optional<double> y;
  Vector x;
  Vector w;
};

// Index view into one stratum (or a union of strata sharing a subgroup).
struct StratumView {
  IndexList indices;
  std::string label;
  Index size() const { return static_cast<Index>(indices.size()); }
  bool empty() const { return indices.empty(); }
};

// The four-stratum dataset. Immutable after construction; safe for shared
// read-only access from concurrent workers.
class LabeledPanel {
 public:
  Index rows() const { return x_.rows(); }
  Index q() const { return x_.cols(); }
  Index p() const { return w_.cols(); }

  const Matrix& x() const { return x_; }
  const Matrix& w() const { return w_; }
  // NaN marks an absent outcome (all target rows).
  const Vector& outcome() const { return y_; }

  Cohort cohort(Index i) const { return static_cast<Cohort>(s_[static_cast<std::size_t>(i)]); }
  Subgroup subgroup(Index i) const { return static_cast<Subgroup>(r_[static_cast<std::size_t>(i)]); }

  const StratumView& stratum(Cohort s, Subgroup r) const {
    return strata_[stratum_slot(s, r)];
  }
  const StratumView& subgroup_union(Subgroup r) const {
    return unions_[r == Subgroup::kMajority ? 1 : 0];
  }
  Index stratum_count(Cohort s, Subgroup r) const { return stratum(s, r).size(); }

  // Concatenated covariate vector z_i = (x_i, w_i).
  Vector z_row(Index i) const;

  friend LabeledPanel build_panel(const std::vector<Observation>& rows);

 private:
  Matrix x_;
  Matrix w_;
  Vector y_;
  std::vector<std::uint8_t> s_;
  std::vector<std::uint8_t> r_;
  StratumView strata_[4];
  StratumView unions_[2];

  static int stratum_slot(Cohort s, Subgroup r) {
    return (s == Cohort::kSource ? 2 : 0) + (r == Subgroup::kMajority ? 1 : 0);
  }
};

// Validates and packs raw rows. Rejects labeled target rows, unlabeled
// source rows, ragged vectors, x[0] != 1, and non-finite covariates.
LabeledPanel build_panel(const std::vector<Observation>& rows);

// Basis expansion phi acting on z = (x, w). The identity map returns the
// concatenation unchanged; custom maps are pure functions of one row.
struct BasisMap {
  enum class Kind : std::uint8_t { kIdentity, kCustom };
  Kind kind = Kind::kIdentity;
  Index d = 0;
  std::function<Vector(const Vector&)> transform;

  static BasisMap identity(Index q, Index p) {
    BasisMap m;
    m.kind = Kind::kIdentity;
    m.d = q + p;
    return m;
  }
  static BasisMap custom(Index d, std::function<Vector(const Vector&)> f) {
    BasisMap m;
    m.kind = Kind::kCustom;
    m.d = d;
    m.transform = std::move(f);
    return m;
  }
};

// One design row per observation; row i equals phi((x_i, w_i)).
Matrix expand_basis(const LabeledPanel& panel, const BasisMap& map);

// Lightweight per-row accessor used by the empirical-mean operators.
struct PanelRow {
  Cohort s;
  Subgroup r;
  double y;  // NaN when absent
  Vector x;
  Vector w;
};

namespace detail {
inline PanelRow panel_row(const LabeledPanel& panel, Index i) {
  return PanelRow{panel.cohort(i), panel.subgroup(i), panel.outcome()[i],
                  panel.x().row(i).transpose(), panel.w().row(i).transpose()};
}
}  // namespace detail

// Empirical mean operator over a stratum view: n^{-1} sum_{i in view} f(row_i).
// The functional may return a Vector or a scalar.
template <class Fn>
auto stratum_mean(const LabeledPanel& panel, const StratumView& view, Fn&& f) {
  using Result = std::invoke_result_t<Fn, const PanelRow&>;
  if (view.empty()) {
    throw ValidationError("stratum_mean: empty stratum view" +
                          (view.label.empty() ? std::string() : " (" + view.label + ")"));
  }
  const double inv = 1.0 / static_cast<double>(view.size());
  if constexpr (std::is_arithmetic_v<Result>) {
    double acc = 0.0;
    for (Index i : view.indices) acc += f(detail::panel_row(panel, i));
    return acc * inv;
  } else {
    Vector acc;
    bool first = true;
    for (Index i : view.indices) {
      Vector v = f(detail::panel_row(panel, i));
      if (first) {
        acc = std::move(v);
        first = false;
      } else {
        acc += v;
      }
    }
    acc *= inv;
    return acc;
  }
}

}  // namespace makeup
