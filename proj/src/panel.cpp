// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/panel.hpp"

#include <cmath>
#include <limits>

namespace makeup {

namespace {

std::string row_tag(Index i) { return "row " + std::to_string(i); }

}  // namespace

Vector LabeledPanel::z_row(Index i) const {
  Vector z(q() + p());
  z.head(q()) = x_.row(i).transpose();
  if (p() > 0) z.tail(p()) = w_.row(i).transpose();
  return z;
}

LabeledPanel build_panel(const std::vector<Observation>& rows) {
  if (rows.empty()) throw ValidationError("build_panel: no rows");
  const Index n = static_cast<Index>(rows.size());
  const Index q = rows.front().x.size();
  const Index p = rows.front().w.size();
  if (q < 1) throw ValidationError("build_panel: x must have length >= 1");

  LabeledPanel panel;
  panel.x_.resize(n, q);
  panel.w_.resize(n, p);
  panel.y_.resize(n);
  panel.s_.resize(static_cast<std::size_t>(n));
  panel.r_.resize(static_cast<std::size_t>(n));

  for (Index i = 0; i < n; ++i) {
    const Observation& obs = rows[static_cast<std::size_t>(i)];
    if (obs.x.size() != q) {
      throw ValidationError("build_panel: ragged x at " + row_tag(i) + " (length " +
                            std::to_string(obs.x.size()) + ", expected " + std::to_string(q) + ")");
    }
    if (obs.w.size() != p) {
      throw ValidationError("build_panel: ragged w at " + row_tag(i) + " (length " +
                            std::to_string(obs.w.size()) + ", expected " + std::to_string(p) + ")");
    }
    if (obs.x[0] != 1.0) {
      throw ValidationError("build_panel: x[0] != 1 at " + row_tag(i));
    }
    if (!obs.x.allFinite() || (p > 0 && !obs.w.allFinite())) {
      throw ValidationError("build_panel: non-finite covariate at " + row_tag(i));
    }
    const bool labeled = obs.y.has_value() && std::isfinite(*obs.y);
    if (obs.s == Cohort::kSource && !labeled) {
      throw ValidationError("build_panel: source row without outcome at " + row_tag(i));
    }
    if (obs.s == Cohort::kTarget && obs.y.has_value()) {
      throw ValidationError("build_panel: target row carries an outcome at " + row_tag(i));
    }
    panel.x_.row(i) = obs.x.transpose();
    if (p > 0) panel.w_.row(i) = obs.w.transpose();
    panel.y_[i] = labeled ? *obs.y : std::numeric_limits<double>::quiet_NaN();
    panel.s_[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(obs.s);
    panel.r_[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(obs.r);

    const int slot = LabeledPanel::stratum_slot(obs.s, obs.r);
    panel.strata_[slot].indices.push_back(i);
    panel.unions_[obs.r == Subgroup::kMajority ? 1 : 0].indices.push_back(i);
  }

  for (Cohort s : {Cohort::kSource, Cohort::kTarget}) {
    for (Subgroup r : {Subgroup::kMinority, Subgroup::kMajority}) {
      panel.strata_[LabeledPanel::stratum_slot(s, r)].label =
          std::string(to_string(s)) + "/" + to_string(r);
    }
  }
  panel.unions_[0].label = "minority";
  panel.unions_[1].label = "majority";
  return panel;
}

Matrix expand_basis(const LabeledPanel& panel, const BasisMap& map) {
  const Index n = panel.rows();
  const Index qp = panel.q() + panel.p();
  if (map.kind == BasisMap::Kind::kIdentity) {
    if (map.d != qp) {
      throw ValidationError("expand_basis: identity map dimension " + std::to_string(map.d) +
                            " does not match q+p = " + std::to_string(qp));
    }
    Matrix phi(n, qp);
    phi.leftCols(panel.q()) = panel.x();
    if (panel.p() > 0) phi.rightCols(panel.p()) = panel.w();
    return phi;
  }
  if (!map.transform) throw ValidationError("expand_basis: custom map has no transform");
  Matrix phi(n, map.d);
  for (Index i = 0; i < n; ++i) {
    Vector out = map.transform(panel.z_row(i));
    if (out.size() != map.d) {
      throw ValidationError("expand_basis: transform output length " + std::to_string(out.size()) +
                            " != declared d = " + std::to_string(map.d) + " at row " +
                            std::to_string(i));
    }
    phi.row(i) = out.transpose();
  }
  return phi;
}

}  // namespace makeup
