// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#pragma once

#include <map>
#include <nlohmann/json.hpp>

#include "makeup/panel.hpp"
#include "makeup/solver.hpp"

namespace makeup {

// Shortest round-trip decimal representation; all emitted numbers go
// through this so outputs are byte-stable.
std::string format_double(double v);

// Panel CSV schema: header `S,R,Y,X1..Xq,W1..Wp`; S = 1 for source rows,
// R = 1 for majority rows, Y empty on target rows. Parse errors carry
// 1-based line numbers.
void write_panel_csv(const LabeledPanel& panel, const std::string& path);
LabeledPanel read_panel_csv(const std::string& path);

// Lighter table for prediction and validation files: any CSV with columns
// X1..Xq (and Y when required); other columns are ignored.
struct FeatureTable {
  Matrix x;
  Vector y;
  bool has_y = false;
};
FeatureTable read_feature_csv(const std::string& path, bool require_y);

struct MethodModel {
  Vector coef;
  IndexList support;
  nlohmann::json tuning;
  std::vector<std::string> warnings;
  std::vector<double> fold_weights;  // present for the ensemble method only
};

struct ModelFile {
  Link link = Link::kLogistic;
  Index q = 0;
  Index p = 0;
  std::map<std::string, MethodModel> methods;
};

void write_model_json(const ModelFile& model, const std::string& path);
ModelFile read_model_json(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace makeup
