// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace makeup {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(field);
  return fields;
}

double parse_number(const std::string& s, const std::string& what, Index line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line) + ": cannot parse " + what + " value '" +
                          s + "'");
  }
}

}  // namespace

void write_panel_csv(const LabeledPanel& panel, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << "S,R,Y";
  for (Index j = 1; j <= panel.q(); ++j) out << ",X" << j;
  for (Index j = 1; j <= panel.p(); ++j) out << ",W" << j;
  out << "\n";
  for (Index i = 0; i < panel.rows(); ++i) {
    out << (panel.cohort(i) == Cohort::kSource ? '1' : '0') << ','
        << (panel.subgroup(i) == Subgroup::kMajority ? '1' : '0') << ',';
    if (panel.cohort(i) == Cohort::kSource) out << format_double(panel.outcome()[i]);
    for (Index j = 0; j < panel.q(); ++j) out << ',' << format_double(panel.x()(i, j));
    for (Index j = 0; j < panel.p(); ++j) out << ',' << format_double(panel.w()(i, j));
    out << "\n";
  }
}

LabeledPanel read_panel_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "S" || header[1] != "R" || header[2] != "Y") {
    throw ValidationError(path + ": line 1: header must start with S,R,Y");
  }
  Index q = 0, p = 0;
  std::size_t pos = 3;
  while (pos < header.size() && header[pos] == "X" + std::to_string(q + 1)) {
    ++q;
    ++pos;
  }
  while (pos < header.size() && header[pos] == "W" + std::to_string(p + 1)) {
    ++p;
    ++pos;
  }
  if (pos != header.size() || q < 1) {
    throw ValidationError(path + ": line 1: header columns must be S,R,Y,X1..Xq,W1..Wp");
  }

  std::vector<Observation> rows;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (static_cast<Index>(fields.size()) != 3 + q + p) {
      throw ValidationError(path + ": line " + std::to_string(line_no) + ": expected " +
                            std::to_string(3 + q + p) + " fields, found " +
                            std::to_string(fields.size()));
    }
    Observation obs;
    const double s = parse_number(fields[0], "S", line_no);
    const double r = parse_number(fields[1], "R", line_no);
    if (s != 0.0 && s != 1.0) {
      throw ValidationError(path + ": line " + std::to_string(line_no) + ": S must be 0 or 1");
    }
    if (r != 0.0 && r != 1.0) {
      throw ValidationError(path + ": line " + std::to_string(line_no) + ": R must be 0 or 1");
    }
    obs.s = s == 1.0 ? Cohort::kSource : Cohort::kTarget;
    obs.r = r == 1.0 ? Subgroup::kMajority : Subgroup::kMinority;
    if (!fields[2].empty()) obs.y = parse_number(fields[2], "Y", line_no);
    if (obs.s == Cohort::kSource && !obs.y.has_value()) {
      throw ValidationError(path + ": line " + std::to_string(line_no) +
                            ": source row (S=1) must carry an outcome");
    }
    if (obs.s == Cohort::kTarget && obs.y.has_value()) {
      throw ValidationError(path + ": line " + std::to_string(line_no) +
                            ": target row (S=0) must have an empty Y");
    }
    obs.x.resize(q);
    obs.w.resize(p);
    for (Index j = 0; j < q; ++j) {
      obs.x[j] = parse_number(fields[static_cast<std::size_t>(3 + j)], "X" + std::to_string(j + 1),
                              line_no);
    }
    for (Index j = 0; j < p; ++j) {
      obs.w[j] = parse_number(fields[static_cast<std::size_t>(3 + q + j)],
                              "W" + std::to_string(j + 1), line_no);
    }
    if (obs.x[0] != 1.0) {
      throw ValidationError(path + ": line " + std::to_string(line_no) + ": X1 must equal 1");
    }
    rows.push_back(std::move(obs));
  }
  if (rows.empty()) throw ValidationError(path + ": no data rows");
  return build_panel(rows);
}

FeatureTable read_feature_csv(const std::string& path, bool require_y) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ": empty file");
  const std::vector<std::string> header = split_csv_line(line);

  std::vector<Index> x_cols;  // column index of X1, X2, ...
  Index y_col = -1;
  for (Index k = 1;; ++k) {
    const std::string name = "X" + std::to_string(k);
    Index found = -1;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) found = static_cast<Index>(c);
    }
    if (found < 0) break;
    x_cols.push_back(found);
  }
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "Y") y_col = static_cast<Index>(c);
  }
  if (x_cols.empty()) throw ValidationError(path + ": line 1: no X1.. columns found");
  if (require_y && y_col < 0) throw ValidationError(path + ": line 1: missing Y column");

  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  Index line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() < header.size()) {
      throw ValidationError(path + ": line " + std::to_string(line_no) + ": short row");
    }
    std::vector<double> row;
    row.reserve(x_cols.size());
    for (std::size_t k = 0; k < x_cols.size(); ++k) {
      row.push_back(parse_number(fields[static_cast<std::size_t>(x_cols[k])],
                                 "X" + std::to_string(k + 1), line_no));
    }
    xs.push_back(std::move(row));
    if (y_col >= 0) {
      const std::string& field = fields[static_cast<std::size_t>(y_col)];
      if (field.empty()) {
        if (require_y) {
          throw ValidationError(path + ": line " + std::to_string(line_no) +
                                ": validation rows must be labeled");
        }
        ys.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        ys.push_back(parse_number(field, "Y", line_no));
      }
    }
  }
  if (xs.empty()) throw ValidationError(path + ": no data rows");

  FeatureTable table;
  table.x.resize(static_cast<Index>(xs.size()), static_cast<Index>(x_cols.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = 0; j < x_cols.size(); ++j) {
      table.x(static_cast<Index>(i), static_cast<Index>(j)) = xs[i][j];
    }
  }
  if (y_col >= 0) {
    table.has_y = true;
    table.y.resize(static_cast<Index>(ys.size()));
    for (std::size_t i = 0; i < ys.size(); ++i) table.y[static_cast<Index>(i)] = ys[i];
  }
  return table;
}

void write_model_json(const ModelFile& model, const std::string& path) {
  nlohmann::json j;
  j["schema"] = "makeup-model/1";
  j["link"] = to_string(model.link);
  j["q"] = model.q;
  j["p"] = model.p;
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& [name, m] : model.methods) {
    nlohmann::json entry;
    entry["coef"] = std::vector<double>(m.coef.data(), m.coef.data() + m.coef.size());
    entry["support"] = m.support;
    entry["tuning"] = m.tuning.is_null() ? nlohmann::json::object() : m.tuning;
    entry["warnings"] = m.warnings;
    if (!m.fold_weights.empty()) entry["fold_weights"] = m.fold_weights;
    methods[name] = std::move(entry);
  }
  j["methods"] = std::move(methods);
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << j.dump(2) << "\n";
}

ModelFile read_model_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open: " + path);
  nlohmann::json j;
  in >> j;
  ModelFile model;
  model.link = link_from_string(j.at("link").get<std::string>());
  model.q = j.at("q").get<Index>();
  model.p = j.at("p").get<Index>();
  for (const auto& [name, entry] : j.at("methods").items()) {
    MethodModel m;
    const auto coef = entry.at("coef").get<std::vector<double>>();
    m.coef = Eigen::Map<const Vector>(coef.data(), static_cast<Index>(coef.size()));
    m.support = entry.at("support").get<IndexList>();
    m.tuning = entry.value("tuning", nlohmann::json::object());
    m.warnings = entry.value("warnings", std::vector<std::string>{});
    m.fold_weights = entry.value("fold_weights", std::vector<double>{});
    model.methods[name] = std::move(m);
  }
  return model;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open for writing: " + path);
  out << content;
}

}  // namespace makeup
