// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "makeup/campaign.hpp"

namespace {

using namespace makeup;

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config: " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

int cmd_simulate(const std::string& config_path, const std::string& out,
                 const std::string& methods, std::int64_t replicates, std::int64_t seed,
                 std::int64_t workers) {
  CampaignConfig config = campaign_from_json(load_json(config_path));
  if (!out.empty()) config.out_dir = out;
  if (replicates > 0) config.replicates = replicates;
  if (seed >= 0) config.root_seed = static_cast<std::uint64_t>(seed);
  if (workers > 0) config.workers = workers;
  if (!methods.empty()) {
    config.methods.clear();
    std::string name;
    for (char c : methods + ",") {
      if (c == ',') {
        if (!name.empty()) config.methods.push_back(method_from_string(name));
        name.clear();
      } else {
        name += c;
      }
    }
  }
  const CampaignResult result = run_campaign(config);
  Index n_failed = 0;
  for (const auto& row : result.rows) n_failed += row.ok ? 0 : 1;
  std::cout << "campaign complete: " << result.rows.size() << " rows (" << n_failed
            << " failed) in " << config.out_dir << "\n"
            << read_text_file(config.out_dir + "/summary.txt");
  return 0;
}

int cmd_fit(const std::string& config_path, const std::string& data_path,
            const std::string& out_path, const std::string& methods, std::int64_t seed,
            std::int64_t workers) {
  nlohmann::json config = nlohmann::json::object();
  if (!config_path.empty()) config = load_json(config_path);
  PipelineTuning tuning;
  if (config.contains("tuning")) tuning = tuning_from_json(config.at("tuning"));
  if (workers > 0) tuning.threads = workers;
  const double temperature = config.value("temperature", 5.0);
  std::uint64_t root_seed = config.value("seed", std::uint64_t{1});
  if (seed >= 0) root_seed = static_cast<std::uint64_t>(seed);

  std::vector<MethodId> ids;
  if (!methods.empty()) {
    std::string name;
    for (char c : methods + ",") {
      if (c == ',') {
        if (!name.empty()) ids.push_back(method_from_string(name));
        name.clear();
      } else {
        name += c;
      }
    }
  } else {
    for (const auto& name : config.value("methods", std::vector<std::string>{"mu"})) {
      ids.push_back(method_from_string(name));
    }
  }

  const LabeledPanel panel = read_panel_csv(data_path);
  const BasisMap basis = BasisMap::identity(panel.q(), panel.p());
  const auto outcomes = fit_methods(panel, basis, ids, tuning, temperature, root_seed);

  ModelFile model;
  model.link = tuning.g_link;
  model.q = panel.q();
  model.p = panel.p();
  bool any_failed = false;
  for (const auto& [id, outcome] : outcomes) {
    if (!outcome.fit) {
      any_failed = true;
      std::cerr << "method " << to_string(id) << " failed: " << outcome.error << "\n";
      continue;
    }
    MethodModel m;
    m.coef = outcome.fit->coef;
    m.support = outcome.fit->support;
    m.tuning = outcome.fit->tuning;
    m.warnings = outcome.fit->warnings;
    m.fold_weights = outcome.fit->fold_weights;
    model.methods[to_string(id)] = std::move(m);
  }
  if (model.methods.empty()) throw std::runtime_error("fit: every requested method failed");
  write_model_json(model, out_path);
  std::cout << "wrote " << model.methods.size() << " fitted method(s) to " << out_path << "\n";
  return any_failed ? 1 : 0;
}

int cmd_predict(const std::string& model_path, const std::string& data_path,
                const std::string& out_path) {
  const ModelFile model = read_model_json(model_path);
  const FeatureTable table = read_feature_csv(data_path, /*require_y=*/false);
  if (table.x.cols() != model.q) {
    throw ValidationError("predict: feature columns (" + std::to_string(table.x.cols()) +
                          ") do not match model dimension (" + std::to_string(model.q) + ")");
  }
  std::ostringstream out;
  out << "row";
  for (const auto& [name, m] : model.methods) out << ',' << name;
  out << "\n";
  for (Index i = 0; i < table.x.rows(); ++i) {
    out << i;
    for (const auto& [name, m] : model.methods) {
      out << ',' << format_double(link_mean(model.link, table.x.row(i).dot(m.coef)));
    }
    out << "\n";
  }
  write_text_file(out_path, out.str());
  std::cout << "wrote predictions for " << table.x.rows() << " rows to " << out_path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& out_path) {
  const ModelFile model = read_model_json(model_path);
  const FeatureTable table = read_feature_csv(data_path, /*require_y=*/true);
  if (table.x.cols() != model.q) {
    throw ValidationError("evaluate: feature columns do not match model dimension");
  }
  std::ostringstream csv;
  csv << "method,BSS,GOF,AUC\n";
  std::cout << "method\tBSS\tGOF\tAUC\n";
  for (const auto& [name, m] : model.methods) {
    const double bss = brier_skill(m.coef, table.x, table.y, model.link);
    const double gof = goodness_of_fit(m.coef, table.x, table.y, model.link);
    const double a = auc(m.coef, table.x, table.y);
    csv << name << ',' << format_double(bss) << ',' << format_double(gof) << ','
        << format_double(a) << "\n";
    std::cout << name << '\t' << format_double(bss) << '\t' << format_double(gof) << '\t'
              << format_double(a) << "\n";
  }
  if (!out_path.empty()) write_text_file(out_path, csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAKEUP: model-assisted knowledge-guided transfer regression"};
  app.require_subcommand(1);

  std::string config_path, data_path, model_path, out_path, methods;
  std::int64_t replicates = -1, seed = -1, workers = -1;

  CLI::App* simulate = app.add_subcommand("simulate", "run a simulation campaign");
  simulate->add_option("--config", config_path, "campaign config JSON")->required();
  simulate->add_option("--out", out_path, "output directory (overrides config)");
  simulate->add_option("--methods", methods, "comma-separated method list (overrides config)");
  simulate->add_option("--replicates", replicates, "replicate count (overrides config)");
  simulate->add_option("--seed", seed, "root seed (overrides config)");
  simulate->add_option("--workers", workers, "worker count (overrides config)");

  CLI::App* fit = app.add_subcommand("fit", "fit methods on a panel CSV");
  fit->add_option("--config", config_path, "fit config JSON (methods, tuning)");
  fit->add_option("--data", data_path, "training panel CSV")->required();
  fit->add_option("--out", out_path, "output model JSON")->required();
  fit->add_option("--methods", methods, "comma-separated method list (overrides config)");
  fit->add_option("--seed", seed, "root seed (overrides config)");
  fit->add_option("--workers", workers, "threads for per-coordinate work");

  CLI::App* predict = app.add_subcommand("predict", "predict from a fitted model");
  predict->add_option("--model", model_path, "model JSON")->required();
  predict->add_option("--data", data_path, "feature CSV (columns X1..Xq)")->required();
  predict->add_option("--out", out_path, "predictions CSV")->required();

  CLI::App* evaluate = app.add_subcommand("evaluate", "score a model on labeled validation data");
  evaluate->add_option("--model", model_path, "model JSON")->required();
  evaluate->add_option("--data", data_path, "labeled CSV (columns X1..Xq and Y)")->required();
  evaluate->add_option("--out", out_path, "metrics CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      return cmd_simulate(config_path, out_path, methods, replicates, seed, workers);
    }
    if (fit->parsed()) return cmd_fit(config_path, data_path, out_path, methods, seed, workers);
    if (predict->parsed()) return cmd_predict(model_path, data_path, out_path);
    if (evaluate->parsed()) return cmd_evaluate(model_path, data_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
