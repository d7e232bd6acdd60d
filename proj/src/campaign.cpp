// Copyright 2026 The MAKEUP Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0

#include "makeup/campaign.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

namespace makeup {

std::string to_string(MethodId m) {
  switch (m) {
    case MethodId::kMu: return "mu";
    case MethodId::kMuMajG: return "mu_maj_g";
    case MethodId::kMuMinO: return "mu_min_o";
    case MethodId::kIw: return "iw";
    case MethodId::kIwALasso: return "iw_alasso";
    case MethodId::kIm: return "im";
    case MethodId::kImALasso: return "im_alasso";
    case MethodId::kNaive: return "naive";
  }
  return "naive";
}

MethodId method_from_string(const std::string& name) {
  if (name == "mu") return MethodId::kMu;
  if (name == "mu_maj_g") return MethodId::kMuMajG;
  if (name == "mu_min_o") return MethodId::kMuMinO;
  if (name == "iw") return MethodId::kIw;
  if (name == "iw_alasso") return MethodId::kIwALasso;
  if (name == "im") return MethodId::kIm;
  if (name == "im_alasso") return MethodId::kImALasso;
  if (name == "naive") return MethodId::kNaive;
  throw ValidationError("unknown method: " + name);
}

namespace {

bool wants(const std::vector<MethodId>& methods, MethodId m) {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

nlohmann::json tuning_to_json(const TuningUsed& t) {
  return nlohmann::json{{"lambda_alpha", t.lambda_alpha},
                        {"lambda_gamma", t.lambda_gamma},
                        {"lambda_beta", t.lambda_beta},
                        {"lambda_nodewise", t.lambda_nodewise}};
}

MethodFit fit_from_sparse(const SparseCoef& coef) {
  MethodFit fit;
  fit.coef = coef.values;
  fit.support = coef.support;
  return fit;
}

BaselineSpec baseline_spec(BaselineMethod method, const PipelineTuning& tuning) {
  BaselineSpec spec;
  spec.method = method;
  spec.cv_folds = tuning.cv_folds;
  spec.cv_grid_size = tuning.cv_grid_size;
  spec.cv_range_lo = tuning.cv_range_lo;
  spec.cv_range_hi = tuning.cv_range_hi;
  spec.g_link = tuning.g_link;
  spec.b_link = tuning.b_link;
  spec.solver = tuning.solver;
  return spec;
}

}  // namespace

std::map<MethodId, MethodOutcome> fit_methods(const LabeledPanel& panel, const BasisMap& basis,
                                              const std::vector<MethodId>& methods,
                                              const PipelineTuning& tuning, double temperature,
                                              std::uint64_t seed) {
  std::map<MethodId, MethodOutcome> out;
  for (MethodId m : methods) out[m] = MethodOutcome{};
  const Index q = panel.q();

  // Shared majority knowledge source.
  std::optional<SparseCoef> majority_thr;
  std::vector<std::string> majority_warnings;
  nlohmann::json majority_tuning;
  std::string majority_error;
  if (wants(methods, MethodId::kMu) || wants(methods, MethodId::kMuMajG)) {
    try {
      PipelineTuning t = tuning;
      t.seed = derive_seed(seed, 3);
      const DebiasBundle bundle = debias_subgroup(panel, Subgroup::kMajority, basis, t);
      const std::vector<double> grid = threshold_grid(
          q, std::min(bundle.n_source, bundle.n_target), tuning.tau_multipliers);
      const double tau = stabilize_threshold(bundle.beta_deb, grid);
      majority_thr = hard_threshold(bundle.beta_deb, tau);
      majority_tuning = tuning_to_json(bundle.tuning);
      majority_tuning["tau_majority"] = tau;
      for (const auto& w : bundle.warnings) majority_warnings.push_back("majority: " + w);
    } catch (const std::exception& e) {
      majority_error = std::string("majority pipeline: ") + e.what();
    }
  }

  // Shared whole-sample minority pipeline.
  std::optional<DebiasBundle> whole;
  std::string whole_error;
  if (wants(methods, MethodId::kMuMajG) || wants(methods, MethodId::kMuMinO)) {
    try {
      PipelineTuning t = tuning;
      t.seed = derive_seed(seed, 4);
      whole = debias_subgroup(panel, Subgroup::kMinority, basis, t);
    } catch (const std::exception& e) {
      whole_error = std::string("minority pipeline: ") + e.what();
    }
  }

  for (MethodId m : methods) {
    MethodOutcome& outcome = out[m];
    try {
      switch (m) {
        case MethodId::kMu: {
          if (!majority_error.empty()) throw std::runtime_error(majority_error);
          ProtectedTransferConfig cfg;
          cfg.tuning = tuning;
          cfg.temperature = temperature;
          cfg.seed = derive_seed(seed, 5);
          cfg.majority_override = majority_thr;
          const EnsembleResult res = run_protected_transfer(panel, basis, cfg);
          MethodFit fit = fit_from_sparse(SparseCoef::from_dense(res.beta_mu));
          fit.fold_weights = {res.fold_weights[0], res.fold_weights[1]};
          fit.warnings = res.warnings;
          fit.warnings.insert(fit.warnings.end(), majority_warnings.begin(),
                              majority_warnings.end());
          fit.tuning = nlohmann::json{{"temperature", res.temperature},
                                      {"fold_tau", res.fold_tau},
                                      {"fold_tau_ktr", res.fold_tau_ktr},
                                      {"majority", majority_tuning}};
          outcome.fit = std::move(fit);
          break;
        }
        case MethodId::kMuMinO: {
          if (!whole_error.empty()) throw std::runtime_error(whole_error);
          const std::vector<double> grid = threshold_grid(
              q, std::min(whole->n_source, whole->n_target), tuning.tau_multipliers);
          const double tau = stabilize_threshold(whole->beta_deb, grid);
          MethodFit fit = fit_from_sparse(hard_threshold(whole->beta_deb, tau));
          fit.warnings = whole->warnings;
          fit.tuning = tuning_to_json(whole->tuning);
          fit.tuning["tau"] = tau;
          outcome.fit = std::move(fit);
          break;
        }
        case MethodId::kMuMajG: {
          if (!majority_error.empty()) throw std::runtime_error(majority_error);
          if (!whole_error.empty()) throw std::runtime_error(whole_error);
          const std::vector<double> grid = threshold_grid(
              q, std::min(whole->n_source, whole->n_target), tuning.tau_multipliers);
          const double tau_ktr =
              stabilize_threshold(whole->beta_deb - majority_thr->values, grid);
          MethodFit fit = fit_from_sparse(
              knowledge_transfer({whole->beta_deb, *majority_thr, tau_ktr}));
          fit.warnings = whole->warnings;
          fit.warnings.insert(fit.warnings.end(), majority_warnings.begin(),
                              majority_warnings.end());
          fit.tuning = tuning_to_json(whole->tuning);
          fit.tuning["tau_ktr"] = tau_ktr;
          fit.tuning["majority"] = majority_tuning;
          outcome.fit = std::move(fit);
          break;
        }
        case MethodId::kIw:
        case MethodId::kIwALasso:
        case MethodId::kIm:
        case MethodId::kImALasso:
        case MethodId::kNaive: {
          BaselineMethod bm = BaselineMethod::kNaive;
          std::uint64_t stream = 34;
          if (m == MethodId::kIw) {
            bm = BaselineMethod::kIw;
            stream = 30;
          } else if (m == MethodId::kIwALasso) {
            bm = BaselineMethod::kIwAdaptive;
            stream = 31;
          } else if (m == MethodId::kIm) {
            bm = BaselineMethod::kIm;
            stream = 32;
          } else if (m == MethodId::kImALasso) {
            bm = BaselineMethod::kImAdaptive;
            stream = 33;
          }
          const SparseCoef coef = fit_baseline(panel, Subgroup::kMinority, basis,
                                               baseline_spec(bm, tuning),
                                               derive_seed(seed, stream));
          outcome.fit = fit_from_sparse(coef);
          break;
        }
      }
    } catch (const std::exception& e) {
      outcome.fit.reset();
      outcome.error = e.what();
    }
  }
  return out;
}

namespace {

std::string sanitize(const std::string& s) {
  std::string out = s;
  for (char& c : out) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return out;
}

std::string join_warnings(const std::vector<std::string>& warnings, std::size_t cap = 6) {
  std::string out;
  for (std::size_t i = 0; i < warnings.size() && i < cap; ++i) {
    if (i) out += "; ";
    out += warnings[i];
  }
  if (warnings.size() > cap) out += "; (+" + std::to_string(warnings.size() - cap) + " more)";
  return sanitize(out);
}

constexpr const char* kResultsHeader =
    "sweep_param,sweep_value,replicate,seed,method,status,l2_err,l1_err,nnz,error,warnings";

std::string row_to_csv(const std::string& sweep_param, const ReplicateRow& row) {
  std::ostringstream ss;
  ss << sweep_param << ',' << format_double(row.sweep_value) << ',' << row.replicate << ','
     << row.seed << ',' << to_string(row.method) << ',' << (row.ok ? "ok" : "failed") << ','
     << (row.ok ? format_double(row.l2_err) : "NA") << ','
     << (row.ok ? format_double(row.l1_err) : "NA") << ',' << row.nnz << ','
     << sanitize(row.error) << ',' << row.warnings;
  return ss.str();
}

std::vector<std::string> split_line(const std::string& line) {
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

SimConfig cell_config(const CampaignConfig& config, double value) {
  SimConfig cfg = config.base;
  if (config.sweep_param == "n_s0") {
    cfg.n_s0 = static_cast<Index>(value);
  } else if (config.sweep_param == "t") {
    cfg.t = static_cast<Index>(value);
  } else if (!config.sweep_param.empty()) {
    throw ValidationError("campaign: unknown sweep parameter '" + config.sweep_param + "'");
  }
  return cfg;
}

}  // namespace

CampaignResult run_campaign(const CampaignConfig& config) {
  if (config.replicates < 1) throw ValidationError("campaign: replicates must be >= 1");
  if (config.methods.empty()) throw ValidationError("campaign: no methods requested");
  if (config.out_dir.empty()) throw ValidationError("campaign: output directory required");

  std::vector<double> values = config.sweep_values;
  if (values.empty()) {
    values.push_back(config.sweep_param == "t" ? static_cast<double>(config.base.t)
                                               : static_cast<double>(config.base.n_s0));
    if (config.sweep_param.empty()) values.back() = 0.0;
  }
  const Index n_values = static_cast<Index>(values.size());

  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);
  const std::string results_path = config.out_dir + "/results.csv";

  // Oracle truths, cached across sweep cells that share a generating law
  // and on disk across reruns (same seed, so identical values either way).
  CampaignResult result;
  std::map<std::tuple<int, Index, Index, Index>, TruthRecord> truth_cache;
  for (Index vi = 0; vi < n_values; ++vi) {
    const SimConfig cfg = cell_config(config, values[static_cast<std::size_t>(vi)]);
    const auto key = std::make_tuple(static_cast<int>(cfg.setting), cfg.q, cfg.p, cfg.t);
    if (!truth_cache.count(key)) {
      const auto ordinal = static_cast<std::uint64_t>(truth_cache.size());
      const std::uint64_t seed = derive_seed(config.root_seed, 90000 + ordinal);
      const std::string cache_path =
          config.out_dir + "/truth_S" + std::to_string(static_cast<int>(cfg.setting)) + "_" +
          std::to_string(cfg.q) + "_" + std::to_string(cfg.p) + "_" + std::to_string(cfg.t) +
          "_" + std::to_string(config.n_oracle) + "_" + std::to_string(seed) + ".json";
      bool loaded = false;
      if (fs::exists(cache_path)) {
        try {
          nlohmann::json j;
          std::ifstream in(cache_path);
          in >> j;
          TruthRecord record;
          record.how = TruthRecord::How::kOracleMonteCarlo;
          record.n_oracle = j.at("n_oracle").get<Index>();
          auto as_vector = [](const nlohmann::json& arr) {
            const auto v = arr.get<std::vector<double>>();
            return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
          };
          record.beta_bar_minority = as_vector(j.at("beta_bar_minority"));
          record.beta_bar_majority = as_vector(j.at("beta_bar_majority"));
          record.se_minority = as_vector(j.at("se_minority"));
          record.se_majority = as_vector(j.at("se_majority"));
          truth_cache[key] = std::move(record);
          loaded = record.n_oracle == config.n_oracle &&
                   truth_cache[key].beta_bar_minority.size() == cfg.q;
        } catch (const std::exception&) {
          loaded = false;
        }
      }
      if (!loaded) {
        const TruthRecord record = compute_truth(cfg, config.n_oracle, seed);
        truth_cache[key] = record;
        nlohmann::json j;
        j["n_oracle"] = record.n_oracle;
        auto to_array = [](const Vector& v) {
          return std::vector<double>(v.data(), v.data() + v.size());
        };
        j["beta_bar_minority"] = to_array(record.beta_bar_minority);
        j["beta_bar_majority"] = to_array(record.beta_bar_majority);
        j["se_minority"] = to_array(record.se_minority);
        j["se_majority"] = to_array(record.se_majority);
        write_text_file(cache_path, j.dump() + "\n");
      }
    }
    result.truths[values[static_cast<std::size_t>(vi)]] = truth_cache[key];
  }

  // Resume: parse completed replicates from an existing results file.
  std::map<std::pair<Index, Index>, std::map<std::string, ReplicateRow>> existing;
  if (fs::exists(results_path)) {
    std::ifstream in(results_path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> f = split_line(line);
      if (f.size() != 11) break;  // truncated tail from an interrupted run
      try {
        ReplicateRow row;
        row.sweep_value = std::stod(f[1]);
        row.replicate = std::stol(f[2]);
        row.seed = std::stoull(f[3]);
        row.method = method_from_string(f[4]);
        row.ok = f[5] == "ok";
        row.l2_err = f[6] == "NA" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[6]);
        row.l1_err = f[7] == "NA" ? std::numeric_limits<double>::quiet_NaN() : std::stod(f[7]);
        row.nnz = std::stol(f[8]);
        row.error = f[9];
        row.warnings = f[10];
        Index vi = -1;
        for (Index k = 0; k < n_values; ++k) {
          if (format_double(values[static_cast<std::size_t>(k)]) == f[1]) vi = k;
        }
        if (vi < 0 || row.replicate < 0 || row.replicate >= config.replicates) continue;
        existing[{vi, row.replicate}][to_string(row.method)] = row;
      } catch (const std::exception&) {
        break;
      }
    }
  }

  struct Job {
    Index vi = 0;
    Index replicate = 0;
  };
  std::vector<Job> jobs;
  std::vector<std::vector<ReplicateRow>> slots(
      static_cast<std::size_t>(n_values * config.replicates));
  auto slot_of = [&](Index vi, Index rep) -> std::vector<ReplicateRow>& {
    return slots[static_cast<std::size_t>(vi * config.replicates + rep)];
  };

  for (Index vi = 0; vi < n_values; ++vi) {
    for (Index rep = 0; rep < config.replicates; ++rep) {
      const auto it = existing.find({vi, rep});
      bool complete = it != existing.end();
      if (complete) {
        for (MethodId m : config.methods) {
          if (!it->second.count(to_string(m))) complete = false;
        }
      }
      if (complete) {
        for (MethodId m : config.methods) slot_of(vi, rep).push_back(it->second.at(to_string(m)));
      } else {
        jobs.push_back({vi, rep});
      }
    }
  }

  std::ofstream append(results_path, std::ios::app);
  if (!fs::exists(results_path) || fs::file_size(results_path) == 0) {
    append << kResultsHeader << "\n";
  }
  std::mutex append_mutex;

  parallel_for(static_cast<Index>(jobs.size()), config.workers, [&](Index k) {
    const Job job = jobs[static_cast<std::size_t>(k)];
    const double value = values[static_cast<std::size_t>(job.vi)];
    const SimConfig cfg = cell_config(config, value);
    const TruthRecord& truth = result.truths.at(value);
    const std::uint64_t rep_seed =
        derive_seed(derive_seed(config.root_seed, 50000 + static_cast<std::uint64_t>(job.vi)),
                    static_cast<std::uint64_t>(job.replicate));

    std::vector<ReplicateRow>& rows = slot_of(job.vi, job.replicate);
    auto na_all = [&](const std::string& error) {
      for (MethodId m : config.methods) {
        ReplicateRow row;
        row.sweep_value = value;
        row.replicate = job.replicate;
        row.seed = rep_seed;
        row.method = m;
        row.ok = false;
        row.error = error;
        rows.push_back(row);
      }
    };

    try {
      SimConfig gen_cfg = cfg;
      gen_cfg.seed = derive_seed(rep_seed, 0);
      GenerationMeta meta;
      const LabeledPanel panel = generate_panel(gen_cfg, &meta);
      const BasisMap basis = BasisMap::identity(panel.q(), panel.p());

      if (config.emit_panels) {
        const std::string stem = config.out_dir + "/panel_v" + std::to_string(job.vi) + "_r" +
                                 std::to_string(job.replicate);
        write_panel_csv(panel, stem + ".csv");
        nlohmann::json sidecar;
        sidecar["setting"] = cfg.setting == SimSetting::kI   ? "I"
                             : cfg.setting == SimSetting::kII ? "II"
                                                              : "III";
        sidecar["q"] = cfg.q;
        sidecar["p"] = cfg.p;
        sidecar["t"] = cfg.t;
        sidecar["n_s1"] = cfg.n_s1;
        sidecar["n_s0"] = cfg.n_s0;
        sidecar["n_t1"] = cfg.n_t1;
        sidecar["n_t0"] = cfg.n_t0;
        sidecar["seed"] = gen_cfg.seed;
        sidecar["candidates"] = meta.candidates;
        sidecar["acceptance_rate"] = meta.acceptance_rate;
        sidecar["n_oracle"] = truth.n_oracle;
        sidecar["beta_bar_minority"] = std::vector<double>(
            truth.beta_bar_minority.data(),
            truth.beta_bar_minority.data() + truth.beta_bar_minority.size());
        sidecar["beta_bar_majority"] = std::vector<double>(
            truth.beta_bar_majority.data(),
            truth.beta_bar_majority.data() + truth.beta_bar_majority.size());
        sidecar["se_minority"] = std::vector<double>(
            truth.se_minority.data(), truth.se_minority.data() + truth.se_minority.size());
        sidecar["se_majority"] = std::vector<double>(
            truth.se_majority.data(), truth.se_majority.data() + truth.se_majority.size());
        write_text_file(stem + ".meta.json", sidecar.dump(2) + "\n");
      }

      const auto outcomes = fit_methods(panel, basis, config.methods, config.tuning,
                                        config.temperature, derive_seed(rep_seed, 1));
      for (MethodId m : config.methods) {
        const MethodOutcome& outcome = outcomes.at(m);
        ReplicateRow row;
        row.sweep_value = value;
        row.replicate = job.replicate;
        row.seed = rep_seed;
        row.method = m;
        if (outcome.fit) {
          row.ok = true;
          row.l2_err = coef_error(outcome.fit->coef, truth.beta_bar_minority, Norm::kL2);
          row.l1_err = coef_error(outcome.fit->coef, truth.beta_bar_minority, Norm::kL1);
          row.nnz = static_cast<Index>(outcome.fit->support.size());
          row.warnings = join_warnings(outcome.fit->warnings);
        } else {
          row.ok = false;
          row.error = outcome.error;
        }
        rows.push_back(row);
      }
    } catch (const std::exception& e) {
      na_all(e.what());
    }

    {
      std::lock_guard<std::mutex> lock(append_mutex);
      for (const ReplicateRow& row : rows) {
        append << row_to_csv(config.sweep_param, row) << "\n";
      }
      append.flush();
    }
  });
  append.close();

  // Canonical rewrite plus summaries (byte-identical across reruns and
  // worker counts).
  std::ostringstream canonical;
  canonical << kResultsHeader << "\n";
  for (Index vi = 0; vi < n_values; ++vi) {
    for (Index rep = 0; rep < config.replicates; ++rep) {
      for (const ReplicateRow& row : slot_of(vi, rep)) {
        canonical << row_to_csv(config.sweep_param, row) << "\n";
        result.rows.push_back(row);
      }
    }
  }
  write_text_file(results_path, canonical.str());

  for (Index vi = 0; vi < n_values; ++vi) {
    const double value = values[static_cast<std::size_t>(vi)];
    for (MethodId m : config.methods) {
      SummaryCell cell;
      double sum = 0.0, sumsq = 0.0;
      for (Index rep = 0; rep < config.replicates; ++rep) {
        for (const ReplicateRow& row : slot_of(vi, rep)) {
          if (row.method != m) continue;
          if (row.ok) {
            ++cell.n_ok;
            sum += row.l2_err;
            sumsq += row.l2_err * row.l2_err;
          } else {
            ++cell.n_failed;
          }
        }
      }
      if (cell.n_ok > 0) {
        const double n = static_cast<double>(cell.n_ok);
        cell.mean_l2 = sum / n;
        if (cell.n_ok > 1) {
          const double var = std::max(0.0, (sumsq - n * cell.mean_l2 * cell.mean_l2) / (n - 1.0));
          cell.se_l2 = std::sqrt(var / n);
        }
      }
      result.summary[{value, m}] = cell;
    }
  }

  // summary.json: the flat per-method schema for single-cell campaigns.
  nlohmann::json summary_json;
  auto cell_json = [](const SummaryCell& cell) {
    nlohmann::json j;
    j["mean_l2"] = cell.mean_l2;
    j["se_l2"] = cell.se_l2;
    j["n_ok"] = cell.n_ok;
    j["n_failed"] = cell.n_failed;
    return j;
  };
  if (config.sweep_param.empty() && n_values == 1) {
    for (MethodId m : config.methods) {
      summary_json[to_string(m)] = cell_json(result.summary.at({values[0], m}));
    }
  } else {
    summary_json["sweep_param"] = config.sweep_param;
    nlohmann::json cells = nlohmann::json::object();
    for (Index vi = 0; vi < n_values; ++vi) {
      const double value = values[static_cast<std::size_t>(vi)];
      nlohmann::json per_method = nlohmann::json::object();
      for (MethodId m : config.methods) {
        per_method[to_string(m)] = cell_json(result.summary.at({value, m}));
      }
      cells[format_double(value)] = std::move(per_method);
    }
    summary_json["cells"] = std::move(cells);
  }
  write_text_file(config.out_dir + "/summary.json", summary_json.dump(2) + "\n");

  std::ostringstream summary_csv;
  summary_csv << "sweep_param,sweep_value,method,mean_l2,se_l2,n_ok,n_failed\n";
  for (Index vi = 0; vi < n_values; ++vi) {
    const double value = values[static_cast<std::size_t>(vi)];
    for (MethodId m : config.methods) {
      const SummaryCell& cell = result.summary.at({value, m});
      summary_csv << config.sweep_param << ',' << format_double(value) << ',' << to_string(m)
                  << ',' << format_double(cell.mean_l2) << ',' << format_double(cell.se_l2) << ','
                  << cell.n_ok << ',' << cell.n_failed << "\n";
    }
  }
  write_text_file(config.out_dir + "/summary.csv", summary_csv.str());

  std::ostringstream table;
  table << "mean l2 error (se), by method";
  if (!config.sweep_param.empty()) table << " and " << config.sweep_param;
  table << "\n\n";
  table << "method";
  for (Index vi = 0; vi < n_values; ++vi) {
    table << "\t" << format_double(values[static_cast<std::size_t>(vi)]);
  }
  table << "\n";
  for (MethodId m : config.methods) {
    table << to_string(m);
    for (Index vi = 0; vi < n_values; ++vi) {
      const SummaryCell& cell = result.summary.at({values[static_cast<std::size_t>(vi)], m});
      table << "\t" << format_double(cell.mean_l2);
      if (cell.n_ok > 1) table << " (" << format_double(cell.se_l2) << ")";
      if (cell.n_failed > 0) table << " [" << cell.n_failed << " failed]";
    }
    table << "\n";
  }
  write_text_file(config.out_dir + "/summary.txt", table.str());

  return result;
}

PipelineTuning tuning_from_json(const nlohmann::json& j) {
  PipelineTuning t;
  if (j.contains("cv_folds")) t.cv_folds = j.at("cv_folds").get<Index>();
  if (j.contains("cv_grid_size")) t.cv_grid_size = j.at("cv_grid_size").get<Index>();
  if (j.contains("cv_range")) {
    const auto range = j.at("cv_range").get<std::vector<double>>();
    if (range.size() != 2) throw ValidationError("tuning.cv_range must be [lo, hi]");
    t.cv_range_lo = range[0];
    t.cv_range_hi = range[1];
  }
  if (j.contains("nodewise_scale")) t.nodewise_scale = j.at("nodewise_scale").get<double>();
  if (j.contains("nuisance_lambda_inflation")) {
    t.nuisance_lambda_inflation = j.at("nuisance_lambda_inflation").get<double>();
  }
  if (j.contains("tau_multipliers")) {
    t.tau_multipliers = j.at("tau_multipliers").get<std::vector<double>>();
  }
  if (j.contains("lambda_alpha") && !j.at("lambda_alpha").is_null()) {
    t.lambda_alpha = j.at("lambda_alpha").get<double>();
  }
  if (j.contains("lambda_gamma") && !j.at("lambda_gamma").is_null()) {
    t.lambda_gamma = j.at("lambda_gamma").get<double>();
  }
  if (j.contains("lambda_beta") && !j.at("lambda_beta").is_null()) {
    t.lambda_beta = j.at("lambda_beta").get<double>();
  }
  if (j.contains("lambda_nodewise") && !j.at("lambda_nodewise").is_null()) {
    t.lambda_nodewise = j.at("lambda_nodewise").get<double>();
  }
  if (j.contains("g_link")) t.g_link = link_from_string(j.at("g_link").get<std::string>());
  if (j.contains("b_link")) t.b_link = link_from_string(j.at("b_link").get<std::string>());
  if (j.contains("threads")) t.threads = j.at("threads").get<Index>();
  if (j.contains("solver")) {
    const auto& s = j.at("solver");
    if (s.contains("max_iter")) t.solver.max_iter = s.at("max_iter").get<Index>();
    if (s.contains("tol")) t.solver.tol = s.at("tol").get<double>();
    if (s.contains("kkt_tol")) t.solver.kkt_tol = s.at("kkt_tol").get<double>();
  }
  return t;
}

CampaignConfig campaign_from_json(const nlohmann::json& j) {
  CampaignConfig c;
  const auto& sim = j.at("sim");
  const std::string setting = sim.at("setting").get<std::string>();
  if (setting == "I") {
    c.base.setting = SimSetting::kI;
  } else if (setting == "II") {
    c.base.setting = SimSetting::kII;
  } else if (setting == "III") {
    c.base.setting = SimSetting::kIII;
  } else {
    throw ValidationError("sim.setting must be I, II, or III");
  }
  c.base.q = sim.at("q").get<Index>();
  c.base.p = sim.at("p").get<Index>();
  c.base.t = sim.value("t", Index{0});
  c.base.n_s1 = sim.at("n_s1").get<Index>();
  c.base.n_s0 = sim.at("n_s0").get<Index>();
  c.base.n_t1 = sim.at("n_t1").get<Index>();
  c.base.n_t0 = sim.at("n_t0").get<Index>();

  if (j.contains("sweep")) {
    c.sweep_param = j.at("sweep").at("param").get<std::string>();
    c.sweep_values = j.at("sweep").at("values").get<std::vector<double>>();
  }
  c.replicates = j.value("replicates", Index{1});
  for (const auto& name : j.value("methods", std::vector<std::string>{"mu"})) {
    c.methods.push_back(method_from_string(name));
  }
  c.root_seed = j.value("seed", std::uint64_t{1});
  c.workers = j.value("workers", Index{1});
  c.out_dir = j.value("out", std::string{});
  c.temperature = j.value("temperature", 5.0);
  c.n_oracle = j.value("n_oracle", Index{200000});
  c.emit_panels = j.value("emit_panels", false);
  if (j.contains("tuning")) c.tuning = tuning_from_json(j.at("tuning"));
  return c;
}

}  // namespace makeup
