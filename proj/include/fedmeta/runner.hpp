// Copyright 2026 The fedmeta Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "fedmeta/config.hpp"
#include "fedmeta/data.hpp"
#include "fedmeta/fedsim.hpp"
#include "fedmeta/metrics.hpp"

namespace fedmeta {

inline constexpr std::string_view kCsvHeader =
    "round,method,support_loss,query_loss,test_accuracy,cum_flops,cum_up_bytes,cum_down_bytes";

/// Dataset named by the config: generated or loaded, inactive clients
/// filtered, clients partitioned into train/val/test.
inline FederatedDataset build_dataset(const ExperimentSpecFile& cfg) {
  FederatedDataset raw;
  if (cfg.dataset.source == DatasetSource::Synthetic) {
    SyntheticParams sp = cfg.dataset.synthetic;
    sp.seed = cfg.data_seed();
    raw = generate_synthetic_noniid(sp);
  } else {
    raw = load_leaf_json(cfg.dataset.path, cfg.dataset.classes);
  }
  return split_clients(filter_inactive(raw, cfg.dataset.min_records), cfg.dataset.fractions,
                       derive_seed(cfg.data_seed(), Stream::ClientPartition));
}

inline ModelSpec model_spec_for(const ExperimentSpecFile& cfg, const FederatedDataset& ds) {
  ModelSpec spec;
  spec.architecture = cfg.model.architecture;
  spec.input_dim = ds.feature_dim;
  spec.classes = ds.class_count;
  spec.hidden = cfg.model.architecture == Architecture::MLP1 ? cfg.model.hidden : 0;
  spec.init = cfg.model.init;
  validate(spec);
  return spec;
}

namespace detail {

inline std::string csv_number(double v) { return std::isfinite(v) ? fmt::format("{}", v) : std::string(); }

inline nlohmann::json cost_json(const CostTotals& c) {
  return {{"flops", c.flops}, {"uplink_bytes", c.uplink_bytes}, {"downlink_bytes", c.downlink_bytes}};
}

inline nlohmann::json config_json(const ExperimentSpecFile& cfg) {
  // Mirrors the INI layout so that the summary carries the exact resolved config.
  nlohmann::json out = nlohmann::json::object();
  std::string section;
  std::istringstream in(to_config_text(cfg));
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      out[section] = nlohmann::json::object();
      continue;
    }
    const auto eq = line.find(" = ");
    out[section][line.substr(0, eq)] = line.substr(eq + 3);
  }
  out["data_seed"] = cfg.data_seed();
  return out;
}

}  // namespace detail

inline std::string csv_row(const RoundRecord& r) {
  return fmt::format("{},{},{},{},{},{},{},{}", r.round, to_string(r.method),
                     detail::csv_number(r.mean_support_loss), detail::csv_number(r.mean_query_loss),
                     r.test_accuracy ? detail::csv_number(*r.test_accuracy) : std::string(),
                     r.cumulative.flops, r.cumulative.uplink_bytes, r.cumulative.downlink_bytes);
}

inline std::string to_csv(const std::vector<RoundRecord>& records) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : records) {
    out += csv_row(r);
    out += '\n';
  }
  return out;
}

inline nlohmann::json summary_json(const ExperimentSpecFile& cfg, const ExperimentResult& res) {
  nlohmann::json j;
  j["config"] = detail::config_json(cfg);
  j["method"] = std::string(to_string(cfg.method.method));
  j["aggregation"] = std::string(to_string(cfg.method.resolved_aggregation()));

  nlohmann::json fin;
  fin["test_accuracy"] = res.final_test.accuracy ? nlohmann::json(*res.final_test.accuracy) : nlohmann::json();
  fin["val_accuracy"] = res.final_val && res.final_val->accuracy ? nlohmann::json(*res.final_val->accuracy)
                                                                : nlohmann::json();
  fin["excluded_test_clients"] = res.final_test.excluded;
  nlohmann::json per_client = nlohmann::json::array();
  for (const auto& c : res.final_test.clients)
    per_client.push_back({{"client", c.client_id}, {"correct", c.correct}, {"total", c.total}});
  fin["test_clients"] = std::move(per_client);
  j["final"] = std::move(fin);

  const auto accs = res.final_test.per_client_accuracy();
  if (!accs.empty()) {
    const FairnessReport f = fairness_stats(accs);
    j["fairness"] = {{"mean", f.mean},
                     {"variance", f.variance},
                     {"histogram", f.histogram},
                     {"bandwidth", f.bandwidth},
                     {"kde_grid", f.kde_grid},
                     {"kde_density", f.kde_density}};
  } else {
    j["fairness"] = nullptr;
  }

  nlohmann::json targets = nlohmann::json::array();
  for (double t : cfg.output.targets) {
    const auto hit = rounds_to_target(res.records, t);
    if (hit)
      targets.push_back({{"target", t}, {"reached", true}, {"round", hit->round}, {"cost", detail::cost_json(hit->cost)}});
    else
      targets.push_back({{"target", t}, {"reached", false}});
  }
  j["rounds_to_target"] = std::move(targets);
  j["total_cost"] = detail::cost_json(res.ledger.totals());

  nlohmann::json sampled = nlohmann::json::array();
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& r : res.records) {
    sampled.push_back(r.sampled);
    for (const auto& s : r.skipped) skipped.push_back({{"round", r.round}, {"client", s.client_id}, {"reason", s.reason}});
  }
  j["sampled_clients"] = std::move(sampled);
  j["skipped_clients"] = std::move(skipped);
  return j;
}

struct RunOutput {
  ExperimentResult result;
  nlohmann::json summary;
  std::filesystem::path csv_path;
  std::filesystem::path json_path;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

/// Runs one experiment on a prepared dataset and writes
/// `<label>_rounds.csv` and `<label>_summary.json` under the output
/// directory.
inline RunOutput run_on(const ExperimentSpecFile& cfg, const FederatedDataset& dataset,
                        const std::string& label) {
  validate(cfg);
  const ModelSpec spec = model_spec_for(cfg, dataset);
  RunOutput out;
  out.result = run_experiment(cfg.method, spec, dataset);
  out.summary = summary_json(cfg, out.result);
  const std::filesystem::path dir(cfg.output.directory);
  std::filesystem::create_directories(dir);
  if (cfg.output.csv) {
    out.csv_path = dir / (label + "_rounds.csv");
    write_text(out.csv_path, to_csv(out.result.records));
  }
  if (cfg.output.json) {
    out.json_path = dir / (label + "_summary.json");
    write_text(out.json_path, out.summary.dump(2) + "\n");
  }
  return out;
}

inline RunOutput run(const ExperimentSpecFile& cfg) {
  validate(cfg);
  return run_on(cfg, build_dataset(cfg), std::string(to_string(cfg.method.method)));
}

/// Copies of `base` that differ only in the method name.
inline std::vector<ExperimentSpecFile> method_variants(const ExperimentSpecFile& base,
                                                       const std::vector<Method>& methods) {
  std::vector<ExperimentSpecFile> out;
  for (Method m : methods) {
    ExperimentSpecFile c = base;
    c.method.method = m;
    out.push_back(std::move(c));
  }
  return out;
}

struct CompareOutput {
  std::vector<RunOutput> runs;
  nlohmann::json summary;
  std::filesystem::path json_path;
};

/// Runs several method configurations on one shared dataset, client
/// partition, support/query division and client-sampling stream.
inline CompareOutput compare(const std::vector<ExperimentSpecFile>& configs) {
  if (configs.empty()) throw ConfigError("compare: no configurations");
  const ExperimentSpecFile& first = configs.front();
  for (const auto& c : configs) {
    validate(c);
    if (!(c.dataset == first.dataset) || !(c.model == first.model) || !(c.output == first.output))
      throw ConfigError("compare: configurations may differ only in the [method] block");
    if (c.method.master_seed != first.method.master_seed)
      throw ConfigError("compare: method.master_seed must be shared so client sampling matches");
  }
  const FederatedDataset dataset = build_dataset(first);

  CompareOutput out;
  std::map<std::string, int> seen;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : configs) {
    std::string label(to_string(c.method.method));
    if (const int k = ++seen[label]; k > 1) label += fmt::format("_{}", k);
    RunOutput r = run_on(c, dataset, label);
    nlohmann::json row;
    row["label"] = label;
    row["method"] = r.summary["method"];
    row["test_accuracy"] = r.summary["final"]["test_accuracy"];
    row["val_accuracy"] = r.summary["final"]["val_accuracy"];
    row["fairness"] = r.summary["fairness"].is_null()
                          ? nlohmann::json()
                          : nlohmann::json{{"mean", r.summary["fairness"]["mean"]},
                                           {"variance", r.summary["fairness"]["variance"]}};
    row["rounds_to_target"] = r.summary["rounds_to_target"];
    row["total_cost"] = r.summary["total_cost"];
    rows.push_back(std::move(row));
    out.runs.push_back(std::move(r));
  }
  for (const auto& r : out.runs)
    if (r.summary["sampled_clients"] != out.runs.front().summary["sampled_clients"])
      throw ProtocolError("compare: client sampling diverged between methods");
  out.summary["methods"] = std::move(rows);
  out.summary["shared_sampled_clients"] = out.runs.front().summary["sampled_clients"];
  const std::filesystem::path dir(first.output.directory);
  std::filesystem::create_directories(dir);
  out.json_path = dir / "comparison.json";
  write_text(out.json_path, out.summary.dump(2) + "\n");
  return out;
}

/// Writes the (unsplit, unfiltered) synthetic dataset as LEAF JSON.
inline std::filesystem::path gen_data(const ExperimentSpecFile& cfg) {
  validate(cfg);
  if (cfg.dataset.source != DatasetSource::Synthetic)
    throw ConfigError("dataset.source: gen-data needs source = synthetic");
  SyntheticParams sp = cfg.dataset.synthetic;
  sp.seed = cfg.data_seed();
  const std::filesystem::path dir(cfg.output.directory);
  std::filesystem::create_directories(dir);
  const auto path = dir / "dataset.json";
  write_leaf_json(generate_synthetic_noniid(sp), path);
  return path;
}

}  // namespace fedmeta
