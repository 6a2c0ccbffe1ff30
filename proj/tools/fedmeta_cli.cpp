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

// Command-line experiment runner.
//
//   fedmeta run <config> [--seed N]
//   fedmeta compare <config> --methods fedavg,maml [--seed N]
//   fedmeta gen-data <config> [--seed N]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fedmeta/fedmeta.hpp"

namespace {

constexpr int kConfigExit = 1;
constexpr int kRuntimeExit = 2;

fedmeta::ExperimentSpecFile load(const std::string& path, std::optional<std::uint64_t> seed) {
  auto cfg = fedmeta::parse_config(path);
  if (seed) cfg.method.master_seed = *seed;
  return cfg;
}

std::vector<fedmeta::Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<fedmeta::Method> out;
  for (const auto& n : names) {
    auto m = fedmeta::parse_method(n);
    if (!m) throw fedmeta::ConfigError(fmt::format("--methods: unknown method '{}'", n));
    out.push_back(*m);
  }
  if (out.empty()) throw fedmeta::ConfigError("--methods: at least one method is required");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated meta-learning simulator"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Override method.master_seed");

  std::string run_config, compare_config, gen_config;
  std::vector<std::string> methods;

  auto* run_cmd = app.add_subcommand("run", "Run one experiment and write CSV/JSON metrics");
  run_cmd->add_option("config", run_config, "Experiment config file")->required();

  auto* compare_cmd = app.add_subcommand("compare", "Run several methods on shared data and seeds");
  compare_cmd->add_option("config", compare_config, "Experiment config file")->required();
  compare_cmd->add_option("--methods", methods, "Comma-separated methods")->delimiter(',')->required();

  auto* gen_cmd = app.add_subcommand("gen-data", "Write the synthetic dataset as LEAF JSON");
  gen_cmd->add_option("config", gen_config, "Experiment config file")->required();

  for (auto* sub : {run_cmd, compare_cmd, gen_cmd}) sub->add_option("--seed", seed, "Override method.master_seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*run_cmd) {
      const auto out = fedmeta::run(load(run_config, seed));
      const auto& acc = out.result.final_test.accuracy;
      std::cout << fmt::format("{}: test accuracy {}\n", fedmeta::to_string(out.result.final_state.method),
                               acc ? fmt::format("{:.4f}", *acc) : std::string("n/a"));
      if (!out.csv_path.empty()) std::cout << "wrote " << out.csv_path.string() << "\n";
      if (!out.json_path.empty()) std::cout << "wrote " << out.json_path.string() << "\n";
    } else if (*compare_cmd) {
      const auto base = load(compare_config, seed);
      const auto out = fedmeta::compare(fedmeta::method_variants(base, parse_methods(methods)));
      for (const auto& row : out.summary["methods"]) {
        const auto& acc = row["test_accuracy"];
        std::cout << fmt::format("{:<14} test accuracy {}\n", row["label"].get<std::string>(),
                                 acc.is_null() ? std::string("n/a") : fmt::format("{:.4f}", acc.get<double>()));
      }
      std::cout << "wrote " << out.json_path.string() << "\n";
    } else if (*gen_cmd) {
      std::cout << "wrote " << fedmeta::gen_data(load(gen_config, seed)).string() << "\n";
    }
  } catch (const fedmeta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeExit;
  }
  return 0;
}
