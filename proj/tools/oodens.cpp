// Copyright 2026 The oodens Authors
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

// oodens: fit, score, evaluate and select OOD detectors from feature dumps.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "oodens/errors.hpp"
#include "oodens/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc out-of-distribution detection toolkit"};
  app.set_version_flag("--version", oodens::kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> output;
  std::optional<std::string> root;
  app.add_option("--config", config_path, "TOML configuration file")->required();
  app.add_option("--seed", seed, "Override the configured seed");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::Range(1, 1024));
  app.add_option("--output", output, "Override the output directory");
  app.add_option("--root", root, "Override the dataset root");

  auto* fit = app.add_subcommand("fit", "Fit detector statistics and ensemble mixtures");
  auto* score = app.add_subcommand("score", "Dump member score matrices");
  std::string dataset, ensemble;
  score->add_option("--dataset", dataset, "Dataset id (default: test and OOD sets)");
  score->add_option("--ensemble", ensemble, "Ensemble id (default: all configured)");
  auto* evaluate = app.add_subcommand("evaluate", "Run the DSD and ED tasks and write reports");
  auto* select = app.add_subcommand("select", "Select ensemble members on validation data");
  auto* report = app.add_subcommand("report", "Print the evaluation report");
  std::string format = "table";
  report->add_option("--format", format, "table, csv or json")
      ->check(CLI::IsMember({"table", "csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    oodens::ConfigOverrides overrides;
    overrides.seed = seed;
    overrides.jobs = jobs;
    if (output) overrides.output = *output;
    if (root) overrides.root = *root;
    const oodens::PipelineConfig config = oodens::LoadConfig(config_path, overrides);

    if (fit->parsed()) oodens::CmdFit(config);
    if (score->parsed()) oodens::CmdScore(config, dataset, ensemble);
    if (evaluate->parsed()) oodens::CmdEvaluate(config);
    if (select->parsed()) oodens::CmdSelect(config);
    if (report->parsed()) oodens::CmdReport(config, format, std::cout);
  } catch (const oodens::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const oodens::FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const oodens::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const oodens::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
