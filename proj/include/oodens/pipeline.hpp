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

// Configuration-driven commands behind the `oodens` executable.
//
// Precedence, highest first: command-line flags, the TOML file, built-in
// defaults. Relative `root` and `output` paths resolve against the directory
// of the configuration file.
//
// Output layout under `output`:
//
//   stats/                        fitted detector statistics
//   gmm_<ensemble>.json, *.npy    fitted mixtures
//   components_<ensemble>.json    component-selection trace
//   scores/<dataset>/scores_<ensemble>.{npy,json}
//   report.json, report.csv
//   distributions/                optional per-task score dumps
//   selection.json, correlation.npy
//   provenance_<command>.json     in every directory written by a command

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "oodens/ensemble.hpp"
#include "oodens/gmm.hpp"
#include "oodens/scores.hpp"
#include "oodens/stats.hpp"

namespace oodens {

inline constexpr const char* kToolVersion = "0.1.0";

struct GmmConfig {
  std::vector<int> candidates = DefaultComponentCandidates();
  double tol = 1e-6;
  double regularization = 1e-6;
  int max_iter = 500;
  int restarts = 3;
  double heldout_fraction = 0.1;
};

struct DetectorConfig {
  double temperature = 1.0;
  double odin_temperature = 1000.0;
  double gradnorm_temperature = 1.0;
  double dice_keep = 0.7;
  double react_percentile = 90.0;
  int vim_dim = 0;
  double lambda_scale = 1e-6;
};

struct SelectionConfig {
  double corr_threshold = 0.95;
  double near_random_low = 0.45;
  double near_random_high = 0.55;
};

struct EvaluateConfig {
  /// Member score names and ensemble ids; empty means every score plus every
  /// configured ensemble.
  std::vector<std::string> scorers;
  bool dump_distributions = false;
  /// Seconds per forward pass; > 0 enables the timing table.
  double forward_pass_seconds = 0.0;
};

struct PipelineConfig {
  std::filesystem::path config_path;
  std::string config_text;  // raw bytes, hashed into provenance
  std::filesystem::path root;
  std::filesystem::path output;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string train_dataset;
  std::string validation_dataset;
  std::string test_dataset;
  std::vector<std::string> ood_datasets;
  std::vector<EnsembleDefinition> ensembles;
  GmmConfig gmm;
  DetectorConfig detectors;
  SelectionConfig selection;
  EvaluateConfig evaluate;

  ScoreParams score_params() const;
  StatsOptions stats_options() const;
  GmmFitOptions gmm_options() const;
  const EnsembleDefinition& ensemble(const std::string& id) const;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::filesystem::path> output;
  std::optional<std::filesystem::path> root;
};

/// Parses TOML text; `origin` is the file the text came from. Throws
/// ConfigError on syntax errors, unknown keys and out-of-range values.
PipelineConfig ParseConfig(const std::string& text, const std::filesystem::path& origin,
                           const ConfigOverrides& overrides = {});
PipelineConfig LoadConfig(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// Checks that the root, the model head and every referenced dataset exist.
void CheckConfigInputs(const PipelineConfig& config);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string ConfigHash(const std::string& text);

void CmdFit(const PipelineConfig& config);
/// Empty `dataset_id` scores the test set and every OOD set; empty
/// `ensemble_id` uses every configured ensemble.
void CmdScore(const PipelineConfig& config, const std::string& dataset_id = {},
              const std::string& ensemble_id = {});
void CmdEvaluate(const PipelineConfig& config);
void CmdSelect(const PipelineConfig& config);
/// Re-renders `report.json` as "table", "csv" or "json".
void CmdReport(const PipelineConfig& config, const std::string& format, std::ostream& out);

}  // namespace oodens
