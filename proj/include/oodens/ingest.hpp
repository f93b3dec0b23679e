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

// On-disk dataset container and the in-memory bundle it loads into.
//
// Layout of a dataset root:
//
//   <root>/model.json, head_weight.npy (C x D), head_bias.npy (C)
//   <root>/<dataset_id>/manifest.json
//   <root>/<dataset_id>/logits.npy            N x C   float32
//   <root>/<dataset_id>/labels.npy            N       int64 (-1 = unknown)
//   <root>/<dataset_id>/predictions.npy       N       int64
//   <root>/<dataset_id>/sample_ids.npy        N       int64
//   <root>/<dataset_id>/origin_ids.npy        N       int64 (adversarial only)
//   <root>/<dataset_id>/features_<layer>.npy  N x D   float32
//   <root>/<dataset_id>/odin_logits.npy       N x C   float32 (optional)
//   <root>/<dataset_id>/view_features.npy     N x V x D float32 (optional)

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace oodens {

enum class ShiftType {
  kInDistribution,
  kNovelClasses,
  kAdversarial,
  kSynthetic,
  kCorruption,
  kMultiLabel,
};

std::string_view ToString(ShiftType type);
ShiftType ParseShiftType(std::string_view name);

struct DatasetManifest {
  std::string dataset_id;
  ShiftType shift_type = ShiftType::kInDistribution;
  std::size_t record_count = 0;
  std::vector<std::string> layer_names;
  int class_count = 0;
  bool has_aux_odin = false;
  bool has_aux_views = false;
  int view_count = 0;
  std::optional<std::string> origin_dataset_id;
  std::optional<std::set<int>> label_restriction;
};

struct SampleRecord {
  std::int64_t sample_id = 0;
  std::optional<std::int64_t> origin_id;
  int label = -1;
  int prediction = 0;
  Eigen::VectorXd logits;
  std::map<std::string, Eigen::VectorXd> features;
  std::optional<Eigen::VectorXd> odin_logits;
  /// One row per transformed view.
  std::optional<Eigen::MatrixXd> view_features;

  bool correct() const { return label >= 0 && prediction == label; }
};

struct DatasetBundle {
  DatasetManifest manifest;
  std::vector<SampleRecord> records;
  std::vector<std::string> warnings;
};

/// Final linear layer of the classifier: logits = weight * f + bias.
struct ModelHead {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
  std::string penultimate_layer;

  int class_count() const { return static_cast<int>(weight.rows()); }
  int feature_dim() const { return static_cast<int>(weight.cols()); }
};

/// Index of the largest entry; ties go to the lowest index.
int ArgMax(const Eigen::VectorXd& values);

DatasetManifest ParseManifest(const std::string& json_text, const std::string& origin);
std::string SerializeManifest(const DatasetManifest& manifest);

/// Loads and validates `<root>/<dataset_id>`. Predictions are recomputed from
/// the logits and must agree with the stored ones.
DatasetBundle LoadDataset(const std::filesystem::path& root, const std::string& dataset_id);
/// Writes a bundle under `<root>/<manifest.dataset_id>`, creating the directory.
void WriteBundle(const std::filesystem::path& root, const DatasetBundle& bundle);

ModelHead LoadModelHead(const std::filesystem::path& root);
void WriteModelHead(const std::filesystem::path& root, const ModelHead& head);

/// Checks record invariants against the manifest; throws DataError/FormatError.
void ValidateBundle(const DatasetBundle& bundle);

struct CounterpartPair {
  std::size_t ood_index = 0;
  std::size_t clean_index = 0;
  /// Clean sample was classified correctly and the attacked one was not.
  bool successful_attack = false;
};

struct PairedBundle {
  std::string ood_dataset_id;
  std::string clean_dataset_id;
  std::vector<CounterpartPair> pairs;

  std::size_t successful_count() const;
};

/// Pairs every adversarial record with the clean record whose sample_id equals
/// its origin_id. Throws LinkageError on a dangling origin.
PairedBundle LinkCounterparts(const DatasetBundle& ood, const DatasetBundle& clean);

/// Keeps records whose label is in `classes`. An empty result is returned with
/// a warning rather than an error.
DatasetBundle RestrictByLabels(const DatasetBundle& bundle, const std::set<int>& classes);

}  // namespace oodens
