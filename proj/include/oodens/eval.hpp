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

// AUROC evaluation under the distribution-shift-detection (DSD) and
// error-detection (ED) settings, plus report aggregation and I/O.

#pragma once

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "oodens/gmm.hpp"
#include "oodens/ingest.hpp"
#include "oodens/scores.hpp"
#include "oodens/stats.hpp"

namespace oodens {

/// Area under the ROC curve for detecting OOD samples when scores are oriented
/// higher = in-distribution. Ties count one half (midrank Mann-Whitney).
/// Throws EvaluationError if either side is empty or holds a NaN.
double Auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

enum class EvalSetting { kDsd, kEdIndist, kEdAdversarial, kEdCorruption };

std::string_view ToString(EvalSetting setting);
EvalSetting ParseEvalSetting(std::string_view name);
/// "DSD" or "ED"; shift-type averages are formed within a family.
std::string_view Family(EvalSetting setting);

/// Per-record ID-score over a whole bundle.
struct Scorer {
  std::string name;
  std::function<std::vector<double>(const DatasetBundle&)> score;
};

Scorer MakeMemberScorer(ScoreKind kind, const FittedStats& stats, const ScoreParams& params = {},
                        int jobs = 1);
/// Log-likelihood of the ensemble's score vector under `model`.
Scorer MakeEnsembleScorer(const EnsembleDefinition& ensemble, const FittedStats& stats,
                          const GmmModel& model, const ScoreParams& params = {}, int jobs = 1);

struct EvalTask {
  EvalSetting setting = EvalSetting::kDsd;
  std::string id_source;
  std::optional<std::set<int>> label_restriction;
  std::optional<std::string> ood_source;  // none for ED_indist
  std::string scorer;
};

struct TaskResult {
  EvalSetting setting = EvalSetting::kDsd;
  ShiftType shift_type = ShiftType::kInDistribution;
  std::string dataset;
  std::string scorer;
  double auc = 0.5;
  std::size_t n_id = 0;
  std::size_t n_ood = 0;
};

/// Index subsets of the two sides of a task after its filtering rules.
struct TaskSides {
  std::vector<std::size_t> id_indices;
  std::vector<std::size_t> ood_indices;
};

/// DSD sides: every record on both sides, except that a multi-label OOD set with
/// a label restriction limits the ID side to those classes.
TaskSides DsdSides(const DatasetBundle& id, const DatasetBundle& ood);
/// ED_indist: misclassified ID (OOD side) vs correctly classified ID.
TaskSides EdIndistSides(const DatasetBundle& id);
/// ED_corruption: misclassified OOD vs correctly classified ID.
TaskSides EdCorruptionSides(const DatasetBundle& id, const DatasetBundle& ood);
/// ED_adversarial: attacked records of successful pairs (OOD side) vs their
/// clean originals (ID side, indices into the clean bundle).
TaskSides EdAdversarialSides(const PairedBundle& pairs);

/// AUROC on precomputed per-record scores restricted to `sides`.
/// id_scores and ood_scores are indexed by the bundle indices in `sides`.
TaskResult EvaluateSides(EvalSetting setting, const TaskSides& sides,
                         std::span<const double> id_scores, std::span<const double> ood_scores,
                         std::string dataset, ShiftType shift_type, std::string scorer);

TaskResult EvaluateDsd(const DatasetBundle& id, const DatasetBundle& ood, const Scorer& scorer);
/// `ood` is unused for kEdIndist. For kEdAdversarial `id` must be the origin
/// (clean) bundle of `ood`.
TaskResult EvaluateEd(EvalSetting setting, const DatasetBundle& id, const DatasetBundle* ood,
                      const Scorer& scorer);

/// Fraction of labelled records whose prediction equals the label; nullopt
/// when no record is labelled.
std::optional<double> Accuracy(const DatasetBundle& bundle);

struct TypeAverage {
  std::string family;
  std::string scorer;
  ShiftType shift_type = ShiftType::kInDistribution;
  double auc = 0.0;
  std::size_t datasets = 0;
};

struct OverallAverage {
  std::string family;
  std::string scorer;
  double auc = 0.0;
  std::size_t shift_types = 0;
};

struct EvalReport {
  std::vector<TaskResult> tasks;
  std::vector<TypeAverage> type_averages;
  std::vector<OverallAverage> overall;
  std::map<std::string, double> accuracy;  // dataset -> accuracy
  std::map<std::string, double> normalized_time;  // scorer -> cost / forward pass
};

/// Unweighted mean over datasets within (family, scorer, shift type), then the
/// unweighted mean of those type means per (family, scorer).
EvalReport AggregateReport(std::vector<TaskResult> tasks,
                           std::map<std::string, double> accuracy = {},
                           std::map<std::string, double> normalized_time = {});

enum class ReportFormat { kJson, kCsv };

std::string EmitReport(const EvalReport& report, ReportFormat format);
EvalReport ParseReportJson(const std::string& text);
/// Reads the task rows of a CSV report.
std::vector<TaskResult> ParseReportCsv(const std::string& text);

/// Shortest decimal text that parses back to the same double.
std::string FormatDouble(double value);

}  // namespace oodens
