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

// Generative score ensemble: training-data preparation, selection of the
// mixture size and selection of member scores. The mixture itself lives in
// gmm.hpp; ensemble definitions live in scores.hpp.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oodens/gmm.hpp"
#include "oodens/ingest.hpp"
#include "oodens/scores.hpp"
#include "oodens/stats.hpp"

namespace oodens {

/// Score vectors of an in-distribution validation bundle split into a GMM
/// training part (correctly classified samples only) and a held-out part that
/// keeps correctness flags.
struct TrainingSplit {
  Eigen::MatrixXd train;
  std::vector<std::int64_t> train_ids;
  Eigen::MatrixXd heldout;
  std::vector<bool> heldout_correct;
  std::vector<std::int64_t> heldout_ids;
  /// Samples of the training part dropped because they were misclassified.
  std::size_t discarded_misclassified = 0;
};

/// Seeded, disjoint split: round(heldout_fraction * N) records go to the
/// held-out part. Throws FitError if no correctly classified record remains
/// for training.
TrainingSplit BuildTrainingMatrix(const DatasetBundle& validation, const FittedStats& stats,
                                  const EnsembleDefinition& ensemble, double heldout_fraction,
                                  std::uint64_t seed, const ScoreParams& params = {},
                                  int jobs = 1);

/// Same split on a precomputed N x K score matrix.
TrainingSplit SplitScoreMatrix(const Eigen::MatrixXd& scores, const DatasetBundle& validation,
                               double heldout_fraction, std::uint64_t seed);

struct ComponentSelection {
  int selected = 1;
  std::vector<int> candidates;
  /// Held-out ID error-detection AUC for each candidate.
  std::vector<double> heldout_auc;
};

inline const std::vector<int>& DefaultComponentCandidates() {
  static const std::vector<int> kCandidates = {1, 2, 5, 10, 20};
  return kCandidates;
}

/// Fits a GMM per candidate on `train` (raw scores, standardized internally)
/// and keeps the one whose log-likelihood best separates misclassified from
/// correctly classified held-out samples. Ties go to the smaller n.
ComponentSelection SelectNComponents(const Eigen::MatrixXd& train, const Eigen::MatrixXd& heldout,
                                     const std::vector<bool>& heldout_correct,
                                     const std::vector<int>& candidates,
                                     const GmmFitOptions& base_options);

struct MemberSelection {
  std::vector<std::string> admitted;  // in admission order
  std::vector<std::string> near_random;  // dropped by the ED-AUC band
  std::vector<std::string> correlated;  // dropped by the correlation rule
  Eigen::MatrixXd correlation;  // K x K Pearson correlation
};

struct MemberSelectionOptions {
  double corr_threshold = 0.95;
  double near_random_low = 0.45;
  double near_random_high = 0.55;
};

/// Pearson correlation of the columns; a constant column correlates 0 with
/// everything else and 1 with itself.
Eigen::MatrixXd ScoreCorrelation(const Eigen::MatrixXd& scores);

/// Drops scores whose ID error-detection AUC lies in the near-random band,
/// then admits the rest greedily by descending AUC while |corr| with every
/// admitted score stays below the threshold. Throws SelectionError when fewer
/// than two scores are admitted.
MemberSelection SelectMembers(const Eigen::MatrixXd& clean_scores,
                              const std::vector<std::string>& names,
                              const std::vector<double>& indist_ed_auc,
                              const MemberSelectionOptions& options = {});

}  // namespace oodens
