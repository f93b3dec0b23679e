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

// Post-hoc detection statistics. Every score is oriented so that a higher
// value means "more in-distribution":
//
//   MSP        max softmax probability
//   MaxLogits  max logit
//   LogitNorm  L2 norm of the logits
//   EBO        T * logsumexp(logits / T), the negated free energy
//   D_alpha    sum_c p_c^2 (monotone in the black-box DOCTOR statistic)
//   ODIN       max softmax of upstream-perturbed logits at T = 1000
//   MDS_f/l    max_c -(f - mu_c)^T P (f - mu_c) on the first / last layer
//   MDS_all    mean of the per-layer Mahalanobis scores
//   ReAct      energy of W * min(f, c) + b
//   GradNorm   ||softmax(logits / T) - 1/C||_1 * ||f||_1
//   Dice       energy of (W .* mask) f + b
//   ViM        logsumexp(logits) - alpha * ||(I - B B^T)(f - u)||
//   CADet      mean pairwise cosine similarity of the view features

#pragma once

#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "oodens/ingest.hpp"
#include "oodens/stats.hpp"

namespace oodens {

enum class ScoreKind {
  kMsp,
  kMaxLogits,
  kLogitNorm,
  kEnergy,
  kDoctorAlpha,
  kOdin,
  kMdsFirst,
  kMdsLast,
  kMdsAll,
  kReact,
  kGradNorm,
  kDice,
  kVim,
  kCadet,
};

std::string_view ScoreName(ScoreKind kind);
/// Accepts the canonical names above plus a few common aliases.
ScoreKind ParseScoreName(std::string_view name);
/// All fourteen statistics in canonical order.
const std::vector<ScoreKind>& AllScores();

struct ScoreParams {
  double energy_temperature = 1.0;  // EBO, ReAct, Dice
  double odin_temperature = 1000.0;
  double gradnorm_temperature = 1.0;
};

// Logit-only statistics.
double LogSumExp(const Eigen::VectorXd& values);
double Msp(const Eigen::VectorXd& logits);
double MaxLogit(const Eigen::VectorXd& logits);
double LogitNorm(const Eigen::VectorXd& logits);
double Energy(const Eigen::VectorXd& logits, double temperature = 1.0);
double DoctorAlpha(const Eigen::VectorXd& logits);
double OdinScore(const Eigen::VectorXd& perturbed_logits, double temperature = 1000.0);

double MahalanobisScore(const Eigen::VectorXd& features, const LayerGaussianStats& stats);

/// b + (W .* mask) min(f, clip), accumulated in a fixed order so that clip = +inf
/// and an all-ones mask reproduce the plain head bit for bit.
Eigen::VectorXd HeadLogits(const ModelHead& head, const Eigen::VectorXd& features,
                           double clip = std::numeric_limits<double>::infinity(),
                           const DiceMask* mask = nullptr);

double ReactEnergy(const Eigen::VectorXd& features, const ModelHead& head, double clip,
                   double temperature = 1.0);
double DiceEnergy(const Eigen::VectorXd& features, const ModelHead& head, const DiceMask& mask,
                  double temperature = 1.0);
double GradNormScore(const Eigen::VectorXd& logits, const Eigen::VectorXd& features,
                     double temperature = 1.0);
double VimScore(const Eigen::VectorXd& logits, const Eigen::VectorXd& features,
                const VimStats& vim);
/// views: one row per transformed view.
double CadetIntraSimilarity(const Eigen::MatrixXd& views);

/// Evaluates one statistic on a record. Throws CapabilityError when the record
/// lacks a channel the score needs.
double ComputeScore(ScoreKind kind, const SampleRecord& record, const FittedStats& stats,
                    const ScoreParams& params = {});

/// Ordered member list of a score ensemble.
struct EnsembleDefinition {
  std::string ensemble_id;
  std::vector<ScoreKind> members;

  std::vector<std::string> member_names() const;
};

EnsembleDefinition EnsembleViT();
EnsembleDefinition EnsembleResNet();
EnsembleDefinition EnsembleFast();
const std::vector<EnsembleDefinition>& BuiltinEnsembles();
/// Built-in ensemble by id ("Ens-V", "Ens-R", "Ens-F"); throws ConfigError.
EnsembleDefinition BuiltinEnsemble(std::string_view id);
/// Rejects duplicate members and empty lists.
EnsembleDefinition MakeEnsemble(std::string id, const std::vector<std::string>& member_names);

struct ScoreVector {
  std::string ensemble_id;
  Eigen::VectorXd values;
  std::int64_t sample_id = 0;
};

ScoreVector ComputeScoreVector(const SampleRecord& record, const FittedStats& stats,
                               const EnsembleDefinition& ensemble,
                               const ScoreParams& params = {});

/// N x K matrix of member scores for every record, computed over `jobs` threads.
Eigen::MatrixXd ComputeScoreMatrix(const DatasetBundle& bundle, const FittedStats& stats,
                                   const std::vector<ScoreKind>& members,
                                   const ScoreParams& params = {}, int jobs = 1);

}  // namespace oodens
