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

#include "oodens/scores.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "oodens/errors.hpp"
#include "oodens/parallel.hpp"

namespace oodens {

namespace {

struct NameEntry {
  ScoreKind kind;
  std::string_view name;
};

constexpr NameEntry kCanonical[] = {
    {ScoreKind::kMsp, "MSP"},           {ScoreKind::kMaxLogits, "MaxLogits"},
    {ScoreKind::kLogitNorm, "LogitNorm"}, {ScoreKind::kEnergy, "EBO"},
    {ScoreKind::kDoctorAlpha, "D_alpha"}, {ScoreKind::kOdin, "ODIN"},
    {ScoreKind::kMdsFirst, "MDS_f"},    {ScoreKind::kMdsLast, "MDS_l"},
    {ScoreKind::kMdsAll, "MDS_all"},    {ScoreKind::kReact, "ReAct"},
    {ScoreKind::kGradNorm, "GradNorm"}, {ScoreKind::kDice, "Dice"},
    {ScoreKind::kVim, "ViM"},           {ScoreKind::kCadet, "CADet"},
};

constexpr NameEntry kAliases[] = {
    {ScoreKind::kMaxLogits, "MaxLogit"}, {ScoreKind::kEnergy, "Energy"},
    {ScoreKind::kDoctorAlpha, "Doctor"}, {ScoreKind::kDoctorAlpha, "DoctorAlpha"},
};

const Eigen::VectorXd& PenultimateFeatures(const SampleRecord& record, const FittedStats& stats,
                                           ScoreKind kind) {
  auto it = record.features.find(stats.head.penultimate_layer);
  if (it == record.features.end()) {
    throw CapabilityError(std::string(ScoreName(kind)),
                          "record lacks penultimate layer '" + stats.head.penultimate_layer + "'");
  }
  return it->second;
}

double LayerMahalanobis(const SampleRecord& record, const LayerGaussianStats& layer,
                        ScoreKind kind) {
  auto it = record.features.find(layer.layer_name);
  if (it == record.features.end()) {
    throw CapabilityError(std::string(ScoreName(kind)),
                          "record lacks features for layer '" + layer.layer_name + "'");
  }
  return MahalanobisScore(it->second, layer);
}

}  // namespace

std::string_view ScoreName(ScoreKind kind) {
  for (const auto& e : kCanonical) {
    if (e.kind == kind) return e.name;
  }
  return "unknown";
}

ScoreKind ParseScoreName(std::string_view name) {
  for (const auto& e : kCanonical) {
    if (e.name == name) return e.kind;
  }
  for (const auto& e : kAliases) {
    if (e.name == name) return e.kind;
  }
  throw ConfigError("unknown score '" + std::string(name) + "'");
}

const std::vector<ScoreKind>& AllScores() {
  static const std::vector<ScoreKind> all = [] {
    std::vector<ScoreKind> v;
    for (const auto& e : kCanonical) v.push_back(e.kind);
    return v;
  }();
  return all;
}

double LogSumExp(const Eigen::VectorXd& values) {
  const double m = values.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) sum += std::exp(values[i] - m);
  return m + std::log(sum);
}

double Msp(const Eigen::VectorXd& logits) {
  // The arg-max term contributes exp(0) = 1 to the normalizer.
  const double m = logits.maxCoeff();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - m);
  return 1.0 / sum;
}

double MaxLogit(const Eigen::VectorXd& logits) { return logits.maxCoeff(); }

double LogitNorm(const Eigen::VectorXd& logits) { return logits.norm(); }

double Energy(const Eigen::VectorXd& logits, double temperature) {
  return temperature * LogSumExp(logits / temperature);
}

double DoctorAlpha(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  double sum = 0.0;
  double sum_sq = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double e = std::exp(logits[i] - m);
    sum += e;
    sum_sq += e * e;
  }
  return sum_sq / (sum * sum);
}

double OdinScore(const Eigen::VectorXd& perturbed_logits, double temperature) {
  return Msp(perturbed_logits / temperature);
}

double MahalanobisScore(const Eigen::VectorXd& features, const LayerGaussianStats& stats) {
  const auto& means = stats.class_means;
  if (features.size() != means.cols()) {
    throw CapabilityError("MDS", "layer '" + stats.layer_name + "' expects " +
                                     std::to_string(means.cols()) + " features, got " +
                                     std::to_string(features.size()));
  }
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    const Eigen::VectorXd diff = features - means.row(c).transpose();
    best = std::max(best, -diff.dot(stats.shared_precision * diff));
  }
  return best;
}

Eigen::VectorXd HeadLogits(const ModelHead& head, const Eigen::VectorXd& features, double clip,
                           const DiceMask* mask) {
  const Eigen::Index c_count = head.weight.rows();
  const Eigen::Index d = head.weight.cols();
  if (features.size() != d) {
    throw CapabilityError("head", "expects " + std::to_string(d) + " features, got " +
                                      std::to_string(features.size()));
  }
  if (mask && (mask->mask.rows() != c_count || mask->mask.cols() != d)) {
    throw CapabilityError("Dice", "mask shape does not match the classifier head");
  }
  Eigen::VectorXd logits(c_count);
  for (Eigen::Index c = 0; c < c_count; ++c) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double w = (mask == nullptr || mask->mask(c, j)) ? head.weight(c, j) : 0.0;
      acc += w * std::min(features[j], clip);
    }
    logits[c] = acc + head.bias[c];
  }
  return logits;
}

double ReactEnergy(const Eigen::VectorXd& features, const ModelHead& head, double clip,
                   double temperature) {
  return Energy(HeadLogits(head, features, clip), temperature);
}

double DiceEnergy(const Eigen::VectorXd& features, const ModelHead& head, const DiceMask& mask,
                  double temperature) {
  return Energy(HeadLogits(head, features, std::numeric_limits<double>::infinity(), &mask),
                temperature);
}

double GradNormScore(const Eigen::VectorXd& logits, const Eigen::VectorXd& features,
                     double temperature) {
  const Eigen::VectorXd scaled = logits / temperature;
  const double m = scaled.maxCoeff();
  Eigen::VectorXd p = (scaled.array() - m).exp();
  p /= p.sum();
  const double uniform = 1.0 / static_cast<double>(logits.size());
  return (p.array() - uniform).abs().sum() * features.cwiseAbs().sum();
}

double VimScore(const Eigen::VectorXd& logits, const Eigen::VectorXd& features,
                const VimStats& vim) {
  if (features.size() != vim.offset.size()) {
    throw CapabilityError("ViM", "feature dimension does not match the fitted subspace");
  }
  const Eigen::VectorXd shifted = features - vim.offset;
  const Eigen::VectorXd residual =
      shifted - vim.principal_basis * (vim.principal_basis.transpose() * shifted);
  return LogSumExp(logits) - vim.alpha * residual.norm();
}

double CadetIntraSimilarity(const Eigen::MatrixXd& views) {
  const Eigen::Index v = views.rows();
  if (v < 2) throw CapabilityError("CADet", "needs at least two views");
  Eigen::VectorXd norms(v);
  for (Eigen::Index i = 0; i < v; ++i) norms[i] = views.row(i).norm();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v; ++i) {
    for (Eigen::Index j = i + 1; j < v; ++j) {
      if (norms[i] == 0.0 || norms[j] == 0.0) continue;
      sum += views.row(i).dot(views.row(j)) / (norms[i] * norms[j]);
    }
  }
  return 2.0 * sum / static_cast<double>(v * (v - 1));
}

double ComputeScore(ScoreKind kind, const SampleRecord& record, const FittedStats& stats,
                    const ScoreParams& params) {
  switch (kind) {
    case ScoreKind::kMsp: return Msp(record.logits);
    case ScoreKind::kMaxLogits: return MaxLogit(record.logits);
    case ScoreKind::kLogitNorm: return LogitNorm(record.logits);
    case ScoreKind::kEnergy: return Energy(record.logits, params.energy_temperature);
    case ScoreKind::kDoctorAlpha: return DoctorAlpha(record.logits);
    case ScoreKind::kOdin:
      if (!record.odin_logits) {
        throw CapabilityError("ODIN", "record " + std::to_string(record.sample_id) +
                                          " has no perturbed logits");
      }
      return OdinScore(*record.odin_logits, params.odin_temperature);
    case ScoreKind::kMdsFirst:
    case ScoreKind::kMdsLast:
    case ScoreKind::kMdsAll: {
      if (stats.layers.empty()) {
        throw CapabilityError(std::string(ScoreName(kind)), "no fitted Gaussian layers");
      }
      if (kind == ScoreKind::kMdsFirst) return LayerMahalanobis(record, stats.layers.front(), kind);
      if (kind == ScoreKind::kMdsLast) return LayerMahalanobis(record, stats.layers.back(), kind);
      double sum = 0.0;
      for (const auto& layer : stats.layers) sum += LayerMahalanobis(record, layer, kind);
      return sum / static_cast<double>(stats.layers.size());
    }
    case ScoreKind::kReact:
      return ReactEnergy(PenultimateFeatures(record, stats, kind), stats.head,
                         stats.react.clip_value, params.energy_temperature);
    case ScoreKind::kGradNorm:
      return GradNormScore(record.logits, PenultimateFeatures(record, stats, kind),
                           params.gradnorm_temperature);
    case ScoreKind::kDice:
      return DiceEnergy(PenultimateFeatures(record, stats, kind), stats.head, stats.dice,
                        params.energy_temperature);
    case ScoreKind::kVim:
      return VimScore(record.logits, PenultimateFeatures(record, stats, kind), stats.vim);
    case ScoreKind::kCadet:
      if (!record.view_features) {
        throw CapabilityError("CADet", "record " + std::to_string(record.sample_id) +
                                           " has no view features");
      }
      return CadetIntraSimilarity(*record.view_features);
  }
  throw ConfigError("unhandled score kind");
}

std::vector<std::string> EnsembleDefinition::member_names() const {
  std::vector<std::string> out;
  for (auto k : members) out.emplace_back(ScoreName(k));
  return out;
}

EnsembleDefinition EnsembleViT() {
  using enum ScoreKind;
  return {"Ens-V", {kGradNorm, kOdin, kMdsAll, kMdsLast, kCadet, kDice, kMsp, kMaxLogits}};
}

EnsembleDefinition EnsembleResNet() {
  using enum ScoreKind;
  return {"Ens-R", {kGradNorm, kOdin, kMdsAll, kMdsLast, kCadet, kReact, kVim, kDoctorAlpha}};
}

EnsembleDefinition EnsembleFast() {
  using enum ScoreKind;
  return {"Ens-F", {kMsp, kMaxLogits, kMdsAll, kMdsLast, kEnergy}};
}

const std::vector<EnsembleDefinition>& BuiltinEnsembles() {
  static const std::vector<EnsembleDefinition> all = {EnsembleViT(), EnsembleResNet(),
                                                       EnsembleFast()};
  return all;
}

EnsembleDefinition BuiltinEnsemble(std::string_view id) {
  for (const auto& e : BuiltinEnsembles()) {
    if (e.ensemble_id == id) return e;
  }
  throw ConfigError("unknown built-in ensemble '" + std::string(id) + "'");
}

EnsembleDefinition MakeEnsemble(std::string id, const std::vector<std::string>& member_names) {
  if (id.empty()) throw ConfigError("ensemble id must be nonempty");
  if (member_names.empty()) throw ConfigError("ensemble '" + id + "' has no members");
  EnsembleDefinition def{std::move(id), {}};
  std::set<ScoreKind> seen;
  for (const auto& name : member_names) {
    const ScoreKind k = ParseScoreName(name);
    if (!seen.insert(k).second) {
      throw ConfigError("ensemble '" + def.ensemble_id + "' lists '" + name + "' twice");
    }
    def.members.push_back(k);
  }
  return def;
}

ScoreVector ComputeScoreVector(const SampleRecord& record, const FittedStats& stats,
                               const EnsembleDefinition& ensemble, const ScoreParams& params) {
  ScoreVector out{ensemble.ensemble_id, Eigen::VectorXd(ensemble.members.size()), record.sample_id};
  for (std::size_t k = 0; k < ensemble.members.size(); ++k) {
    out.values[static_cast<Eigen::Index>(k)] =
        ComputeScore(ensemble.members[k], record, stats, params);
  }
  return out;
}

Eigen::MatrixXd ComputeScoreMatrix(const DatasetBundle& bundle, const FittedStats& stats,
                                   const std::vector<ScoreKind>& members,
                                   const ScoreParams& params, int jobs) {
  const auto n = static_cast<Eigen::Index>(bundle.records.size());
  const auto k = static_cast<Eigen::Index>(members.size());
  Eigen::MatrixXd out(n, k);
  ParallelFor(bundle.records.size(), jobs, [&](std::size_t i) {
    const auto& r = bundle.records[i];
    for (Eigen::Index j = 0; j < k; ++j) {
      const double v = ComputeScore(members[static_cast<std::size_t>(j)], r, stats, params);
      if (!std::isfinite(v)) {
        throw NumericalError(std::string(ScoreName(members[static_cast<std::size_t>(j)])) +
                             ": non-finite score for sample_id " + std::to_string(r.sample_id) +
                             " of " + bundle.manifest.dataset_id);
      }
      out(static_cast<Eigen::Index>(i), j) = v;
    }
  });
  return out;
}

}  // namespace oodens
