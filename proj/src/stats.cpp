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

#include "oodens/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "oodens/errors.hpp"
#include "oodens/matrix_io.hpp"
#include "oodens/npy.hpp"
#include "oodens/parallel.hpp"

namespace oodens {

namespace fs = std::filesystem;
using json = nlohmann::json;

const LayerGaussianStats& FittedStats::layer(const std::string& name) const {
  for (const auto& l : layers) {
    if (l.layer_name == name) return l;
  }
  throw CapabilityError("MDS", "no Gaussian statistics fitted for layer '" + name + "'");
}

LayerGaussianStats FitClassGaussians(const Eigen::MatrixXd& features, std::span<const int> labels,
                                     int class_count, double lambda_scale,
                                     std::string layer_name) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw FitError("class Gaussians: " + std::to_string(labels.size()) + " labels for " +
                   std::to_string(n) + " samples");
  }
  if (lambda_scale < 0) throw FitError("class Gaussians: lambda_scale must be >= 0");

  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(class_count, d);
  std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= class_count) {
      throw FitError("class Gaussians: label " + std::to_string(c) + " outside [0, " +
                     std::to_string(class_count) + ")");
    }
    means.row(c) += features.row(i);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < class_count; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      throw FitError("class Gaussians: class " + std::to_string(c) + " has no samples");
    }
    means.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }

  Eigen::MatrixXd centered(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    centered.row(i) = features.row(i) - means.row(labels[static_cast<std::size_t>(i)]);
  }
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n);
  cov = 0.5 * (cov + cov.transpose());

  const double trace = cov.trace();
  const double lambda = trace > 0 ? lambda_scale * trace / static_cast<double>(d) : lambda_scale;
  Eigen::MatrixXd regularized = cov;
  regularized.diagonal().array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(regularized);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("class Gaussians: Cholesky failed for layer '" + layer_name +
                         "' with lambda " + std::to_string(lambda));
  }
  Eigen::MatrixXd precision = llt.solve(Eigen::MatrixXd::Identity(d, d));
  precision = 0.5 * (precision + precision.transpose());

  return {std::move(layer_name), std::move(means), std::move(precision), lambda};
}

VimStats FitVimSubspace(const Eigen::MatrixXd& penult_features, const ModelHead& head,
                        int principal_dim) {
  const Eigen::Index n = penult_features.rows();
  const Eigen::Index d = penult_features.cols();
  if (head.weight.cols() != d) {
    throw FitError("ViM: head expects " + std::to_string(head.weight.cols()) +
                   "-d features, got " + std::to_string(d));
  }
  if (principal_dim < 1 || principal_dim >= d) {
    throw FitError("ViM: principal dimension " + std::to_string(principal_dim) +
                   " must lie in [1, " + std::to_string(d) + ")");
  }
  if (n <= principal_dim) {
    throw FitError("ViM: need more than " + std::to_string(principal_dim) + " samples");
  }

  VimStats out;
  // Minimum-norm least-squares solution of W u = -b.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(head.weight);
  out.offset = -cod.solve(head.bias);

  const Eigen::MatrixXd shifted = penult_features.rowwise() - out.offset.transpose();
  Eigen::MatrixXd moment = (shifted.transpose() * shifted) / static_cast<double>(n);
  moment = 0.5 * (moment + moment.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(moment);
  if (eig.info() != Eigen::Success) throw NumericalError("ViM: eigendecomposition failed");

  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const double top = std::max(values[d - 1], 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < d; ++i) rank += values[i] > 1e-10 * top ? 1 : 0;
  if (top <= 0 || rank < principal_dim) {
    throw FitError("ViM: feature covariance has rank " + std::to_string(rank) +
                   ", cannot span a " + std::to_string(principal_dim) + "-d subspace");
  }

  out.principal_basis.resize(d, principal_dim);
  for (int k = 0; k < principal_dim; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v[pivot] < 0) v = -v;
    out.principal_basis.col(k) = v;
  }

  const Eigen::MatrixXd residual =
      shifted - (shifted * out.principal_basis) * out.principal_basis.transpose();
  double residual_sum = 0.0;
  double norm_sum = 0.0;
  double max_logit_sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    residual_sum += residual.row(i).norm();
    norm_sum += shifted.row(i).norm();
    const Eigen::VectorXd logits = head.weight * penult_features.row(i).transpose() + head.bias;
    max_logit_sum += logits.maxCoeff();
  }
  const double mean_residual = residual_sum / static_cast<double>(n);
  const double mean_max_logit = max_logit_sum / static_cast<double>(n);
  if (!(mean_residual > 1e-12 * std::max(1.0, norm_sum / static_cast<double>(n)))) {
    throw FitError("ViM: training residual norm vanishes; features lie in the principal subspace");
  }
  out.alpha = mean_max_logit / mean_residual;
  if (!(out.alpha > 0) || !std::isfinite(out.alpha)) {
    throw FitError("ViM: alpha must be positive, got " + std::to_string(out.alpha) +
                   " (mean max-logit " + std::to_string(mean_max_logit) + ")");
  }
  return out;
}

int DiceKeepCount(double keep_fraction, int dim) {
  const double raw = keep_fraction * dim;
  // Absorb representation error such as 0.7 * 10 = 7.000000000000001.
  const int k = static_cast<int>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::clamp(k, 1, dim);
}

DiceMask FitDiceMasks(const Eigen::MatrixXd& penult_features, const ModelHead& head,
                      double keep_fraction) {
  if (!(keep_fraction > 0 && keep_fraction <= 1)) {
    throw FitError("DICE: keep fraction must lie in (0, 1]");
  }
  const Eigen::Index d = penult_features.cols();
  if (head.weight.cols() != d) throw FitError("DICE: head/feature dimension mismatch");
  if (penult_features.rows() == 0) throw FitError("DICE: no training features");

  const Eigen::RowVectorXd mean = penult_features.colwise().mean();
  const int keep = DiceKeepCount(keep_fraction, static_cast<int>(d));
  DiceMask out;
  out.keep_fraction = keep_fraction;
  out.mask.setZero(head.weight.rows(), d);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  for (Eigen::Index c = 0; c < head.weight.rows(); ++c) {
    const Eigen::RowVectorXd contrib = head.weight.row(c).cwiseProduct(mean);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return contrib[a] > contrib[b]; });
    for (int k = 0; k < keep; ++k) out.mask(c, order[static_cast<std::size_t>(k)]) = 1;
  }
  return out;
}

ReactThreshold FitReactThreshold(const Eigen::MatrixXd& penult_features, double percentile) {
  if (!(percentile > 0 && percentile <= 100)) {
    throw FitError("ReAct: percentile must lie in (0, 100]");
  }
  if (penult_features.size() == 0) throw FitError("ReAct: no activations to threshold");
  std::vector<double> values(penult_features.data(),
                             penult_features.data() + penult_features.size());
  const double pos = percentile / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(lo);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double lo_value = values[lo];
  double hi_value = lo_value;
  if (frac > 0 && lo + 1 < values.size()) {
    hi_value = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  }
  return {lo_value + frac * (hi_value - lo_value), percentile};
}

Eigen::MatrixXd StackFeatures(const DatasetBundle& bundle, const std::string& layer) {
  if (bundle.records.empty()) return {};
  auto dim_of = [&](const SampleRecord& r) -> const Eigen::VectorXd& {
    auto it = r.features.find(layer);
    if (it == r.features.end()) {
      throw FormatError(bundle.manifest.dataset_id + ": no features for layer '" + layer + "'");
    }
    return it->second;
  };
  const Eigen::Index d = dim_of(bundle.records.front()).size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(bundle.records.size()), d);
  for (std::size_t i = 0; i < bundle.records.size(); ++i) {
    const auto& f = dim_of(bundle.records[i]);
    if (f.size() != d) throw FormatError(bundle.manifest.dataset_id + ": ragged layer " + layer);
    out.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return out;
}

FittedStats FitStats(const DatasetBundle& train, const ModelHead& head,
                     const StatsOptions& options, int jobs) {
  const auto& m = train.manifest;
  if (train.records.empty()) throw FitError(m.dataset_id + ": empty training bundle");
  if (head.class_count() != m.class_count) {
    throw FitError("head has " + std::to_string(head.class_count()) + " classes, dataset " +
                   m.dataset_id + " has " + std::to_string(m.class_count));
  }
  std::vector<int> labels;
  labels.reserve(train.records.size());
  for (const auto& r : train.records) {
    if (r.label < 0) {
      throw DataError(m.dataset_id + ": sample_id " + std::to_string(r.sample_id) +
                      " has no label; statistics need a labelled training set");
    }
    labels.push_back(r.label);
  }

  FittedStats out;
  out.head = head;
  out.options = options;
  out.sample_count = train.records.size();
  out.layers.resize(m.layer_names.size());
  ParallelFor(m.layer_names.size(), jobs, [&](std::size_t l) {
    out.layers[l] = FitClassGaussians(StackFeatures(train, m.layer_names[l]), labels,
                                      m.class_count, options.lambda_scale, m.layer_names[l]);
  });

  const Eigen::MatrixXd penult = StackFeatures(train, head.penultimate_layer);
  if (penult.cols() != head.feature_dim()) {
    throw FitError("penultimate layer '" + head.penultimate_layer + "' has " +
                   std::to_string(penult.cols()) + " features, head expects " +
                   std::to_string(head.feature_dim()));
  }
  const int vim_dim = options.vim_dim > 0
                          ? options.vim_dim
                          : std::min<int>(512, static_cast<int>(penult.cols()) / 2);
  out.options.vim_dim = vim_dim;
  out.vim = FitVimSubspace(penult, head, vim_dim);
  out.dice = FitDiceMasks(penult, head, options.dice_keep);
  out.react = FitReactThreshold(penult, options.react_percentile);
  return out;
}

void SaveStats(const fs::path& dir, const FittedStats& stats) {
  fs::create_directories(dir);
  json j;
  j["format"] = "oodens-stats/1";
  j["lambda_scale"] = stats.options.lambda_scale;
  j["vim_dim"] = stats.options.vim_dim;
  j["dice_keep"] = stats.options.dice_keep;
  j["react_percentile"] = stats.options.react_percentile;
  j["seed"] = stats.options.seed;
  j["sample_count"] = stats.sample_count;
  j["penultimate_layer"] = stats.head.penultimate_layer;
  j["vim_alpha"] = stats.vim.alpha;
  j["react_clip_value"] = stats.react.clip_value;
  json layers = json::array();
  for (std::size_t i = 0; i < stats.layers.size(); ++i) {
    const auto& l = stats.layers[i];
    layers.push_back({{"name", l.layer_name}, {"regularization", l.regularization}});
    const std::string prefix = "gauss_" + std::to_string(i);
    WriteMatrixF64(dir / (prefix + "_means.npy"), l.class_means);
    WriteMatrixF64(dir / (prefix + "_precision.npy"), l.shared_precision);
  }
  j["layers"] = layers;
  WriteVectorF64(dir / "vim_offset.npy", stats.vim.offset);
  WriteMatrixF64(dir / "vim_basis.npy", stats.vim.principal_basis);
  WriteMatrixF64(dir / "head_weight.npy", stats.head.weight);
  WriteVectorF64(dir / "head_bias.npy", stats.head.bias);
  const auto& mask = stats.dice.mask;
  std::vector<std::uint8_t> flat;
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) flat.push_back(mask(r, c));
  }
  npy::Write(dir / "dice_mask.npy",
             npy::FromUInt8({static_cast<std::size_t>(mask.rows()),
                             static_cast<std::size_t>(mask.cols())},
                            flat));
  std::ofstream out(dir / "stats.json", std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "stats.json").string());
  out << j.dump(2) << "\n";
}

FittedStats LoadStats(const fs::path& dir) {
  const fs::path meta = dir / "stats.json";
  std::ifstream in(meta, std::ios::binary);
  if (!in) throw FormatError("missing file: " + meta.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(meta.string() + ": " + e.what());
  }
  FittedStats stats;
  try {
    stats.options.lambda_scale = j.at("lambda_scale").get<double>();
    stats.options.vim_dim = j.at("vim_dim").get<int>();
    stats.options.dice_keep = j.at("dice_keep").get<double>();
    stats.options.react_percentile = j.at("react_percentile").get<double>();
    stats.options.seed = j.at("seed").get<std::uint64_t>();
    stats.sample_count = j.at("sample_count").get<std::size_t>();
    stats.head.penultimate_layer = j.at("penultimate_layer").get<std::string>();
    stats.vim.alpha = j.at("vim_alpha").get<double>();
    stats.react.clip_value = j.at("react_clip_value").get<double>();
    stats.react.percentile = stats.options.react_percentile;
    stats.dice.keep_fraction = stats.options.dice_keep;
    const auto& layers = j.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      LayerGaussianStats l;
      l.layer_name = layers[i].at("name").get<std::string>();
      l.regularization = layers[i].at("regularization").get<double>();
      const std::string prefix = "gauss_" + std::to_string(i);
      l.class_means = ReadMatrix(dir / (prefix + "_means.npy"));
      l.shared_precision = ReadMatrix(dir / (prefix + "_precision.npy"));
      stats.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw FormatError(meta.string() + ": " + e.what());
  }
  stats.vim.offset = ReadVector(dir / "vim_offset.npy");
  stats.vim.principal_basis = ReadMatrix(dir / "vim_basis.npy");
  stats.head.weight = ReadMatrix(dir / "head_weight.npy");
  stats.head.bias = ReadVector(dir / "head_bias.npy");
  auto mask = npy::Read(dir / "dice_mask.npy");
  if (mask.shape.size() != 2) throw FormatError("dice_mask.npy: expected a matrix");
  const auto values = mask.AsInt64();
  stats.dice.mask.resize(static_cast<Eigen::Index>(mask.shape[0]),
                         static_cast<Eigen::Index>(mask.shape[1]));
  for (Eigen::Index r = 0; r < stats.dice.mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < stats.dice.mask.cols(); ++c) {
      stats.dice.mask(r, c) =
          static_cast<std::uint8_t>(values[static_cast<std::size_t>(r * stats.dice.mask.cols() + c)]);
    }
  }
  return stats;
}

}  // namespace oodens
