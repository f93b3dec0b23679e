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

// In-distribution statistics fitted once on a training bundle and consumed by
// the detectors in scores.hpp.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oodens/ingest.hpp"

namespace oodens {

/// Class-conditional Gaussians with a shared (tied) covariance.
struct LayerGaussianStats {
  std::string layer_name;
  Eigen::MatrixXd class_means;  // C x D, one row per class
  Eigen::MatrixXd shared_precision;  // D x D
  double regularization = 0.0;  // lambda actually added to the covariance
};

/// Principal subspace of offset penultimate features plus the virtual-logit
/// scale.
struct VimStats {
  Eigen::VectorXd offset;  // u = -pinv(W) b
  Eigen::MatrixXd principal_basis;  // D x D', orthonormal columns
  double alpha = 0.0;
  int principal_dim() const { return static_cast<int>(principal_basis.cols()); }
};

struct DiceMask {
  /// C x D, 1 = weight kept.
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;
  double keep_fraction = 1.0;
};

struct ReactThreshold {
  double clip_value = 0.0;
  double percentile = 90.0;
};

struct StatsOptions {
  double lambda_scale = 1e-6;
  /// 0 selects min(512, D/2).
  int vim_dim = 0;
  double dice_keep = 0.7;
  double react_percentile = 90.0;
  std::uint64_t seed = 0;
};

struct FittedStats {
  std::vector<LayerGaussianStats> layers;  // in manifest layer order
  VimStats vim;
  DiceMask dice;
  ReactThreshold react;
  ModelHead head;
  StatsOptions options;
  std::size_t sample_count = 0;

  /// Throws CapabilityError when the layer was not fitted.
  const LayerGaussianStats& layer(const std::string& name) const;
};

/// Shared-covariance Gaussian fit. labels must lie in [0, class_count) and every
/// class must occur. lambda = lambda_scale * trace(cov) / D, or lambda_scale
/// itself when the covariance is identically zero.
LayerGaussianStats FitClassGaussians(const Eigen::MatrixXd& features, std::span<const int> labels,
                                     int class_count, double lambda_scale,
                                     std::string layer_name = {});

VimStats FitVimSubspace(const Eigen::MatrixXd& penult_features, const ModelHead& head,
                        int principal_dim);

/// Per-class mask keeping the ceil(p*D) largest contributions w_cj * mean_i f_ij.
DiceMask FitDiceMasks(const Eigen::MatrixXd& penult_features, const ModelHead& head,
                      double keep_fraction);

/// q-th percentile (linear interpolation) over all N*D activations.
ReactThreshold FitReactThreshold(const Eigen::MatrixXd& penult_features, double percentile);

/// Number of entries kept per row: ceil(p * D), clamped to [1, D].
int DiceKeepCount(double keep_fraction, int dim);

/// Stacks one layer's features of every record into an N x D matrix.
Eigen::MatrixXd StackFeatures(const DatasetBundle& bundle, const std::string& layer);

/// Fits every component from a labelled in-distribution training bundle.
FittedStats FitStats(const DatasetBundle& train, const ModelHead& head,
                     const StatsOptions& options, int jobs = 1);

/// Directory layout: stats.json plus float64 NPY arrays; reload is bit-exact.
void SaveStats(const std::filesystem::path& dir, const FittedStats& stats);
FittedStats LoadStats(const std::filesystem::path& dir);

}  // namespace oodens
