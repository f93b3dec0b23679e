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

// Full-covariance Gaussian mixture fitted by EM on z-scored score vectors.
// The log-density of a score vector under the mixture is the ensemble's
// in-distribution score.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oodens {

/// Per-dimension z-score parameters.
struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  static constexpr double kStdFloor = 1e-12;

  Eigen::MatrixXd Apply(const Eigen::MatrixXd& rows) const;
  Eigen::VectorXd Apply(const Eigen::VectorXd& x) const;
  static Standardization Identity(Eigen::Index dim);
};

/// Mean and 1/N standard deviation of every column; std floored at kStdFloor.
Standardization StandardizeFit(const Eigen::MatrixXd& scores);

struct GmmFitOptions {
  int n_components = 1;
  std::uint64_t seed = 0;
  double regularization = 1e-6;  // added to every covariance diagonal
  double tol = 1e-6;  // relative log-likelihood improvement
  int max_iter = 500;
  int restarts = 3;
};

struct GmmFitInfo {
  std::uint64_t seed = 0;
  double regularization = 0.0;
  int iterations = 0;
  bool converged = false;
  double final_loglik = 0.0;  // average per sample, standardized space
  int best_restart = 0;
  int reinitializations = 0;
  /// Average log-likelihood evaluated at the start of every iteration of the
  /// winning restart.
  std::vector<double> loglik_trace;
  /// Iterations after which a collapsed component was re-seeded; the trace is
  /// only monotone between these points.
  std::vector<int> reinit_iterations;
};

class GmmModel {
 public:
  GmmModel() = default;
  /// means: n x K; covariances: n matrices of K x K. Throws NumericalError if a
  /// covariance is not positive definite.
  GmmModel(Eigen::VectorXd weights, Eigen::MatrixXd means, std::vector<Eigen::MatrixXd> covariances,
           Standardization standardization, GmmFitInfo info = {});

  int n_components() const { return static_cast<int>(weights_.size()); }
  int dim() const { return static_cast<int>(means_.cols()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const Eigen::MatrixXd& means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& covariances() const { return covariances_; }
  const Standardization& standardization() const { return standardization_; }
  const GmmFitInfo& info() const { return info_; }

  /// log sum_i pi_i N(z; mu_i, Sigma_i) for an already standardized z.
  double LogLikStandardized(const Eigen::VectorXd& z) const;
  /// Standardizes a raw score vector first.
  double LogLik(const Eigen::VectorXd& raw) const;
  /// Row-wise LogLik over an N x K matrix of raw score vectors.
  Eigen::VectorXd LogLik(const Eigen::MatrixXd& raw_rows) const;
  /// Row-wise log-densities in standardized space.
  Eigen::VectorXd LogLikStandardized(const Eigen::MatrixXd& rows) const;
  /// -sum log(std): converts standardized-space log-density to raw space.
  double LogJacobian() const;

 private:
  Eigen::VectorXd weights_;
  Eigen::MatrixXd means_;
  std::vector<Eigen::MatrixXd> covariances_;
  Standardization standardization_;
  GmmFitInfo info_;
  std::vector<Eigen::MatrixXd> chol_lower_;
  Eigen::VectorXd log_norm_;  // log pi_i - 0.5 (K log 2pi + log det Sigma_i)
};

/// EM on standardized data. Requires N >= 10 * n_components. The returned
/// model carries `standardization` so that LogLik accepts raw vectors.
GmmModel GmmFit(const Eigen::MatrixXd& standardized, const GmmFitOptions& options,
                const Standardization& standardization);
/// StandardizeFit followed by GmmFit.
GmmModel FitScoreGmm(const Eigen::MatrixXd& raw_scores, const GmmFitOptions& options);

double GmmLogLik(const GmmModel& model, const Eigen::VectorXd& raw);

/// Writes `gmm_<id>.json` plus `gmm_<id>_{weights,means,covariances,standardization}.npy`.
void SaveGmm(const std::filesystem::path& dir, const std::string& ensemble_id,
             const std::vector<std::string>& member_names, const GmmModel& model);
GmmModel LoadGmm(const std::filesystem::path& dir, const std::string& ensemble_id,
                 std::vector<std::string>* member_names = nullptr);

}  // namespace oodens
