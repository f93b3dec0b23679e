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

#include "oodens/gmm.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <random>

#include <json.hpp>

#include "oodens/errors.hpp"
#include "oodens/matrix_io.hpp"
#include "oodens/npy.hpp"

namespace oodens {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kCollapseWeight = 1e-8;
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// Platform-independent uniform draw in [0, 1).
double Uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Params {
  Eigen::VectorXd weights;
  Eigen::MatrixXd means;
  std::vector<Eigen::MatrixXd> covs;
};

// log pi_k + log N(x_i; mu_k, Sigma_k) for every (i, k). Throws NumericalError
// on a non-positive-definite covariance.
Eigen::MatrixXd LogJoint(const Eigen::MatrixXd& x, const Params& p) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  const auto comps = static_cast<Eigen::Index>(p.covs.size());
  Eigen::MatrixXd out(n, comps);
  for (Eigen::Index k = 0; k < comps; ++k) {
    Eigen::LLT<Eigen::MatrixXd> llt(p.covs[static_cast<std::size_t>(k)]);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("GMM: covariance of component " + std::to_string(k) +
                           " is not positive definite");
    }
    const Eigen::MatrixXd l = llt.matrixL();
    const double log_det = 2.0 * l.diagonal().array().log().sum();
    Eigen::MatrixXd centered = (x.rowwise() - p.means.row(k)).transpose();
    l.triangularView<Eigen::Lower>().solveInPlace(centered);
    const double base = std::log(p.weights[k]) - 0.5 * (static_cast<double>(dim) * kLog2Pi + log_det);
    out.col(k) = (base - 0.5 * centered.colwise().squaredNorm().array()).matrix().transpose();
  }
  return out;
}

// Row-wise log-sum-exp.
Eigen::VectorXd RowLogSumExp(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double mx = m.row(i).maxCoeff();
    if (!std::isfinite(mx)) {
      out[i] = mx;
      continue;
    }
    out[i] = mx + std::log((m.row(i).array() - mx).exp().sum());
  }
  return out;
}

Eigen::MatrixXd Covariance(const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(x.rows());
}

// k-means++ seeding followed by one hard-assignment pass. Every component
// starts from the pooled within-cluster covariance so that no component begins
// as a singular spike on a lone seed point.
Params Initialize(const Eigen::MatrixXd& x, int comps, double reg, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  std::vector<Eigen::Index> centers;
  centers.push_back(std::min<Eigen::Index>(static_cast<Eigen::Index>(Uniform(rng) * n), n - 1));
  Eigen::VectorXd d2 = (x.rowwise() - x.row(centers[0])).rowwise().squaredNorm();
  while (static_cast<int>(centers.size()) < comps) {
    const double total = d2.sum();
    Eigen::Index pick = n - 1;
    if (total > 0) {
      const double target = Uniform(rng) * total;
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<Eigen::Index>(static_cast<Eigen::Index>(Uniform(rng) * n), n - 1);
    }
    centers.push_back(pick);
    d2 = d2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < comps; ++k) {
      const double d = (x.row(i) - x.row(centers[static_cast<std::size_t>(k)])).squaredNorm();
      if (d < best) {
        best = d;
        assign[static_cast<std::size_t>(i)] = k;
      }
    }
  }

  Params p;
  p.weights = Eigen::VectorXd::Zero(comps);
  p.means = Eigen::MatrixXd::Zero(comps, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = assign[static_cast<std::size_t>(i)];
    p.weights[k] += 1.0;
    p.means.row(k) += x.row(i);
  }
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(dim, dim);
  for (int k = 0; k < comps; ++k) {
    if (p.weights[k] > 0) {
      p.means.row(k) /= p.weights[k];
    } else {
      p.means.row(k) = x.row(centers[static_cast<std::size_t>(k)]);
      p.weights[k] = 1.0;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd diff = x.row(i) - p.means.row(assign[static_cast<std::size_t>(i)]);
    pooled.noalias() += diff.transpose() * diff;
  }
  pooled /= static_cast<double>(n);
  pooled.diagonal().array() += reg;
  p.weights /= p.weights.sum();
  p.covs.assign(static_cast<std::size_t>(comps), pooled);
  return p;
}

struct RunResult {
  Params params;
  GmmFitInfo info;
};

std::optional<RunResult> RunEm(const Eigen::MatrixXd& x, const GmmFitOptions& opt,
                               std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  const Eigen::Index dim = x.cols();
  const int comps = opt.n_components;
  const int max_reinit = 10 * comps;
  Eigen::MatrixXd global_cov = Covariance(x);
  global_cov.diagonal().array() += opt.regularization;

  RunResult run;
  run.params = Initialize(x, comps, opt.regularization, rng);
  auto& p = run.params;
  auto& info = run.info;
  double prev = -std::numeric_limits<double>::infinity();
  try {
    for (int it = 0; it < opt.max_iter; ++it) {
      // E-step at the current parameters.
      Eigen::MatrixXd log_joint = LogJoint(x, p);
      const Eigen::VectorXd lse = RowLogSumExp(log_joint);
      const double ll = lse.mean();
      if (!std::isfinite(ll)) return std::nullopt;
      info.loglik_trace.push_back(ll);
      info.iterations = it + 1;
      info.final_loglik = ll;
      if (it > 0 && (ll - prev) < opt.tol * std::max(std::abs(prev), 1e-300)) {
        info.converged = true;
        break;
      }
      prev = ll;
      if (it + 1 == opt.max_iter) break;

      // M-step. Responsibilities are row-normalized joints.
      Eigen::MatrixXd resp = (log_joint.colwise() - lse).array().exp();
      const Eigen::VectorXd nk = resp.colwise().sum().transpose();
      const double total = nk.sum();
      for (int k = 0; k < comps; ++k) {
        if (nk[k] / total < kCollapseWeight) {
          if (++info.reinitializations > max_reinit) return std::nullopt;
          Eigen::Index worst = 0;
          lse.minCoeff(&worst);
          p.means.row(k) = x.row(worst);
          p.covs[static_cast<std::size_t>(k)] = global_cov;
          p.weights[k] = 1.0 / static_cast<double>(n);
          info.reinit_iterations.push_back(it);
          continue;
        }
        p.weights[k] = nk[k] / total;
        const Eigen::RowVectorXd mean = (resp.col(k).transpose() * x) / nk[k];
        p.means.row(k) = mean;
        const Eigen::MatrixXd centered = x.rowwise() - mean;
        Eigen::MatrixXd cov =
            (centered.transpose() * centered.cwiseProduct(resp.col(k).replicate(1, dim))) / nk[k];
        cov = 0.5 * (cov + cov.transpose());
        cov.diagonal().array() += opt.regularization;
        p.covs[static_cast<std::size_t>(k)] = std::move(cov);
      }
      p.weights /= p.weights.sum();
    }
  } catch (const NumericalError&) {
    return std::nullopt;
  }
  return run;
}

}  // namespace

Eigen::MatrixXd Standardization::Apply(const Eigen::MatrixXd& rows) const {
  return (rows.rowwise() - mean.transpose()).array().rowwise() / stddev.transpose().array();
}

Eigen::VectorXd Standardization::Apply(const Eigen::VectorXd& x) const {
  return (x - mean).cwiseQuotient(stddev);
}

Standardization Standardization::Identity(Eigen::Index dim) {
  return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

Standardization StandardizeFit(const Eigen::MatrixXd& scores) {
  if (scores.rows() == 0) throw FitError("standardization: empty score matrix");
  Standardization s;
  s.mean = scores.colwise().mean().transpose();
  const Eigen::MatrixXd centered = scores.rowwise() - s.mean.transpose();
  s.stddev = (centered.colwise().squaredNorm() / static_cast<double>(scores.rows()))
                 .cwiseSqrt()
                 .transpose()
                 .cwiseMax(Standardization::kStdFloor);
  return s;
}

GmmModel::GmmModel(Eigen::VectorXd weights, Eigen::MatrixXd means,
                   std::vector<Eigen::MatrixXd> covariances, Standardization standardization,
                   GmmFitInfo info)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      covariances_(std::move(covariances)),
      standardization_(std::move(standardization)),
      info_(std::move(info)) {
  const Eigen::Index comps = weights_.size();
  const Eigen::Index dim = means_.cols();
  if (means_.rows() != comps || static_cast<Eigen::Index>(covariances_.size()) != comps ||
      standardization_.mean.size() != dim || standardization_.stddev.size() != dim) {
    throw FormatError("GMM: inconsistent parameter shapes");
  }
  log_norm_.resize(comps);
  for (Eigen::Index k = 0; k < comps; ++k) {
    const auto& cov = covariances_[static_cast<std::size_t>(k)];
    if (cov.rows() != dim || cov.cols() != dim) throw FormatError("GMM: covariance shape mismatch");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("GMM: covariance " + std::to_string(k) + " is not positive definite");
    }
    chol_lower_.push_back(llt.matrixL());
    const double log_det = 2.0 * chol_lower_.back().diagonal().array().log().sum();
    log_norm_[k] = std::log(weights_[k]) - 0.5 * (static_cast<double>(dim) * kLog2Pi + log_det);
  }
}

double GmmModel::LogLikStandardized(const Eigen::VectorXd& z) const {
  Eigen::MatrixXd row = z.transpose();
  return LogLikStandardized(row)[0];
}

Eigen::VectorXd GmmModel::LogLikStandardized(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != dim()) {
    throw DataError("GMM: expected " + std::to_string(dim()) + "-d score vectors, got " +
                    std::to_string(rows.cols()));
  }
  Eigen::MatrixXd joint(rows.rows(), n_components());
  for (int k = 0; k < n_components(); ++k) {
    Eigen::MatrixXd centered = (rows.rowwise() - means_.row(k)).transpose();
    chol_lower_[static_cast<std::size_t>(k)].triangularView<Eigen::Lower>().solveInPlace(centered);
    joint.col(k) =
        (log_norm_[k] - 0.5 * centered.colwise().squaredNorm().array()).matrix().transpose();
  }
  return RowLogSumExp(joint);
}

double GmmModel::LogLik(const Eigen::VectorXd& raw) const {
  return LogLikStandardized(standardization_.Apply(raw));
}

Eigen::VectorXd GmmModel::LogLik(const Eigen::MatrixXd& raw_rows) const {
  return LogLikStandardized(standardization_.Apply(raw_rows));
}

double GmmModel::LogJacobian() const { return -standardization_.stddev.array().log().sum(); }

GmmModel GmmFit(const Eigen::MatrixXd& standardized, const GmmFitOptions& options,
                const Standardization& standardization) {
  const Eigen::Index n = standardized.rows();
  if (options.n_components < 1) throw FitError("GMM: need at least one component");
  if (standardized.cols() < 1) throw FitError("GMM: score vectors must have K >= 1");
  if (n < 10 * static_cast<Eigen::Index>(options.n_components)) {
    throw FitError("GMM: " + std::to_string(n) + " samples is fewer than 10 x " +
                   std::to_string(options.n_components) + " components");
  }
  if (!standardized.allFinite()) throw DataError("GMM: non-finite training scores");
  if (options.restarts < 1 || options.max_iter < 1) {
    throw FitError("GMM: restarts and max_iter must be positive");
  }

  std::optional<RunResult> best;
  for (int r = 0; r < options.restarts; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(options.seed & 0xFFFFFFFFu),
                      static_cast<std::uint32_t>(options.seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    auto run = RunEm(standardized, options, rng);
    if (!run) continue;
    run->info.best_restart = r;
    if (!best || run->info.final_loglik > best->info.final_loglik) best = std::move(run);
  }
  if (!best) {
    throw FitError("GMM: all " + std::to_string(options.restarts) +
                   " restarts failed (component collapse or singular covariance)");
  }
  best->info.seed = options.seed;
  best->info.regularization = options.regularization;
  return GmmModel(std::move(best->params.weights), std::move(best->params.means),
                  std::move(best->params.covs), standardization, std::move(best->info));
}

GmmModel FitScoreGmm(const Eigen::MatrixXd& raw_scores, const GmmFitOptions& options) {
  const Standardization s = StandardizeFit(raw_scores);
  return GmmFit(s.Apply(raw_scores), options, s);
}

double GmmLogLik(const GmmModel& model, const Eigen::VectorXd& raw) { return model.LogLik(raw); }

void SaveGmm(const fs::path& dir, const std::string& ensemble_id,
             const std::vector<std::string>& member_names, const GmmModel& model) {
  fs::create_directories(dir);
  const std::string prefix = "gmm_" + ensemble_id;
  const auto& info = model.info();
  json j;
  j["format"] = "oodens-gmm/1";
  j["ensemble_id"] = ensemble_id;
  j["members"] = member_names;
  j["n_components"] = model.n_components();
  j["dim"] = model.dim();
  j["seed"] = info.seed;
  j["regularization"] = info.regularization;
  j["iterations"] = info.iterations;
  j["converged"] = info.converged;
  j["final_loglik"] = info.final_loglik;
  j["best_restart"] = info.best_restart;
  j["reinitializations"] = info.reinitializations;
  {
    std::ofstream out(dir / (prefix + ".json"), std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (dir / (prefix + ".json")).string());
    out << j.dump(2) << "\n";
  }
  WriteVectorF64(dir / (prefix + "_weights.npy"), model.weights());
  WriteMatrixF64(dir / (prefix + "_means.npy"), model.means());
  const auto comps = static_cast<std::size_t>(model.n_components());
  const auto dim = static_cast<std::size_t>(model.dim());
  std::vector<double> covs;
  covs.reserve(comps * dim * dim);
  for (const auto& c : model.covariances()) {
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      for (Eigen::Index q = 0; q < c.cols(); ++q) covs.push_back(c(r, q));
    }
  }
  npy::Write(dir / (prefix + "_covariances.npy"), npy::FromFloat64({comps, dim, dim}, covs));
  Eigen::MatrixXd standard(2, model.dim());
  standard.row(0) = model.standardization().mean.transpose();
  standard.row(1) = model.standardization().stddev.transpose();
  WriteMatrixF64(dir / (prefix + "_standardization.npy"), standard);
}

GmmModel LoadGmm(const fs::path& dir, const std::string& ensemble_id,
                 std::vector<std::string>* member_names) {
  const std::string prefix = "gmm_" + ensemble_id;
  const fs::path meta = dir / (prefix + ".json");
  std::ifstream in(meta, std::ios::binary);
  if (!in) throw FormatError("missing file: " + meta.string());
  json j;
  GmmFitInfo info;
  try {
    j = json::parse(in);
    info.seed = j.at("seed").get<std::uint64_t>();
    info.regularization = j.at("regularization").get<double>();
    info.iterations = j.at("iterations").get<int>();
    info.converged = j.at("converged").get<bool>();
    info.final_loglik = j.at("final_loglik").get<double>();
    info.best_restart = j.at("best_restart").get<int>();
    info.reinitializations = j.at("reinitializations").get<int>();
    if (member_names) *member_names = j.at("members").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(meta.string() + ": " + e.what());
  }
  Eigen::VectorXd weights = ReadVector(dir / (prefix + "_weights.npy"));
  Eigen::MatrixXd means = ReadMatrix(dir / (prefix + "_means.npy"));
  const fs::path cov_path = dir / (prefix + "_covariances.npy");
  const auto cov_array = npy::Read(cov_path);
  if (cov_array.shape.size() != 3 || cov_array.shape[1] != cov_array.shape[2]) {
    throw FormatError(cov_path.string() + ": expected an n x K x K array");
  }
  const auto values = cov_array.AsDoubles();
  const auto dim = static_cast<Eigen::Index>(cov_array.shape[1]);
  std::vector<Eigen::MatrixXd> covs;
  for (std::size_t k = 0; k < cov_array.shape[0]; ++k) {
    covs.push_back(Eigen::Map<const RowMajorMatrix>(
        values.data() + k * static_cast<std::size_t>(dim * dim), dim, dim));
  }
  const Eigen::MatrixXd standard = ReadMatrix(dir / (prefix + "_standardization.npy"));
  if (standard.rows() != 2) throw FormatError(prefix + "_standardization.npy: expected 2 rows");
  Standardization s{standard.row(0).transpose(), standard.row(1).transpose()};
  return GmmModel(std::move(weights), std::move(means), std::move(covs), std::move(s),
                  std::move(info));
}

}  // namespace oodens
