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

#include "oodens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "oodens/errors.hpp"
#include "oodens/eval.hpp"

namespace oodens {

namespace {

Eigen::MatrixXd Rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

}  // namespace

TrainingSplit SplitScoreMatrix(const Eigen::MatrixXd& scores, const DatasetBundle& validation,
                               double heldout_fraction, std::uint64_t seed) {
  const std::size_t n = validation.records.size();
  if (static_cast<std::size_t>(scores.rows()) != n) {
    throw DataError("training split: score matrix rows do not match the bundle");
  }
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
    throw FitError("training split: held-out fraction must lie in [0, 1)");
  }
  for (const auto& r : validation.records) {
    if (r.label < 0) {
      throw DataError(validation.manifest.dataset_id + ": sample_id " +
                      std::to_string(r.sample_id) + " has no label");
    }
  }

  // Fisher-Yates with a platform-independent index draw.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  const auto heldout_n =
      static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n)));
  std::vector<std::size_t> heldout(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(heldout_n));
  std::vector<std::size_t> rest(perm.begin() + static_cast<std::ptrdiff_t>(heldout_n), perm.end());
  std::sort(heldout.begin(), heldout.end());
  std::sort(rest.begin(), rest.end());

  TrainingSplit split;
  std::vector<std::size_t> train;
  for (auto i : rest) {
    if (validation.records[i].correct()) {
      train.push_back(i);
      split.train_ids.push_back(validation.records[i].sample_id);
    } else {
      ++split.discarded_misclassified;
    }
  }
  if (train.empty()) {
    throw FitError(validation.manifest.dataset_id +
                   ": no correctly classified samples left to train the mixture");
  }
  split.train = Rows(scores, train);
  split.heldout = Rows(scores, heldout);
  for (auto i : heldout) {
    split.heldout_correct.push_back(validation.records[i].correct());
    split.heldout_ids.push_back(validation.records[i].sample_id);
  }
  return split;
}

TrainingSplit BuildTrainingMatrix(const DatasetBundle& validation, const FittedStats& stats,
                                  const EnsembleDefinition& ensemble, double heldout_fraction,
                                  std::uint64_t seed, const ScoreParams& params, int jobs) {
  const Eigen::MatrixXd scores =
      ComputeScoreMatrix(validation, stats, ensemble.members, params, jobs);
  return SplitScoreMatrix(scores, validation, heldout_fraction, seed);
}

ComponentSelection SelectNComponents(const Eigen::MatrixXd& train, const Eigen::MatrixXd& heldout,
                                     const std::vector<bool>& heldout_correct,
                                     const std::vector<int>& candidates,
                                     const GmmFitOptions& base_options) {
  if (candidates.empty()) throw FitError("component selection: no candidates");
  ComponentSelection out;
  out.candidates = candidates;
  std::sort(out.candidates.begin(), out.candidates.end());
  out.candidates.erase(std::unique(out.candidates.begin(), out.candidates.end()),
                       out.candidates.end());
  if (out.candidates.size() == 1) {
    out.selected = out.candidates.front();
    out.heldout_auc.push_back(std::nan(""));
    return out;
  }
  if (static_cast<std::size_t>(heldout.rows()) != heldout_correct.size()) {
    throw FitError("component selection: held-out flags do not match held-out rows");
  }

  const Standardization standard = StandardizeFit(train);
  const Eigen::MatrixXd z_train = standard.Apply(train);
  double best_auc = -1.0;
  for (int n : out.candidates) {
    GmmFitOptions opt = base_options;
    opt.n_components = n;
    const GmmModel model = GmmFit(z_train, opt, standard);
    const Eigen::VectorXd ll = model.LogLik(heldout);
    std::vector<double> correct, wrong;
    for (Eigen::Index i = 0; i < ll.size(); ++i) {
      (heldout_correct[static_cast<std::size_t>(i)] ? correct : wrong).push_back(ll[i]);
    }
    if (correct.empty() || wrong.empty()) {
      throw EvaluationError(std::string("component selection: held-out split has no ") +
                            (correct.empty() ? "correctly classified" : "misclassified") +
                            " samples");
    }
    const double auc = Auroc(correct, wrong);
    out.heldout_auc.push_back(auc);
    // Ascending candidates: ties keep the smaller n.
    if (auc > best_auc) {
      best_auc = auc;
      out.selected = n;
    }
  }
  return out;
}

Eigen::MatrixXd ScoreCorrelation(const Eigen::MatrixXd& scores) {
  const Eigen::Index k = scores.cols();
  const auto n = static_cast<double>(scores.rows());
  if (scores.rows() < 2) throw SelectionError("correlation needs at least two samples");
  const Eigen::MatrixXd centered = scores.rowwise() - scores.colwise().mean();
  const Eigen::VectorXd sd = (centered.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  Eigen::MatrixXd corr = (centered.transpose() * centered) / n;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      if (i == j) {
        corr(i, j) = 1.0;
      } else if (sd[i] > 0 && sd[j] > 0) {
        corr(i, j) = std::clamp(corr(i, j) / (sd[i] * sd[j]), -1.0, 1.0);
      } else {
        corr(i, j) = 0.0;
      }
    }
  }
  return corr;
}

MemberSelection SelectMembers(const Eigen::MatrixXd& clean_scores,
                              const std::vector<std::string>& names,
                              const std::vector<double>& indist_ed_auc,
                              const MemberSelectionOptions& options) {
  const auto k = static_cast<std::size_t>(clean_scores.cols());
  if (names.size() != k || indist_ed_auc.size() != k) {
    throw SelectionError("member selection: names/AUCs do not match the score matrix");
  }
  MemberSelection out;
  out.correlation = ScoreCorrelation(clean_scores);

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < k; ++i) {
    const double auc = indist_ed_auc[i];
    if (auc >= options.near_random_low && auc <= options.near_random_high) {
      out.near_random.push_back(names[i]);
    } else {
      order.push_back(i);
    }
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return indist_ed_auc[a] > indist_ed_auc[b];
  });
  std::vector<std::size_t> admitted;
  for (auto i : order) {
    const bool redundant = std::any_of(admitted.begin(), admitted.end(), [&](std::size_t a) {
      return std::abs(out.correlation(static_cast<Eigen::Index>(i),
                                      static_cast<Eigen::Index>(a))) >= options.corr_threshold;
    });
    if (redundant) {
      out.correlated.push_back(names[i]);
    } else {
      admitted.push_back(i);
      out.admitted.push_back(names[i]);
    }
  }
  if (out.admitted.size() < 2) {
    throw SelectionError("member selection admitted " + std::to_string(out.admitted.size()) +
                         " score(s); at least two are required");
  }
  return out;
}

}  // namespace oodens
