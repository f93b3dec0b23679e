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

#include "oodens/fixture.hpp"

#include <cmath>
#include <numbers>

#include "oodens/errors.hpp"
#include "oodens/ingest.hpp"

namespace oodens {

namespace fs = std::filesystem;

double NormalSource::Normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = Uniform();
  while (u1 <= 0.0) u1 = Uniform();
  const double u2 = Uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

std::vector<std::string> FixtureOodIds() {
  return {"novel", "adv", "synthetic", "corrupt", "multi"};
}

namespace {

constexpr const char* kEarly = "block1";
constexpr const char* kPenult = "penultimate";

double F32(double x) { return static_cast<double>(static_cast<float>(x)); }

Eigen::VectorXd F32(const Eigen::VectorXd& v) { return v.unaryExpr([](double x) { return F32(x); }); }
Eigen::MatrixXd F32(const Eigen::MatrixXd& m) { return m.unaryExpr([](double x) { return F32(x); }); }

class Generator {
 public:
  Generator(const FixtureOptions& o, ModelHead head, Eigen::MatrixXd early_map,
            Eigen::MatrixXd class_means)
      : o_(o), head_(std::move(head)), early_map_(std::move(early_map)),
        means_(std::move(class_means)) {}

  // Builds a record from penultimate features; `view_noise` scales the spread
  // of the augmented views.
  SampleRecord Make(NormalSource& src, std::int64_t id, int label, const Eigen::VectorXd& penult,
                    double view_noise) const {
    SampleRecord r;
    r.sample_id = id;
    r.label = label;
    const Eigen::VectorXd f = F32(penult);
    Eigen::VectorXd early = early_map_ * f;
    for (Eigen::Index j = 0; j < early.size(); ++j) early[j] += 0.3 * src.Normal();
    r.features[kEarly] = F32(early);
    r.features[kPenult] = f;
    r.logits = F32(Eigen::VectorXd(head_.weight * f + head_.bias));
    r.prediction = ArgMax(r.logits);

    Eigen::VectorXd odin = r.logits;
    odin[r.prediction] += 0.02 * (1.0 + 0.5 * src.Normal());
    r.odin_logits = F32(odin);

    Eigen::MatrixXd views(o_.views, o_.penultimate_dim);
    for (int v = 0; v < o_.views; ++v) {
      for (int j = 0; j < o_.penultimate_dim; ++j) views(v, j) = f[j] + view_noise * src.Normal();
    }
    r.view_features = F32(views);
    return r;
  }

  Eigen::VectorXd Around(NormalSource& src, const Eigen::VectorXd& center, double sigma) const {
    Eigen::VectorXd f = center;
    for (Eigen::Index j = 0; j < f.size(); ++j) f[j] += sigma * src.Normal();
    return f;
  }

  int RandomClass(NormalSource& src) const {
    return static_cast<int>(src.Bits() % static_cast<std::uint64_t>(o_.classes));
  }

  const Eigen::MatrixXd& means() const { return means_; }

 private:
  FixtureOptions o_;
  ModelHead head_;
  Eigen::MatrixXd early_map_;
  Eigen::MatrixXd means_;
};

DatasetManifest Manifest(const FixtureOptions& o, std::string id, ShiftType type, std::size_t n) {
  DatasetManifest m;
  m.dataset_id = std::move(id);
  m.shift_type = type;
  m.record_count = n;
  m.layer_names = {kEarly, kPenult};
  m.class_count = o.classes;
  m.has_aux_odin = true;
  m.has_aux_views = true;
  m.view_count = o.views;
  return m;
}

DatasetBundle InDistribution(const Generator& g, NormalSource& src, const FixtureOptions& o,
                             const std::string& id, std::size_t n) {
  DatasetBundle b;
  b.manifest = Manifest(o, id, ShiftType::kInDistribution, n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = g.RandomClass(src);
    const Eigen::VectorXd f = g.Around(src, g.means().row(y).transpose(), 0.9);
    b.records.push_back(g.Make(src, static_cast<std::int64_t>(i), y, f, 0.25));
  }
  return b;
}

}  // namespace

void WriteSyntheticFixture(const fs::path& root, const FixtureOptions& o) {
  if (o.classes < 2 || o.penultimate_dim < o.classes || o.early_dim < 1 || o.views < 2) {
    throw ConfigError("fixture: need >= 2 classes, D >= C and >= 2 views");
  }
  NormalSource src(o.seed);
  const int c = o.classes;
  const int d = o.penultimate_dim;

  Eigen::MatrixXd means(c, d);
  for (int k = 0; k < c; ++k) {
    for (int j = 0; j < d; ++j) means(k, j) = 1.0 + (j % c == k ? 2.0 : 0.0);
  }
  ModelHead head;
  head.penultimate_layer = kPenult;
  head.weight.resize(c, d);
  head.bias.resize(c);
  for (int k = 0; k < c; ++k) {
    for (int j = 0; j < d; ++j) head.weight(k, j) = (j % c == k ? 1.2 : -0.2) + 0.05 * src.Normal();
    head.bias[k] = 0.5 + 0.1 * src.Normal();
  }
  head.weight = F32(head.weight);
  head.bias = F32(head.bias);
  Eigen::MatrixXd early_map(o.early_dim, d);
  for (int a = 0; a < o.early_dim; ++a) {
    for (int j = 0; j < d; ++j) early_map(a, j) = 0.4 * src.Normal();
  }

  fs::create_directories(root);
  WriteModelHead(root, head);
  const Generator g(o, head, early_map, means);

  WriteBundle(root, InDistribution(g, src, o, "id_train", o.train));
  WriteBundle(root, InDistribution(g, src, o, "id_val", o.validation));
  const DatasetBundle test = InDistribution(g, src, o, "id_test", o.test);
  WriteBundle(root, test);

  // Novel classes: mass spread over every dimension, no dominant class.
  {
    DatasetBundle b;
    b.manifest = Manifest(o, "novel", ShiftType::kNovelClasses, o.ood);
    const Eigen::VectorXd center = Eigen::VectorXd::Constant(d, 1.6);
    for (std::size_t i = 0; i < o.ood; ++i) {
      b.records.push_back(g.Make(src, static_cast<std::int64_t>(i), -1, g.Around(src, center, 1.1), 0.6));
    }
    WriteBundle(root, b);
  }
  // Adversarial: test samples pushed part of the way toward another class.
  {
    const std::size_t n = std::min(o.ood, test.records.size());
    DatasetBundle b;
    b.manifest = Manifest(o, "adv", ShiftType::kAdversarial, n);
    b.manifest.origin_dataset_id = "id_test";
    for (std::size_t i = 0; i < n; ++i) {
      const SampleRecord& clean = test.records[i];
      const int target = (clean.label + 1) % c;
      const double step = 0.3 + 0.5 * src.Uniform();
      const Eigen::VectorXd f = clean.features.at(kPenult) +
                                step * (means.row(target) - means.row(clean.label)).transpose();
      SampleRecord r = g.Make(src, static_cast<std::int64_t>(i), clean.label, g.Around(src, f, 0.2), 0.45);
      r.origin_id = clean.sample_id;
      b.records.push_back(std::move(r));
    }
    WriteBundle(root, b);
  }
  // Synthetic: class-conditional but contracted toward the origin.
  {
    DatasetBundle b;
    b.manifest = Manifest(o, "synthetic", ShiftType::kSynthetic, o.ood);
    for (std::size_t i = 0; i < o.ood; ++i) {
      const int y = g.RandomClass(src);
      const Eigen::VectorXd f = g.Around(src, 0.7 * means.row(y).transpose(), 0.5);
      b.records.push_back(g.Make(src, static_cast<std::int64_t>(i), -1, f, 0.35));
    }
    WriteBundle(root, b);
  }
  // Corruption: labelled, with inflated noise.
  {
    DatasetBundle b;
    b.manifest = Manifest(o, "corrupt", ShiftType::kCorruption, o.ood);
    for (std::size_t i = 0; i < o.ood; ++i) {
      const int y = g.RandomClass(src);
      const Eigen::VectorXd f = g.Around(src, means.row(y).transpose(), 1.7);
      b.records.push_back(g.Make(src, static_cast<std::int64_t>(i), y, f, 0.5));
    }
    WriteBundle(root, b);
  }
  // Multi-label: blends of classes 0 and 1.
  {
    DatasetBundle b;
    b.manifest = Manifest(o, "multi", ShiftType::kMultiLabel, o.ood);
    b.manifest.label_restriction = std::set<int>{0, 1};
    for (std::size_t i = 0; i < o.ood; ++i) {
      const double w = 0.3 + 0.4 * src.Uniform();
      const Eigen::VectorXd center = (w * means.row(0) + (1.0 - w) * means.row(1)).transpose();
      b.records.push_back(g.Make(src, static_cast<std::int64_t>(i), -1, g.Around(src, center, 0.8), 0.4));
    }
    WriteBundle(root, b);
  }
}

}  // namespace oodens
