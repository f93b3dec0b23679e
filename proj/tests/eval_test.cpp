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

#include "oodens/eval.hpp"

#include <cmath>
#include <cstdlib>
#include <random>

#include <gtest/gtest.h>

#include "oodens/errors.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace oodens {
namespace {

// Record whose scorer value is `score` and whose prediction is set directly.
SampleRecord Rec(std::int64_t id, int label, int prediction, double score) {
  SampleRecord r = testutil::Record(id, label, Eigen::Vector2d(score, 0.0));
  r.prediction = prediction;
  return r;
}

const Scorer kFirstLogit{"first", [](const DatasetBundle& b) {
                           std::vector<double> v;
                           for (const auto& r : b.records) v.push_back(r.logits[0]);
                           return v;
                         }};

std::vector<double> Draw(std::mt19937_64& rng, int n, double mean) {
  std::normal_distribution<double> z(mean, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = z(rng);
  return v;
}

TEST(Auroc, Examples) {
  EXPECT_EQ(Auroc(std::vector<double>{3, 2}, std::vector<double>{1, 0}), 1.0);
  EXPECT_EQ(Auroc(std::vector<double>{1}, std::vector<double>{1}), 0.5);
  EXPECT_EQ(Auroc(std::vector<double>{0}, std::vector<double>{1}), 0.0);
  EXPECT_EQ(Auroc(std::vector<double>{1, 2}, std::vector<double>{1.5}), 0.5);
}

TEST(Auroc, EmptyOrNanIsEvaluationError) {
  EXPECT_THROW(Auroc(std::vector<double>{}, std::vector<double>{1}), EvaluationError);
  EXPECT_THROW(Auroc(std::vector<double>{1}, std::vector<double>{}), EvaluationError);
  EXPECT_THROW(Auroc(std::vector<double>{std::nan("")}, std::vector<double>{1}), EvaluationError);
}

TEST(Auroc, MatchesBruteForceWithTies) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coarse(0, 20);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> id = Draw(rng, 200, 0.5), ood = Draw(rng, 200, 0.0);
    if (t % 2) {
      for (auto& x : id) x = coarse(rng);
      for (auto& x : ood) x = coarse(rng) - 2;
    }
    EXPECT_NEAR(Auroc(id, ood), oracle::BruteAuc(id, ood), 1e-12);
  }
}

TEST(Auroc, InvariantUnderIncreasingTransforms) {
  std::mt19937_64 rng(2);
  const std::vector<double> id = Draw(rng, 300, 0.7), ood = Draw(rng, 250, 0.0);
  const double base = Auroc(id, ood);
  auto map = [](std::vector<double> v, auto f) {
    for (auto& x : v) x = f(x);
    return v;
  };
  const auto affine = [](double x) { return 2 * x + 1; };
  const auto expo = [](double x) { return std::exp(x); };
  EXPECT_EQ(Auroc(map(id, affine), map(ood, affine)), base);
  EXPECT_EQ(Auroc(map(id, expo), map(ood, expo)), base);
  // Swapping sides and orientation for tie-free data.
  const auto neg = [](double x) { return -x; };
  EXPECT_NEAR(Auroc(map(ood, neg), map(id, neg)), base, 1e-15);
  EXPECT_NEAR(base + Auroc(ood, id), 1.0, 1e-15);
}

TEST(Dsd, IdenticalBundlesGiveHalf) {
  std::vector<SampleRecord> recs;
  for (int i = 0; i < 40; ++i) recs.push_back(Rec(i, i % 2, i % 2, 0.1 * i));
  const auto id = testutil::Bundle("a", ShiftType::kInDistribution, recs, 2);
  const auto ood = testutil::Bundle("b", ShiftType::kSynthetic, recs, 2);
  const TaskResult r = EvaluateDsd(id, ood, kFirstLogit);
  EXPECT_EQ(r.auc, 0.5);
  EXPECT_EQ(r.n_id, 40u);
  EXPECT_EQ(r.n_ood, 40u);
  EXPECT_EQ(r.shift_type, ShiftType::kSynthetic);
  EXPECT_EQ(r.dataset, "b");
  EXPECT_EQ(r.scorer, "first");
}

TEST(Dsd, UniformlyLowerOodGivesOne) {
  std::vector<SampleRecord> a, b;
  for (int i = 0; i < 30; ++i) {
    a.push_back(Rec(i, 0, 0, 10 + i));
    b.push_back(Rec(i, -1, 0, -i));
  }
  EXPECT_EQ(EvaluateDsd(testutil::Bundle("a", ShiftType::kInDistribution, a, 2),
                        testutil::Bundle("b", ShiftType::kNovelClasses, b, 2), kFirstLogit)
                .auc,
            1.0);
}

TEST(Dsd, MultiLabelRestrictsIdSide) {
  std::vector<SampleRecord> a, b;
  // Class 0/1 records score low, class 2 records score high.
  for (int i = 0; i < 30; ++i) {
    const int y = i % 3;
    a.push_back(Rec(i, y, y, y == 2 ? 100.0 + i : static_cast<double>(i)));
  }
  for (int i = 0; i < 10; ++i) b.push_back(Rec(i, -1, 0, 3.0 * i - 0.5));
  const auto id = testutil::Bundle("id", ShiftType::kInDistribution, a, 3);
  auto ood = testutil::Bundle("multi", ShiftType::kMultiLabel, b, 3);
  const TaskResult unrestricted = EvaluateDsd(id, ood, kFirstLogit);
  EXPECT_EQ(unrestricted.n_id, 30u);
  ood.manifest.label_restriction = std::set<int>{0, 1};
  const TaskSides sides = DsdSides(id, ood);
  EXPECT_EQ(sides.id_indices.size(), 20u);
  for (auto i : sides.id_indices) EXPECT_NE(a[i].label, 2);
  const TaskResult restricted = EvaluateDsd(id, ood, kFirstLogit);
  EXPECT_EQ(restricted.n_id, 20u);
  std::vector<double> id_scores, ood_scores;
  for (const auto& r : a) {
    if (r.label != 2) id_scores.push_back(r.logits[0]);
  }
  for (const auto& r : b) ood_scores.push_back(r.logits[0]);
  EXPECT_NEAR(restricted.auc, oracle::BruteAuc(id_scores, ood_scores), 1e-12);
  EXPECT_LT(restricted.auc, unrestricted.auc);
  // Restriction applies only to multi-label sets.
  ood.manifest.shift_type = ShiftType::kSynthetic;
  EXPECT_EQ(DsdSides(id, ood).id_indices.size(), 30u);
}

TEST(Dsd, DisjointHalvesOfOneSetAreNearRandom) {
  std::mt19937_64 rng(3);
  const std::vector<double> v = Draw(rng, 4000, 0.0);
  std::vector<SampleRecord> a, b;
  for (int i = 0; i < 2000; ++i) {
    a.push_back(Rec(i, 0, 0, v[static_cast<std::size_t>(i)]));
    b.push_back(Rec(i, 0, 0, v[static_cast<std::size_t>(2000 + i)]));
  }
  const double auc = EvaluateDsd(testutil::Bundle("a", ShiftType::kInDistribution, a, 2),
                                 testutil::Bundle("b", ShiftType::kSynthetic, b, 2), kFirstLogit)
                         .auc;
  EXPECT_GE(auc, 0.45);
  EXPECT_LE(auc, 0.55);
}

TEST(EdIndist, SidesAndAllCorrectError) {
  std::vector<SampleRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(Rec(i, 0, i < 3 ? 1 : 0, i < 3 ? -1.0 * i : 1.0 * i));
  const auto id = testutil::Bundle("id", ShiftType::kInDistribution, recs, 2);
  const TaskSides s = EdIndistSides(id);
  EXPECT_EQ(s.ood_indices, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(s.id_indices.size(), 7u);
  const TaskResult r = EvaluateEd(EvalSetting::kEdIndist, id, nullptr, kFirstLogit);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.n_ood, 3u);
  EXPECT_EQ(r.shift_type, ShiftType::kInDistribution);

  for (auto& rec : recs) rec.prediction = rec.label;
  try {
    EvaluateEd(EvalSetting::kEdIndist, testutil::Bundle("id", ShiftType::kInDistribution, recs, 2), nullptr,
               kFirstLogit);
    FAIL() << "expected EvaluationError";
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("OOD"), std::string::npos) << e.what();
  }
}

TEST(EdAdversarial, OnlySuccessfulPairsCount) {
  std::vector<SampleRecord> clean, adv;
  clean.push_back(Rec(10, 0, 0, 5.0));   // correct, attack succeeds
  clean.push_back(Rec(11, 1, 1, 4.0));   // correct, attack fails
  clean.push_back(Rec(12, 1, 0, 3.0));   // already wrong
  auto attacked = [](std::int64_t id, std::int64_t origin, int label, int pred, double s) {
    SampleRecord r = Rec(id, label, pred, s);
    r.origin_id = origin;
    return r;
  };
  adv.push_back(attacked(0, 10, 0, 1, 1.0));
  adv.push_back(attacked(1, 11, 1, 1, 9.0));
  adv.push_back(attacked(2, 12, 1, 1, 9.0));
  const auto c = testutil::Bundle("clean", ShiftType::kInDistribution, clean, 2);
  const auto a = testutil::Bundle("adv", ShiftType::kAdversarial, adv, 2);
  const PairedBundle pairs = LinkCounterparts(a, c);
  EXPECT_EQ(pairs.successful_count(), 1u);
  const TaskSides s = EdAdversarialSides(pairs);
  EXPECT_EQ(s.ood_indices, (std::vector<std::size_t>{0}));
  EXPECT_EQ(s.id_indices, (std::vector<std::size_t>{0}));
  const TaskResult r = EvaluateEd(EvalSetting::kEdAdversarial, c, &a, kFirstLogit);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.n_id, 1u);
  EXPECT_EQ(r.n_ood, 1u);
  EXPECT_EQ(r.shift_type, ShiftType::kAdversarial);
  // DSD on the same pair keeps every record.
  EXPECT_EQ(EvaluateDsd(c, a, kFirstLogit).n_ood, 3u);
}

TEST(EdCorruption, MatchesFilteredOracle) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> cls(0, 2);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<SampleRecord> id, ood;
  for (int i = 0; i < 300; ++i) {
    const int y = cls(rng);
    id.push_back(Rec(i, y, i % 9 == 0 ? (y + 1) % 3 : y, z(rng) + 1.0));
    const int yo = cls(rng);
    ood.push_back(Rec(i, yo, i % 3 == 0 ? (yo + 2) % 3 : yo, z(rng)));
  }
  std::vector<double> good_id, bad_ood;
  for (const auto& r : id) {
    if (r.correct()) good_id.push_back(r.logits[0]);
  }
  for (const auto& r : ood) {
    if (!r.correct()) bad_ood.push_back(r.logits[0]);
  }
  const auto ib = testutil::Bundle("id", ShiftType::kInDistribution, id, 3);
  const auto ob = testutil::Bundle("c", ShiftType::kCorruption, ood, 3);
  const TaskResult r = EvaluateEd(EvalSetting::kEdCorruption, ib, &ob, kFirstLogit);
  EXPECT_NEAR(r.auc, oracle::BruteAuc(good_id, bad_ood), 1e-12);
  EXPECT_EQ(r.n_id, good_id.size());
  EXPECT_EQ(r.n_ood, bad_ood.size());
}

TEST(Accuracy, LabelledOnly) {
  std::vector<SampleRecord> recs = {Rec(0, 0, 0, 0), Rec(1, 1, 0, 0), Rec(2, -1, 0, 0), Rec(3, 1, 1, 0)};
  EXPECT_NEAR(*Accuracy(testutil::Bundle("x", ShiftType::kCorruption, recs, 2)), 2.0 / 3.0, 1e-15);
  EXPECT_FALSE(Accuracy(testutil::Bundle("x", ShiftType::kSynthetic, {Rec(0, -1, 0, 0)}, 2)).has_value());
}

TaskResult Task(EvalSetting s, ShiftType t, std::string ds, std::string scorer, double auc) {
  return {s, t, std::move(ds), std::move(scorer), auc, 10, 10};
}

TEST(Aggregate, TypeMeansThenOverallMean) {
  std::vector<TaskResult> tasks = {
      Task(EvalSetting::kDsd, ShiftType::kNovelClasses, "n1", "MSP", 0.9),
      Task(EvalSetting::kDsd, ShiftType::kNovelClasses, "n2", "MSP", 0.8),
      Task(EvalSetting::kDsd, ShiftType::kNovelClasses, "n3", "MSP", 0.7),
      Task(EvalSetting::kDsd, ShiftType::kSynthetic, "s1", "MSP", 0.4),
      Task(EvalSetting::kEdIndist, ShiftType::kInDistribution, "t", "MSP", 0.6),
  };
  const EvalReport r = AggregateReport(tasks);
  ASSERT_EQ(r.tasks.size(), 5u);
  bool saw_novel = false;
  for (const auto& a : r.type_averages) {
    if (a.family == "DSD" && a.shift_type == ShiftType::kNovelClasses) {
      EXPECT_NEAR(a.auc, 0.8, 1e-15);
      EXPECT_EQ(a.datasets, 3u);
      saw_novel = true;
    }
  }
  EXPECT_TRUE(saw_novel);
  bool saw_dsd = false;
  for (const auto& o : r.overall) {
    if (o.family == "DSD" && o.scorer == "MSP") {
      EXPECT_NEAR(o.auc, 0.6, 1e-15);  // (0.8 + 0.4) / 2, not (0.9+0.8+0.7+0.4) / 4 = 0.7
      EXPECT_EQ(o.shift_types, 2u);
      saw_dsd = true;
    }
    if (o.family == "ED") {
      EXPECT_NEAR(o.auc, 0.6, 1e-15);
    }
  }
  EXPECT_TRUE(saw_dsd);
}

TEST(Aggregate, FiveTypesOneDatasetEach) {
  const std::vector<ShiftType> types = {ShiftType::kNovelClasses, ShiftType::kAdversarial, ShiftType::kSynthetic,
                                        ShiftType::kCorruption, ShiftType::kMultiLabel};
  const std::vector<double> aucs = {0.91, 0.62, 0.77, 0.58, 0.83};
  std::vector<TaskResult> tasks;
  for (std::size_t i = 0; i < types.size(); ++i) {
    tasks.push_back(Task(EvalSetting::kDsd, types[i], "d" + std::to_string(i), "EBO", aucs[i]));
  }
  const EvalReport r = AggregateReport(tasks);
  ASSERT_EQ(r.overall.size(), 1u);
  EXPECT_NEAR(r.overall[0].auc, (0.91 + 0.62 + 0.77 + 0.58 + 0.83) / 5, 1e-15);
}

TEST(Report, EmptyCsvIsHeaderOnly) {
  EXPECT_EQ(EmitReport(EvalReport{}, ReportFormat::kCsv), "setting,shift_type,dataset,scorer,auc,n_id,n_ood\n");
  EXPECT_TRUE(ParseReportCsv(EmitReport(EvalReport{}, ReportFormat::kCsv)).empty());
}

EvalReport SampleReport() {
  std::vector<TaskResult> tasks;
  const std::vector<double> id = {0.9, 0.8, 0.8, 0.3, 0.65, 0.1};
  const std::vector<double> near = {0.85, 0.5, 0.2, 0.2, 0.7};
  const std::vector<double> far = {-1.0, 0.0, 0.05, 0.2};
  for (const std::string scorer : {"MSP", "Ens-F"}) {
    const double shift = scorer == "MSP" ? 0.0 : 0.1;
    std::vector<double> n = near, f = far;
    for (auto& x : n) x -= shift;
    for (auto& x : f) x -= shift;
    tasks.push_back({EvalSetting::kDsd, ShiftType::kNovelClasses, "near", scorer, Auroc(id, n), id.size(), n.size()});
    tasks.push_back({EvalSetting::kDsd, ShiftType::kNovelClasses, "far", scorer, Auroc(id, f), id.size(), f.size()});
    tasks.push_back({EvalSetting::kDsd, ShiftType::kCorruption, "blur, heavy", scorer, Auroc(n, f), n.size(), f.size()});
    tasks.push_back({EvalSetting::kEdIndist, ShiftType::kInDistribution, "test", scorer, 2.0 / 3.0, 3, 2});
    tasks.push_back({EvalSetting::kEdAdversarial, ShiftType::kAdversarial, "adv", scorer, 1.0, 1, 1});
  }
  return AggregateReport(tasks, {{"test", 0.975}, {"blur, heavy", 0.5}}, {{"MSP", 0.01}});
}

TEST(Report, JsonRoundTripIsIdempotent) {
  const std::string a = EmitReport(SampleReport(), ReportFormat::kJson);
  const std::string b = EmitReport(ParseReportJson(a), ReportFormat::kJson);
  EXPECT_EQ(a, b);
}

TEST(Report, CsvRoundTrip) {
  const EvalReport r = SampleReport();
  const auto rows = ParseReportCsv(EmitReport(r, ReportFormat::kCsv));
  ASSERT_EQ(rows.size(), r.tasks.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].dataset, r.tasks[i].dataset);
    EXPECT_EQ(rows[i].scorer, r.tasks[i].scorer);
    EXPECT_EQ(rows[i].auc, r.tasks[i].auc);
    EXPECT_EQ(rows[i].setting, r.tasks[i].setting);
    EXPECT_EQ(rows[i].n_ood, r.tasks[i].n_ood);
  }
}

TEST(Report, FormatDoubleRoundTrips) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng);
    EXPECT_EQ(std::stod(FormatDouble(x)), x);
  }
  EXPECT_EQ(FormatDouble(0.5), "0.5");
  EXPECT_EQ(FormatDouble(1.0), "1");
}

TEST(Report, GoldenFiles) {
  const std::filesystem::path dir = OODENS_TEST_DATA;
  const EvalReport r = SampleReport();
  const std::string csv = EmitReport(r, ReportFormat::kCsv);
  const std::string json = EmitReport(r, ReportFormat::kJson);
  if (std::getenv("OODENS_UPDATE_GOLDEN") != nullptr) {
    testutil::Spit(dir / "report_golden.csv", csv);
    testutil::Spit(dir / "report_golden.json", json);
  }
  EXPECT_EQ(csv, testutil::Slurp(dir / "report_golden.csv"));
  EXPECT_EQ(json, testutil::Slurp(dir / "report_golden.json"));
}

}  // namespace
}  // namespace oodens
