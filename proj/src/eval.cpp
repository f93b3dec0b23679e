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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "oodens/errors.hpp"

namespace oodens {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::pair<EvalSetting, std::string_view> kSettingNames[] = {
    {EvalSetting::kDsd, "DSD"},
    {EvalSetting::kEdIndist, "ED_indist"},
    {EvalSetting::kEdAdversarial, "ED_adversarial"},
    {EvalSetting::kEdCorruption, "ED_corruption"},
};

constexpr const char* kCsvHeader = "setting,shift_type,dataset,scorer,auc,n_id,n_ood";

std::vector<double> Gather(std::span<const double> values, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    if (i >= values.size()) throw EvaluationError("score index out of range");
    out.push_back(values[i]);
  }
  return out;
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

double ParseDouble(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("report: malformed number '" + s + "'");
  }
  return v;
}

}  // namespace

double Auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty()) throw EvaluationError("AUROC: in-distribution side is empty");
  if (ood_scores.empty()) throw EvaluationError("AUROC: OOD side is empty");
  // The detection statistic is the negated ID-score.
  std::vector<std::pair<double, bool>> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double v : id_scores) {
    if (std::isnan(v)) throw EvaluationError("AUROC: NaN score on the in-distribution side");
    all.emplace_back(-v, false);
  }
  for (double v : ood_scores) {
    if (std::isnan(v)) throw EvaluationError("AUROC: NaN score on the OOD side");
    all.emplace_back(-v, true);
  }
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t ood_in_group = 0;
    while (j < all.size() && all[j].first == all[i].first) ood_in_group += all[j++].second ? 1 : 0;
    // Ranks i+1 .. j share the midrank.
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    rank_sum += midrank * static_cast<double>(ood_in_group);
    i = j;
  }
  const auto m = static_cast<double>(ood_scores.size());
  const auto n = static_cast<double>(id_scores.size());
  return (rank_sum - m * (m + 1) / 2) / (m * n);
}

std::string_view ToString(EvalSetting setting) {
  for (const auto& [s, name] : kSettingNames) {
    if (s == setting) return name;
  }
  return "unknown";
}

EvalSetting ParseEvalSetting(std::string_view name) {
  for (const auto& [s, n] : kSettingNames) {
    if (n == name) return s;
  }
  throw FormatError("unknown evaluation setting '" + std::string(name) + "'");
}

std::string_view Family(EvalSetting setting) {
  return setting == EvalSetting::kDsd ? "DSD" : "ED";
}

Scorer MakeMemberScorer(ScoreKind kind, const FittedStats& stats, const ScoreParams& params,
                        int jobs) {
  return {std::string(ScoreName(kind)), [kind, &stats, params, jobs](const DatasetBundle& b) {
            const Eigen::MatrixXd m = ComputeScoreMatrix(b, stats, {kind}, params, jobs);
            return std::vector<double>(m.data(), m.data() + m.size());
          }};
}

Scorer MakeEnsembleScorer(const EnsembleDefinition& ensemble, const FittedStats& stats,
                          const GmmModel& model, const ScoreParams& params, int jobs) {
  if (static_cast<int>(ensemble.members.size()) != model.dim()) {
    throw ConfigError("ensemble '" + ensemble.ensemble_id + "' has " +
                      std::to_string(ensemble.members.size()) + " members but its GMM is " +
                      std::to_string(model.dim()) + "-d");
  }
  return {ensemble.ensemble_id,
          [ensemble, &stats, &model, params, jobs](const DatasetBundle& b) {
            const Eigen::MatrixXd m = ComputeScoreMatrix(b, stats, ensemble.members, params, jobs);
            const Eigen::VectorXd ll = model.LogLik(m);
            return std::vector<double>(ll.data(), ll.data() + ll.size());
          }};
}

TaskSides DsdSides(const DatasetBundle& id, const DatasetBundle& ood) {
  TaskSides sides;
  const auto& restriction = ood.manifest.label_restriction;
  const bool restrict = ood.manifest.shift_type == ShiftType::kMultiLabel && restriction;
  for (std::size_t i = 0; i < id.records.size(); ++i) {
    if (!restrict || restriction->contains(id.records[i].label)) sides.id_indices.push_back(i);
  }
  for (std::size_t i = 0; i < ood.records.size(); ++i) sides.ood_indices.push_back(i);
  return sides;
}

TaskSides EdIndistSides(const DatasetBundle& id) {
  TaskSides sides;
  for (std::size_t i = 0; i < id.records.size(); ++i) {
    const auto& r = id.records[i];
    if (r.label < 0) {
      throw EvaluationError(id.manifest.dataset_id + ": error detection needs labels, sample_id " +
                            std::to_string(r.sample_id) + " has none");
    }
    (r.correct() ? sides.id_indices : sides.ood_indices).push_back(i);
  }
  return sides;
}

TaskSides EdCorruptionSides(const DatasetBundle& id, const DatasetBundle& ood) {
  TaskSides sides;
  for (std::size_t i = 0; i < id.records.size(); ++i) {
    const auto& r = id.records[i];
    if (r.label < 0) {
      throw EvaluationError(id.manifest.dataset_id + ": error detection needs labels, sample_id " +
                            std::to_string(r.sample_id) + " has none");
    }
    if (r.correct()) sides.id_indices.push_back(i);
  }
  for (std::size_t i = 0; i < ood.records.size(); ++i) {
    const auto& r = ood.records[i];
    if (r.label < 0) {
      throw EvaluationError(ood.manifest.dataset_id + ": error detection needs labels, sample_id " +
                            std::to_string(r.sample_id) + " has none");
    }
    if (!r.correct()) sides.ood_indices.push_back(i);
  }
  return sides;
}

TaskSides EdAdversarialSides(const PairedBundle& pairs) {
  TaskSides sides;
  for (const auto& p : pairs.pairs) {
    if (!p.successful_attack) continue;
    sides.ood_indices.push_back(p.ood_index);
    sides.id_indices.push_back(p.clean_index);
  }
  return sides;
}

TaskResult EvaluateSides(EvalSetting setting, const TaskSides& sides,
                         std::span<const double> id_scores, std::span<const double> ood_scores,
                         std::string dataset, ShiftType shift_type, std::string scorer) {
  const std::string what = std::string(ToString(setting)) + " on " + dataset;
  if (sides.id_indices.empty()) {
    throw EvaluationError(what + ": no qualifying in-distribution samples");
  }
  if (sides.ood_indices.empty()) throw EvaluationError(what + ": no qualifying OOD samples");
  const auto id = Gather(id_scores, sides.id_indices);
  const auto ood = Gather(ood_scores, sides.ood_indices);
  return {setting, shift_type, std::move(dataset), std::move(scorer), Auroc(id, ood),
          id.size(), ood.size()};
}

TaskResult EvaluateDsd(const DatasetBundle& id, const DatasetBundle& ood, const Scorer& scorer) {
  const auto sides = DsdSides(id, ood);
  const auto id_scores = scorer.score(id);
  const auto ood_scores = scorer.score(ood);
  return EvaluateSides(EvalSetting::kDsd, sides, id_scores, ood_scores, ood.manifest.dataset_id,
                       ood.manifest.shift_type, scorer.name);
}

TaskResult EvaluateEd(EvalSetting setting, const DatasetBundle& id, const DatasetBundle* ood,
                      const Scorer& scorer) {
  switch (setting) {
    case EvalSetting::kEdIndist: {
      const auto sides = EdIndistSides(id);
      const auto scores = scorer.score(id);
      return EvaluateSides(setting, sides, scores, scores, id.manifest.dataset_id,
                           ShiftType::kInDistribution, scorer.name);
    }
    case EvalSetting::kEdCorruption:
    case EvalSetting::kEdAdversarial: {
      if (ood == nullptr) {
        throw EvaluationError(std::string(ToString(setting)) + " needs an OOD dataset");
      }
      const auto sides = setting == EvalSetting::kEdCorruption
                             ? EdCorruptionSides(id, *ood)
                             : EdAdversarialSides(LinkCounterparts(*ood, id));
      if (sides.id_indices.empty() || sides.ood_indices.empty()) {
        return EvaluateSides(setting, sides, {}, {}, ood->manifest.dataset_id,
                             ood->manifest.shift_type, scorer.name);
      }
      return EvaluateSides(setting, sides, scorer.score(id), scorer.score(*ood),
                           ood->manifest.dataset_id, ood->manifest.shift_type, scorer.name);
    }
    case EvalSetting::kDsd:
      if (ood == nullptr) throw EvaluationError("DSD needs an OOD dataset");
      return EvaluateDsd(id, *ood, scorer);
  }
  throw EvaluationError("unhandled evaluation setting");
}

std::optional<double> Accuracy(const DatasetBundle& bundle) {
  std::size_t labelled = 0;
  std::size_t correct = 0;
  for (const auto& r : bundle.records) {
    if (r.label < 0) continue;
    ++labelled;
    correct += r.correct() ? 1 : 0;
  }
  if (labelled == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(labelled);
}

EvalReport AggregateReport(std::vector<TaskResult> tasks, std::map<std::string, double> accuracy,
                           std::map<std::string, double> normalized_time) {
  EvalReport report;
  report.tasks = std::move(tasks);
  report.accuracy = std::move(accuracy);
  report.normalized_time = std::move(normalized_time);

  // Group keys keep first-appearance order of (family, scorer).
  std::vector<std::pair<std::string, std::string>> groups;
  for (const auto& t : report.tasks) {
    if (t.auc < 0.0 || t.auc > 1.0) {
      throw EvaluationError("AUC " + FormatDouble(t.auc) + " outside [0, 1] for " + t.dataset);
    }
    std::pair<std::string, std::string> key{std::string(Family(t.setting)), t.scorer};
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  std::stable_sort(groups.begin(), groups.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });  // DSD, ED

  for (const auto& [family, scorer] : groups) {
    std::map<ShiftType, std::pair<double, std::size_t>> per_type;
    for (const auto& t : report.tasks) {
      if (Family(t.setting) != family || t.scorer != scorer) continue;
      auto& acc = per_type[t.shift_type];
      acc.first += t.auc;
      acc.second += 1;
    }
    double overall = 0.0;
    for (const auto& [type, acc] : per_type) {
      const double mean = acc.first / static_cast<double>(acc.second);
      report.type_averages.push_back({family, scorer, type, mean, acc.second});
      overall += mean;
    }
    report.overall.push_back(
        {family, scorer, overall / static_cast<double>(per_type.size()), per_type.size()});
  }
  return report;
}

std::string FormatDouble(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  if (ec != std::errc()) return "nan";
  return std::string(buf, ptr);
}

std::string EmitReport(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::kCsv) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& t : report.tasks) {
      out += std::string(ToString(t.setting)) + "," + std::string(ToString(t.shift_type)) + "," +
             CsvField(t.dataset) + "," + CsvField(t.scorer) + "," + FormatDouble(t.auc) + "," +
             std::to_string(t.n_id) + "," + std::to_string(t.n_ood) + "\n";
    }
    return out;
  }
  ojson j;
  j["tasks"] = ojson::array();
  for (const auto& t : report.tasks) {
    j["tasks"].push_back({{"setting", ToString(t.setting)},
                          {"shift_type", ToString(t.shift_type)},
                          {"dataset", t.dataset},
                          {"scorer", t.scorer},
                          {"auc", t.auc},
                          {"n_id", t.n_id},
                          {"n_ood", t.n_ood}});
  }
  j["type_averages"] = ojson::array();
  for (const auto& a : report.type_averages) {
    j["type_averages"].push_back({{"family", a.family},
                                  {"scorer", a.scorer},
                                  {"shift_type", ToString(a.shift_type)},
                                  {"auc", a.auc},
                                  {"datasets", a.datasets}});
  }
  j["overall"] = ojson::array();
  for (const auto& o : report.overall) {
    j["overall"].push_back({{"family", o.family},
                            {"scorer", o.scorer},
                            {"auc", o.auc},
                            {"shift_types", o.shift_types}});
  }
  j["accuracy"] = ojson::object();
  for (const auto& [k, v] : report.accuracy) j["accuracy"][k] = v;
  j["normalized_time"] = ojson::object();
  for (const auto& [k, v] : report.normalized_time) j["normalized_time"][k] = v;
  return j.dump(2) + "\n";
}

EvalReport ParseReportJson(const std::string& text) {
  EvalReport r;
  try {
    const auto j = ojson::parse(text);
    for (const auto& t : j.at("tasks")) {
      r.tasks.push_back({ParseEvalSetting(t.at("setting").get<std::string>()),
                         ParseShiftType(t.at("shift_type").get<std::string>()),
                         t.at("dataset").get<std::string>(), t.at("scorer").get<std::string>(),
                         t.at("auc").get<double>(), t.at("n_id").get<std::size_t>(),
                         t.at("n_ood").get<std::size_t>()});
    }
    for (const auto& a : j.at("type_averages")) {
      r.type_averages.push_back({a.at("family").get<std::string>(),
                                 a.at("scorer").get<std::string>(),
                                 ParseShiftType(a.at("shift_type").get<std::string>()),
                                 a.at("auc").get<double>(), a.at("datasets").get<std::size_t>()});
    }
    for (const auto& o : j.at("overall")) {
      r.overall.push_back({o.at("family").get<std::string>(), o.at("scorer").get<std::string>(),
                           o.at("auc").get<double>(), o.at("shift_types").get<std::size_t>()});
    }
    for (const auto& [k, v] : j.at("accuracy").items()) r.accuracy[k] = v.get<double>();
    for (const auto& [k, v] : j.at("normalized_time").items()) {
      r.normalized_time[k] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

std::vector<TaskResult> ParseReportCsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw FormatError("report: CSV header must be '" + std::string(kCsvHeader) + "'");
  }
  std::vector<TaskResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = SplitCsvLine(line);
    if (f.size() != 7) throw FormatError("report: expected 7 CSV fields in '" + line + "'");
    out.push_back({ParseEvalSetting(f[0]), ParseShiftType(f[1]), f[2], f[3], ParseDouble(f[4]),
                   static_cast<std::size_t>(std::stoull(f[5])),
                   static_cast<std::size_t>(std::stoull(f[6]))});
  }
  return out;
}

}  // namespace oodens
