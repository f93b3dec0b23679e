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

#include "oodens/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>
#include <toml.hpp>

#include "oodens/errors.hpp"
#include "oodens/eval.hpp"
#include "oodens/ingest.hpp"
#include "oodens/matrix_io.hpp"

namespace oodens {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// TOML access

void CheckKeys(const toml::table& t, const std::string& ctx, std::initializer_list<std::string_view> allowed) {
  for (const auto& [k, v] : t) {
    if (std::find(allowed.begin(), allowed.end(), k.str()) == allowed.end()) {
      throw ConfigError("unknown configuration key '" + (ctx.empty() ? "" : ctx + ".") +
                        std::string(k.str()) + "'");
    }
  }
}

std::string Where(const std::string& ctx, std::string_view key) {
  return ctx.empty() ? std::string(key) : ctx + "." + std::string(key);
}

const toml::table* SubTable(const toml::table& t, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return nullptr;
  if (!n->is_table()) throw ConfigError("'" + std::string(key) + "' must be a table");
  return n->as_table();
}

std::optional<double> GetDouble(const toml::table& t, const std::string& ctx, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return std::nullopt;
  if (!n->is_number()) throw ConfigError("'" + Where(ctx, key) + "' must be a number");
  return n->value<double>();
}

std::optional<std::int64_t> GetInt(const toml::table& t, const std::string& ctx, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return std::nullopt;
  if (!n->is_integer()) throw ConfigError("'" + Where(ctx, key) + "' must be an integer");
  return n->value<std::int64_t>();
}

std::optional<bool> GetBool(const toml::table& t, const std::string& ctx, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return std::nullopt;
  if (!n->is_boolean()) throw ConfigError("'" + Where(ctx, key) + "' must be a boolean");
  return n->value<bool>();
}

std::optional<std::string> GetString(const toml::table& t, const std::string& ctx, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return std::nullopt;
  if (!n->is_string()) throw ConfigError("'" + Where(ctx, key) + "' must be a string");
  return n->value<std::string>();
}

std::optional<std::vector<std::string>> GetStrings(const toml::table& t, const std::string& ctx,
                                                   std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return std::nullopt;
  const toml::array* a = n->as_array();
  if (a == nullptr) throw ConfigError("'" + Where(ctx, key) + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *a) {
    if (!e.is_string()) throw ConfigError("'" + Where(ctx, key) + "' must be an array of strings");
    out.push_back(*e.value<std::string>());
  }
  return out;
}

std::optional<std::vector<int>> GetInts(const toml::table& t, const std::string& ctx, std::string_view key) {
  const toml::node* n = t.get(key);
  if (n == nullptr) return std::nullopt;
  const toml::array* a = n->as_array();
  if (a == nullptr) throw ConfigError("'" + Where(ctx, key) + "' must be an array of integers");
  std::vector<int> out;
  for (const auto& e : *a) {
    if (!e.is_integer()) throw ConfigError("'" + Where(ctx, key) + "' must be an array of integers");
    const auto v = *e.value<std::int64_t>();
    if (v < 1 || v > 1000) throw ConfigError("'" + Where(ctx, key) + "' entries must lie in [1, 1000]");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

void Require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

// ---------------------------------------------------------------------------
// Artifacts

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteText(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

void WriteProvenance(const fs::path& dir, const PipelineConfig& config, const std::string& command) {
  ojson j;
  j["tool"] = "oodens";
  j["version"] = kToolVersion;
  j["command"] = command;
  j["config_hash"] = ConfigHash(config.config_text);
  j["seed"] = config.seed;
  WriteText(dir / ("provenance_" + command + ".json"), j.dump(2) + "\n");
}

void Warn(const std::string& message) { std::cerr << "warning: " << message << "\n"; }

fs::path StatsDir(const PipelineConfig& c) { return c.output / "stats"; }

std::vector<std::string> ScoredDatasets(const PipelineConfig& c) {
  std::vector<std::string> ids = {c.test_dataset};
  for (const auto& id : c.ood_datasets) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  return ids;
}

// Loads bundles once per command.
class BundleCache {
 public:
  explicit BundleCache(fs::path root) : root_(std::move(root)) {}
  const DatasetBundle& Get(const std::string& id) {
    auto it = bundles_.find(id);
    if (it == bundles_.end()) {
      it = bundles_.emplace(id, LoadDataset(root_, id)).first;
      for (const auto& w : it->second.warnings) Warn(id + ": " + w);
    }
    return it->second;
  }

 private:
  fs::path root_;
  std::map<std::string, DatasetBundle> bundles_;
};

std::string SafeName(std::string s) {
  for (char& ch : s) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                    ch == '-' || ch == '_' || ch == '.';
    if (!ok) ch = '_';
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

ScoreParams PipelineConfig::score_params() const {
  ScoreParams p;
  p.energy_temperature = detectors.temperature;
  p.odin_temperature = detectors.odin_temperature;
  p.gradnorm_temperature = detectors.gradnorm_temperature;
  return p;
}

StatsOptions PipelineConfig::stats_options() const {
  StatsOptions s;
  s.lambda_scale = detectors.lambda_scale;
  s.vim_dim = detectors.vim_dim;
  s.dice_keep = detectors.dice_keep;
  s.react_percentile = detectors.react_percentile;
  s.seed = seed;
  return s;
}

GmmFitOptions PipelineConfig::gmm_options() const {
  GmmFitOptions g;
  g.seed = seed;
  g.regularization = gmm.regularization;
  g.tol = gmm.tol;
  g.max_iter = gmm.max_iter;
  g.restarts = gmm.restarts;
  return g;
}

const EnsembleDefinition& PipelineConfig::ensemble(const std::string& id) const {
  for (const auto& e : ensembles) {
    if (e.ensemble_id == id) return e;
  }
  throw ConfigError("ensemble '" + id + "' is not configured");
}

std::string ConfigHash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

PipelineConfig ParseConfig(const std::string& text, const fs::path& origin,
                           const ConfigOverrides& overrides) {
  toml::table doc;
  try {
    doc = toml::parse(text, origin.string());
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << origin.string() << ":" << e.source().begin.line << ": " << e.description();
    throw ConfigError(msg.str());
  }
  CheckKeys(doc, "", {"root", "output", "seed", "jobs", "datasets", "ensembles", "gmm", "detectors",
                      "selection", "evaluate"});

  PipelineConfig c;
  c.config_path = origin;
  c.config_text = text;
  const fs::path base = origin.has_parent_path() ? origin.parent_path() : fs::path(".");
  auto resolve = [&](const fs::path& p) { return p.is_absolute() ? p : base / p; };

  const auto root = GetString(doc, "", "root");
  if (overrides.root) {
    c.root = *overrides.root;
  } else {
    Require(root.has_value(), "'root' is required");
    c.root = resolve(*root);
  }
  if (overrides.output) {
    c.output = *overrides.output;
  } else {
    c.output = resolve(GetString(doc, "", "output").value_or("output"));
  }
  const auto seed = GetInt(doc, "", "seed");
  Require(!seed || *seed >= 0, "'seed' must be non-negative");
  c.seed = overrides.seed ? *overrides.seed : static_cast<std::uint64_t>(seed.value_or(0));
  const auto jobs = GetInt(doc, "", "jobs");
  c.jobs = overrides.jobs ? *overrides.jobs : static_cast<int>(jobs.value_or(1));
  Require(c.jobs >= 1 && c.jobs <= 1024, "'jobs' must lie in [1, 1024]");

  const toml::table* ds = SubTable(doc, "datasets");
  Require(ds != nullptr, "[datasets] is required");
  CheckKeys(*ds, "datasets", {"train", "validation", "test", "ood"});
  const auto train = GetString(*ds, "datasets", "train");
  const auto validation = GetString(*ds, "datasets", "validation");
  const auto test = GetString(*ds, "datasets", "test");
  Require(train && validation && test, "[datasets] needs train, validation and test");
  c.train_dataset = *train;
  c.validation_dataset = *validation;
  c.test_dataset = *test;
  c.ood_datasets = GetStrings(*ds, "datasets", "ood").value_or(std::vector<std::string>{});

  if (const toml::table* en = SubTable(doc, "ensembles")) {
    CheckKeys(*en, "ensembles", {"builtin", "custom"});
    for (const auto& id : GetStrings(*en, "ensembles", "builtin").value_or(std::vector<std::string>{})) {
      c.ensembles.push_back(BuiltinEnsemble(id));
    }
    if (const toml::node* custom = en->get("custom")) {
      const toml::array* arr = custom->as_array();
      Require(arr != nullptr, "'ensembles.custom' must be an array of tables");
      for (const auto& e : *arr) {
        const toml::table* t = e.as_table();
        Require(t != nullptr, "'ensembles.custom' must be an array of tables");
        CheckKeys(*t, "ensembles.custom", {"id", "members"});
        const auto id = GetString(*t, "ensembles.custom", "id");
        const auto members = GetStrings(*t, "ensembles.custom", "members");
        Require(id && members, "each [[ensembles.custom]] needs id and members");
        c.ensembles.push_back(MakeEnsemble(*id, *members));
      }
    }
  } else {
    c.ensembles = BuiltinEnsembles();
  }
  Require(!c.ensembles.empty(), "no ensembles configured");
  std::set<std::string> ens_ids;
  for (const auto& e : c.ensembles) {
    Require(ens_ids.insert(e.ensemble_id).second, "duplicate ensemble id '" + e.ensemble_id + "'");
    Require(SafeName(e.ensemble_id) == e.ensemble_id && !e.ensemble_id.empty(),
            "ensemble id '" + e.ensemble_id + "' may only contain [A-Za-z0-9._-]");
  }

  if (const toml::table* g = SubTable(doc, "gmm")) {
    CheckKeys(*g, "gmm", {"candidates", "tol", "regularization", "max_iter", "restarts", "heldout_fraction"});
    if (auto v = GetInts(*g, "gmm", "candidates")) c.gmm.candidates = *v;
    if (auto v = GetDouble(*g, "gmm", "tol")) c.gmm.tol = *v;
    if (auto v = GetDouble(*g, "gmm", "regularization")) c.gmm.regularization = *v;
    if (auto v = GetInt(*g, "gmm", "max_iter")) c.gmm.max_iter = static_cast<int>(std::clamp<std::int64_t>(*v, -1, 1'000'000));
    if (auto v = GetInt(*g, "gmm", "restarts")) c.gmm.restarts = static_cast<int>(std::clamp<std::int64_t>(*v, -1, 10'000));
    if (auto v = GetDouble(*g, "gmm", "heldout_fraction")) c.gmm.heldout_fraction = *v;
  }
  Require(!c.gmm.candidates.empty(), "'gmm.candidates' must not be empty");
  Require(c.gmm.tol > 0.0, "'gmm.tol' must be positive");
  Require(c.gmm.regularization >= 0.0, "'gmm.regularization' must be non-negative");
  Require(c.gmm.max_iter >= 1, "'gmm.max_iter' must be at least 1");
  Require(c.gmm.restarts >= 1, "'gmm.restarts' must be at least 1");
  Require(c.gmm.heldout_fraction >= 0.0 && c.gmm.heldout_fraction < 1.0,
          "'gmm.heldout_fraction' must lie in [0, 1)");
  Require(c.gmm.candidates.size() == 1 || c.gmm.heldout_fraction > 0.0,
          "'gmm.heldout_fraction' must be positive when several candidates are given");

  if (const toml::table* d = SubTable(doc, "detectors")) {
    CheckKeys(*d, "detectors", {"temperature", "odin_temperature", "gradnorm_temperature", "dice_keep",
                                "react_percentile", "vim_dim", "lambda_scale"});
    if (auto v = GetDouble(*d, "detectors", "temperature")) c.detectors.temperature = *v;
    if (auto v = GetDouble(*d, "detectors", "odin_temperature")) c.detectors.odin_temperature = *v;
    if (auto v = GetDouble(*d, "detectors", "gradnorm_temperature")) c.detectors.gradnorm_temperature = *v;
    if (auto v = GetDouble(*d, "detectors", "dice_keep")) c.detectors.dice_keep = *v;
    if (auto v = GetDouble(*d, "detectors", "react_percentile")) c.detectors.react_percentile = *v;
    if (auto v = GetInt(*d, "detectors", "vim_dim")) c.detectors.vim_dim = static_cast<int>(std::clamp<std::int64_t>(*v, -1, 1 << 20));
    if (auto v = GetDouble(*d, "detectors", "lambda_scale")) c.detectors.lambda_scale = *v;
  }
  Require(c.detectors.temperature > 0.0, "'detectors.temperature' must be positive");
  Require(c.detectors.odin_temperature > 0.0, "'detectors.odin_temperature' must be positive");
  Require(c.detectors.gradnorm_temperature > 0.0, "'detectors.gradnorm_temperature' must be positive");
  Require(c.detectors.dice_keep > 0.0 && c.detectors.dice_keep <= 1.0,
          "'detectors.dice_keep' must lie in (0, 1]");
  Require(c.detectors.react_percentile > 0.0 && c.detectors.react_percentile <= 100.0,
          "'detectors.react_percentile' must lie in (0, 100]");
  Require(c.detectors.vim_dim >= 0, "'detectors.vim_dim' must be non-negative");
  Require(c.detectors.lambda_scale >= 0.0, "'detectors.lambda_scale' must be non-negative");

  if (const toml::table* s = SubTable(doc, "selection")) {
    CheckKeys(*s, "selection", {"corr_threshold", "near_random_low", "near_random_high"});
    if (auto v = GetDouble(*s, "selection", "corr_threshold")) c.selection.corr_threshold = *v;
    if (auto v = GetDouble(*s, "selection", "near_random_low")) c.selection.near_random_low = *v;
    if (auto v = GetDouble(*s, "selection", "near_random_high")) c.selection.near_random_high = *v;
  }
  Require(c.selection.corr_threshold > 0.0 && c.selection.corr_threshold <= 1.0,
          "'selection.corr_threshold' must lie in (0, 1]");
  Require(c.selection.near_random_low <= c.selection.near_random_high,
          "'selection.near_random_low' must not exceed 'near_random_high'");

  if (const toml::table* e = SubTable(doc, "evaluate")) {
    CheckKeys(*e, "evaluate", {"scorers", "dump_distributions", "forward_pass_seconds"});
    if (auto v = GetStrings(*e, "evaluate", "scorers")) c.evaluate.scorers = *v;
    if (auto v = GetBool(*e, "evaluate", "dump_distributions")) c.evaluate.dump_distributions = *v;
    if (auto v = GetDouble(*e, "evaluate", "forward_pass_seconds")) c.evaluate.forward_pass_seconds = *v;
  }
  Require(c.evaluate.forward_pass_seconds >= 0.0, "'evaluate.forward_pass_seconds' must be non-negative");
  for (const auto& name : c.evaluate.scorers) {
    if (ens_ids.count(name) == 0) ParseScoreName(name);  // throws ConfigError
  }
  return c;
}

PipelineConfig LoadConfig(const fs::path& path, const ConfigOverrides& overrides) {
  if (!fs::is_regular_file(path)) throw ConfigError("configuration file not found: " + path.string());
  return ParseConfig(ReadText(path), path, overrides);
}

void CheckConfigInputs(const PipelineConfig& c) {
  if (!fs::is_directory(c.root)) throw ConfigError("dataset root not found: " + c.root.string());
  if (!fs::is_regular_file(c.root / "model.json")) {
    throw ConfigError("model head not found: " + (c.root / "model.json").string());
  }
  std::vector<std::string> ids = {c.train_dataset, c.validation_dataset, c.test_dataset};
  ids.insert(ids.end(), c.ood_datasets.begin(), c.ood_datasets.end());
  for (const auto& id : ids) {
    const fs::path manifest = c.root / id / "manifest.json";
    if (!fs::is_regular_file(manifest)) {
      throw ConfigError("dataset '" + id + "' not found under " + c.root.string());
    }
  }
  for (const auto& id : c.ood_datasets) {
    const fs::path path = c.root / id / "manifest.json";
    const DatasetManifest m = ParseManifest(ReadText(path), path.string());
    if (m.origin_dataset_id && !fs::is_regular_file(c.root / *m.origin_dataset_id / "manifest.json")) {
      throw ConfigError("dataset '" + id + "' names origin '" + *m.origin_dataset_id +
                        "', which is not under " + c.root.string());
    }
  }
}

// ---------------------------------------------------------------------------
// fit

void CmdFit(const PipelineConfig& c) {
  CheckConfigInputs(c);
  const ModelHead head = LoadModelHead(c.root);
  BundleCache bundles(c.root);
  const FittedStats stats = FitStats(bundles.Get(c.train_dataset), head, c.stats_options(), c.jobs);
  SaveStats(StatsDir(c), stats);
  WriteProvenance(StatsDir(c), c, "fit");

  const DatasetBundle& validation = bundles.Get(c.validation_dataset);
  const ScoreParams params = c.score_params();
  for (const auto& ens : c.ensembles) {
    const Eigen::MatrixXd scores = ComputeScoreMatrix(validation, stats, ens.members, params, c.jobs);
    const TrainingSplit split = SplitScoreMatrix(scores, validation, c.gmm.heldout_fraction, c.seed);
    GmmFitOptions options = c.gmm_options();
    const ComponentSelection sel =
        SelectNComponents(split.train, split.heldout, split.heldout_correct, c.gmm.candidates, options);
    options.n_components = sel.selected;
    const GmmModel model = FitScoreGmm(split.train, options);
    SaveGmm(c.output, ens.ensemble_id, ens.member_names(), model);

    ojson j;
    j["ensemble_id"] = ens.ensemble_id;
    j["members"] = ens.member_names();
    j["train_rows"] = split.train.rows();
    j["heldout_rows"] = split.heldout.rows();
    j["discarded_misclassified"] = split.discarded_misclassified;
    j["candidates"] = ojson::array();
    for (std::size_t i = 0; i < sel.candidates.size(); ++i) {
      const double auc = sel.heldout_auc[i];
      j["candidates"].push_back(
          {{"n_components", sel.candidates[i]}, {"heldout_auc", std::isnan(auc) ? ojson() : ojson(auc)}});
    }
    j["selected"] = sel.selected;
    WriteText(c.output / ("components_" + ens.ensemble_id + ".json"), j.dump(2) + "\n");
  }
  WriteProvenance(c.output, c, "fit");
}

// ---------------------------------------------------------------------------
// score

void CmdScore(const PipelineConfig& c, const std::string& dataset_id, const std::string& ensemble_id) {
  CheckConfigInputs(c);
  std::vector<std::string> datasets = ScoredDatasets(c);
  if (!dataset_id.empty()) {
    if (!fs::is_regular_file(c.root / dataset_id / "manifest.json")) {
      throw ConfigError("dataset '" + dataset_id + "' not found under " + c.root.string());
    }
    datasets = {dataset_id};
  }
  std::vector<EnsembleDefinition> ensembles = c.ensembles;
  if (!ensemble_id.empty()) ensembles = {c.ensemble(ensemble_id)};

  const FittedStats stats = LoadStats(StatsDir(c));
  BundleCache bundles(c.root);
  for (const auto& id : datasets) {
    const DatasetBundle& b = bundles.Get(id);
    const fs::path dir = c.output / "scores" / id;
    for (const auto& ens : ensembles) {
      const Eigen::MatrixXd m = ComputeScoreMatrix(b, stats, ens.members, c.score_params(), c.jobs);
      fs::create_directories(dir);
      WriteMatrixF64(dir / ("scores_" + ens.ensemble_id + ".npy"), m);
      ojson j;
      j["dataset_id"] = id;
      j["ensemble_id"] = ens.ensemble_id;
      j["columns"] = ens.member_names();
      j["rows"] = m.rows();
      std::vector<std::int64_t> ids;
      for (const auto& r : b.records) ids.push_back(r.sample_id);
      j["sample_ids"] = ids;
      WriteText(dir / ("scores_" + ens.ensemble_id + ".json"), j.dump(2) + "\n");
    }
    WriteProvenance(dir, c, "score");
  }
}

// ---------------------------------------------------------------------------
// evaluate

namespace {

struct NamedScorer {
  Scorer scorer;
  std::map<std::string, std::optional<std::vector<double>>> cache;  // nullopt = incapable
};

const std::vector<double>* ScoresFor(NamedScorer& s, const DatasetBundle& b) {
  const std::string& id = b.manifest.dataset_id;
  auto it = s.cache.find(id);
  if (it == s.cache.end()) {
    std::optional<std::vector<double>> v;
    try {
      v = s.scorer.score(b);
    } catch (const CapabilityError& e) {
      Warn("skipping " + s.scorer.name + " on " + id + ": " + e.what());
    }
    it = s.cache.emplace(id, std::move(v)).first;
  }
  return it->second ? &*it->second : nullptr;
}

}  // namespace

void CmdEvaluate(const PipelineConfig& c) {
  CheckConfigInputs(c);
  const FittedStats stats = LoadStats(StatsDir(c));
  const ScoreParams params = c.score_params();

  std::vector<std::string> names = c.evaluate.scorers;
  if (names.empty()) {
    for (auto k : AllScores()) names.emplace_back(ScoreName(k));
    for (const auto& e : c.ensembles) names.push_back(e.ensemble_id);
  }
  std::map<std::string, GmmModel> models;
  std::vector<NamedScorer> scorers;
  for (const auto& name : names) {
    const auto ens = std::find_if(c.ensembles.begin(), c.ensembles.end(),
                                  [&](const EnsembleDefinition& e) { return e.ensemble_id == name; });
    if (ens != c.ensembles.end()) {
      std::vector<std::string> members;
      auto [it, inserted] = models.emplace(name, LoadGmm(c.output, name, &members));
      if (members != ens->member_names()) {
        throw ConfigError("fitted mixture for '" + name + "' has different members than configured; rerun fit");
      }
      scorers.push_back({MakeEnsembleScorer(*ens, stats, it->second, params, c.jobs), {}});
    } else {
      scorers.push_back({MakeMemberScorer(ParseScoreName(name), stats, params, c.jobs), {}});
    }
  }

  BundleCache bundles(c.root);
  const DatasetBundle& test = bundles.Get(c.test_dataset);
  std::vector<TaskResult> tasks;
  const fs::path dist_dir = c.output / "distributions";

  auto run = [&](EvalSetting setting, const TaskSides& sides, const DatasetBundle& id_bundle,
                 const DatasetBundle& ood_bundle, const std::string& dataset, ShiftType type) {
    for (auto& s : scorers) {
      const auto* id_scores = ScoresFor(s, id_bundle);
      const auto* ood_scores = ScoresFor(s, ood_bundle);
      if (id_scores == nullptr || ood_scores == nullptr) continue;
      try {
        tasks.push_back(EvaluateSides(setting, sides, *id_scores, *ood_scores, dataset, type, s.scorer.name));
      } catch (const EvaluationError& e) {
        Warn(std::string(ToString(setting)) + " on " + dataset + " skipped: " + e.what());
        continue;
      }
      if (c.evaluate.dump_distributions) {
        const std::string stem = std::string(ToString(setting)) + "__" + SafeName(dataset) + "__" +
                                 SafeName(s.scorer.name);
        Eigen::VectorXd a(static_cast<Eigen::Index>(sides.id_indices.size()));
        Eigen::VectorXd b(static_cast<Eigen::Index>(sides.ood_indices.size()));
        for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = (*id_scores)[sides.id_indices[static_cast<std::size_t>(i)]];
        for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = (*ood_scores)[sides.ood_indices[static_cast<std::size_t>(i)]];
        fs::create_directories(dist_dir);
        WriteVectorF64(dist_dir / (stem + "_id.npy"), a);
        WriteVectorF64(dist_dir / (stem + "_ood.npy"), b);
      }
    }
  };

  for (const auto& id : c.ood_datasets) {
    const DatasetBundle& ood = bundles.Get(id);
    run(EvalSetting::kDsd, DsdSides(test, ood), test, ood, id, ood.manifest.shift_type);
  }
  run(EvalSetting::kEdIndist, EdIndistSides(test), test, test, c.test_dataset,
      ShiftType::kInDistribution);
  for (const auto& id : c.ood_datasets) {
    const DatasetBundle& ood = bundles.Get(id);
    if (ood.manifest.shift_type != ShiftType::kAdversarial) continue;
    if (!ood.manifest.origin_dataset_id) {
      throw DataError(id + ": adversarial dataset has no origin_dataset_id");
    }
    const DatasetBundle& clean = bundles.Get(*ood.manifest.origin_dataset_id);
    run(EvalSetting::kEdAdversarial, EdAdversarialSides(LinkCounterparts(ood, clean)), clean, ood, id,
        ShiftType::kAdversarial);
  }
  for (const auto& id : c.ood_datasets) {
    const DatasetBundle& ood = bundles.Get(id);
    if (ood.manifest.shift_type != ShiftType::kCorruption) continue;
    run(EvalSetting::kEdCorruption, EdCorruptionSides(test, ood), test, ood, id, ShiftType::kCorruption);
  }

  std::map<std::string, double> accuracy;
  for (const auto& id : ScoredDatasets(c)) {
    if (auto a = Accuracy(bundles.Get(id))) accuracy[id] = *a;
  }
  std::map<std::string, double> timing;
  if (c.evaluate.forward_pass_seconds > 0.0 && !test.records.empty()) {
    for (auto& s : scorers) {
      const auto start = std::chrono::steady_clock::now();
      try {
        (void)s.scorer.score(test);
      } catch (const CapabilityError&) {
        continue;
      }
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      timing[s.scorer.name] = elapsed.count() / static_cast<double>(test.records.size()) /
                              c.evaluate.forward_pass_seconds;
    }
  }

  const EvalReport report = AggregateReport(std::move(tasks), accuracy, timing);
  WriteText(c.output / "report.json", EmitReport(report, ReportFormat::kJson));
  WriteText(c.output / "report.csv", EmitReport(report, ReportFormat::kCsv));
  if (c.evaluate.dump_distributions) WriteProvenance(dist_dir, c, "evaluate");
  WriteProvenance(c.output, c, "evaluate");
}

// ---------------------------------------------------------------------------
// select

void CmdSelect(const PipelineConfig& c) {
  CheckConfigInputs(c);
  const FittedStats stats = LoadStats(StatsDir(c));
  BundleCache bundles(c.root);
  const DatasetBundle& val = bundles.Get(c.validation_dataset);

  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> columns;
  std::vector<std::string> skipped;
  for (auto k : AllScores()) {
    try {
      const Eigen::MatrixXd m = ComputeScoreMatrix(val, stats, {k}, c.score_params(), c.jobs);
      names.emplace_back(ScoreName(k));
      columns.push_back(m.col(0));
    } catch (const CapabilityError& e) {
      Warn(std::string("select: ") + e.what());
      skipped.emplace_back(ScoreName(k));
    }
  }

  std::vector<std::size_t> clean;
  for (std::size_t i = 0; i < val.records.size(); ++i) {
    if (val.records[i].correct()) clean.push_back(i);
  }
  Eigen::MatrixXd clean_scores(static_cast<Eigen::Index>(clean.size()), static_cast<Eigen::Index>(names.size()));
  std::vector<double> ed_auc;
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> good, bad;
    for (std::size_t i = 0; i < val.records.size(); ++i) {
      const double v = columns[k][static_cast<Eigen::Index>(i)];
      if (val.records[i].label < 0) continue;
      (val.records[i].correct() ? good : bad).push_back(v);
    }
    try {
      ed_auc.push_back(Auroc(good, bad));
    } catch (const EvaluationError& e) {
      throw SelectionError(std::string("validation set cannot rank scores: ") + e.what());
    }
    for (std::size_t r = 0; r < clean.size(); ++r) {
      clean_scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) =
          columns[k][static_cast<Eigen::Index>(clean[r])];
    }
  }

  MemberSelectionOptions opt;
  opt.corr_threshold = c.selection.corr_threshold;
  opt.near_random_low = c.selection.near_random_low;
  opt.near_random_high = c.selection.near_random_high;
  const MemberSelection sel = SelectMembers(clean_scores, names, ed_auc, opt);

  WriteMatrixF64(c.output / "correlation.npy", sel.correlation);
  ojson j;
  j["dataset_id"] = c.validation_dataset;
  j["corr_threshold"] = opt.corr_threshold;
  j["near_random_band"] = {opt.near_random_low, opt.near_random_high};
  j["scores"] = ojson::array();
  for (std::size_t k = 0; k < names.size(); ++k) {
    j["scores"].push_back({{"name", names[k]}, {"ed_auc", ed_auc[k]}});
  }
  j["correlation_columns"] = names;
  j["admitted"] = sel.admitted;
  j["near_random"] = sel.near_random;
  j["correlated"] = sel.correlated;
  j["skipped"] = skipped;
  WriteText(c.output / "selection.json", j.dump(2) + "\n");
  WriteProvenance(c.output, c, "select");
}

// ---------------------------------------------------------------------------
// report

void CmdReport(const PipelineConfig& c, const std::string& format, std::ostream& out) {
  const fs::path path = c.output / "report.json";
  if (!fs::is_regular_file(path)) throw DataError("no report at " + path.string() + "; run evaluate first");
  const EvalReport report = ParseReportJson(ReadText(path));
  if (format == "json") {
    out << EmitReport(report, ReportFormat::kJson);
    return;
  }
  if (format == "csv") {
    out << EmitReport(report, ReportFormat::kCsv);
    return;
  }
  if (format != "table") throw ConfigError("unknown report format '" + format + "'");

  // Scorer x shift-type grid per family, AUC in percent.
  for (const std::string family : {"DSD", "ED"}) {
    std::vector<std::string> scorers;
    std::vector<ShiftType> types;
    for (const auto& a : report.type_averages) {
      if (a.family != family) continue;
      if (std::find(scorers.begin(), scorers.end(), a.scorer) == scorers.end()) scorers.push_back(a.scorer);
      if (std::find(types.begin(), types.end(), a.shift_type) == types.end()) types.push_back(a.shift_type);
    }
    if (scorers.empty()) continue;
    std::sort(types.begin(), types.end());
    out << family << "\n" << std::left << std::setw(12) << "scorer";
    for (auto t : types) out << std::right << std::setw(17) << ToString(t);
    out << std::right << std::setw(10) << "average" << "\n";
    for (const auto& s : scorers) {
      out << std::left << std::setw(12) << s;
      for (auto t : types) {
        const auto it = std::find_if(report.type_averages.begin(), report.type_averages.end(),
                                     [&](const TypeAverage& a) {
                                       return a.family == family && a.scorer == s && a.shift_type == t;
                                     });
        std::ostringstream cell;
        if (it != report.type_averages.end()) cell << std::fixed << std::setprecision(2) << 100.0 * it->auc;
        else cell << "-";
        out << std::right << std::setw(17) << cell.str();
      }
      const auto o = std::find_if(report.overall.begin(), report.overall.end(),
                                  [&](const OverallAverage& a) { return a.family == family && a.scorer == s; });
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(2) << 100.0 * o->auc;
      out << std::right << std::setw(10) << cell.str() << "\n";
    }
    out << "\n";
  }
  if (!report.accuracy.empty()) {
    out << "accuracy\n";
    for (const auto& [id, acc] : report.accuracy) {
      out << "  " << std::left << std::setw(20) << id << std::fixed << std::setprecision(4) << acc << "\n";
    }
  }
}

}  // namespace oodens
