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

#include "oodens/ingest.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "oodens/errors.hpp"
#include "oodens/npy.hpp"

namespace oodens {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::pair<ShiftType, std::string_view> kShiftNames[] = {
    {ShiftType::kInDistribution, "in_distribution"},
    {ShiftType::kNovelClasses, "novel_classes"},
    {ShiftType::kAdversarial, "adversarial"},
    {ShiftType::kSynthetic, "synthetic"},
    {ShiftType::kCorruption, "corruption"},
    {ShiftType::kMultiLabel, "multi_label"},
};

std::string ReadText(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << text;
}

std::string Shape(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

void ExpectShape(const npy::Array& a, const std::vector<std::size_t>& expected,
                 const fs::path& path) {
  if (a.shape != expected) {
    throw FormatError(path.string() + ": dimension mismatch, expected shape " +
                      Shape(expected) + " but found " + Shape(a.shape));
  }
}

void ExpectDType(const npy::Array& a, npy::DType dtype, const fs::path& path) {
  if (a.dtype != dtype) {
    throw FormatError(path.string() + ": expected dtype " + npy::Descr(dtype) + ", found " +
                      npy::Descr(a.dtype));
  }
}

npy::Array ReadFloatMatrix(const fs::path& path, std::size_t rows) {
  auto a = npy::Read(path);
  ExpectDType(a, npy::DType::kFloat32, path);
  if (a.shape.size() != 2 || a.shape[0] != rows) {
    throw FormatError(path.string() + ": dimension mismatch, expected [" + std::to_string(rows) +
                      ",D] but found " + Shape(a.shape));
  }
  return a;
}

std::vector<std::int64_t> ReadIntVector(const fs::path& path, std::size_t rows) {
  auto a = npy::Read(path);
  ExpectDType(a, npy::DType::kInt64, path);
  ExpectShape(a, {rows}, path);
  return a.AsInt64();
}

bool AllFinite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

std::vector<double> RowMajor(const std::vector<Eigen::VectorXd>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.data(), r.data() + r.size());
  return out;
}

}  // namespace

std::string_view ToString(ShiftType type) {
  for (const auto& [t, name] : kShiftNames) {
    if (t == type) return name;
  }
  return "unknown";
}

ShiftType ParseShiftType(std::string_view name) {
  for (const auto& [t, n] : kShiftNames) {
    if (n == name) return t;
  }
  throw FormatError("unknown shift_type '" + std::string(name) + "'");
}

int ArgMax(const Eigen::VectorXd& values) {
  int best = 0;
  for (int i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

DatasetManifest ParseManifest(const std::string& json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(origin + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.dataset_id = j.at("dataset_id").get<std::string>();
    m.shift_type = ParseShiftType(j.at("shift_type").get<std::string>());
    m.record_count = j.at("record_count").get<std::size_t>();
    m.layer_names = j.at("layer_names").get<std::vector<std::string>>();
    m.class_count = j.at("class_count").get<int>();
    m.has_aux_odin = j.value("has_aux_odin", false);
    m.has_aux_views = j.value("has_aux_views", false);
    m.view_count = j.value("view_count", 0);
    if (j.contains("origin_dataset_id") && !j["origin_dataset_id"].is_null()) {
      m.origin_dataset_id = j["origin_dataset_id"].get<std::string>();
    }
    if (j.contains("label_restriction") && !j["label_restriction"].is_null()) {
      m.label_restriction = j["label_restriction"].get<std::set<int>>();
    }
  } catch (const json::exception& e) {
    throw FormatError(origin + ": " + e.what());
  }
  if (m.layer_names.empty()) throw FormatError(origin + ": layer_names must be nonempty");
  if (m.class_count < 1) throw FormatError(origin + ": class_count must be positive");
  if (m.has_aux_views && m.view_count < 2) {
    throw FormatError(origin + ": view_count must be >= 2 when has_aux_views");
  }
  if (m.origin_dataset_id.has_value() != (m.shift_type == ShiftType::kAdversarial)) {
    throw FormatError(origin + ": origin_dataset_id must be present iff shift_type is adversarial");
  }
  return m;
}

std::string SerializeManifest(const DatasetManifest& m) {
  json j;
  j["dataset_id"] = m.dataset_id;
  j["shift_type"] = std::string(ToString(m.shift_type));
  j["record_count"] = m.record_count;
  j["layer_names"] = m.layer_names;
  j["class_count"] = m.class_count;
  j["has_aux_odin"] = m.has_aux_odin;
  j["has_aux_views"] = m.has_aux_views;
  j["view_count"] = m.view_count;
  j["origin_dataset_id"] = m.origin_dataset_id ? json(*m.origin_dataset_id) : json(nullptr);
  j["label_restriction"] = m.label_restriction ? json(*m.label_restriction) : json(nullptr);
  return j.dump(2) + "\n";
}

void ValidateBundle(const DatasetBundle& bundle) {
  const auto& m = bundle.manifest;
  if (bundle.records.size() != m.record_count) {
    throw FormatError(m.dataset_id + ": manifest record_count " + std::to_string(m.record_count) +
                      " but " + std::to_string(bundle.records.size()) + " records");
  }
  std::unordered_set<std::int64_t> ids;
  std::optional<Eigen::Index> view_dim;
  for (std::size_t i = 0; i < bundle.records.size(); ++i) {
    const auto& r = bundle.records[i];
    const std::string where = m.dataset_id + " sample " + std::to_string(i);
    if (!ids.insert(r.sample_id).second) {
      throw DataError(where + ": duplicate sample_id " + std::to_string(r.sample_id));
    }
    if (r.logits.size() != m.class_count) {
      throw FormatError(where + ": dimension mismatch, logits length " +
                        std::to_string(r.logits.size()) + ", expected " +
                        std::to_string(m.class_count));
    }
    if (r.label < -1 || r.label >= m.class_count) {
      throw DataError(where + ": label " + std::to_string(r.label) + " out of range");
    }
    if (!AllFinite(r.logits)) throw DataError(where + ": non-finite logits");
    for (const auto& layer : m.layer_names) {
      auto it = r.features.find(layer);
      if (it == r.features.end()) throw FormatError(where + ": missing features for " + layer);
      if (!AllFinite(it->second)) throw DataError(where + ": non-finite features in " + layer);
    }
    if (m.has_aux_odin) {
      if (!r.odin_logits || r.odin_logits->size() != m.class_count) {
        throw FormatError(where + ": odin_logits missing or wrong length");
      }
      if (!AllFinite(*r.odin_logits)) throw DataError(where + ": non-finite odin_logits");
    }
    if (m.has_aux_views) {
      if (!r.view_features || r.view_features->rows() != m.view_count) {
        throw FormatError(where + ": view_features missing or wrong view count");
      }
      if (view_dim && r.view_features->cols() != *view_dim) {
        throw FormatError(where + ": view_features dimension differs between records");
      }
      view_dim = r.view_features->cols();
      if (!AllFinite(*r.view_features)) throw DataError(where + ": non-finite view_features");
    }
    if (m.shift_type == ShiftType::kAdversarial && !r.origin_id) {
      throw FormatError(where + ": adversarial record without origin_id");
    }
    const int recomputed = ArgMax(r.logits);
    if (recomputed != r.prediction) {
      throw DataError(where + ": stored prediction " + std::to_string(r.prediction) +
                      " disagrees with argmax(logits) = " + std::to_string(recomputed));
    }
  }
}

DatasetBundle LoadDataset(const fs::path& root, const std::string& dataset_id) {
  const fs::path dir = root / dataset_id;
  if (!fs::is_directory(dir)) throw FormatError("missing dataset directory: " + dir.string());
  const fs::path manifest_path = dir / "manifest.json";
  DatasetBundle bundle;
  bundle.manifest = ParseManifest(ReadText(manifest_path), manifest_path.string());
  auto& m = bundle.manifest;
  if (m.dataset_id != dataset_id) {
    throw FormatError(manifest_path.string() + ": dataset_id '" + m.dataset_id +
                      "' does not match directory '" + dataset_id + "'");
  }
  const std::size_t n = m.record_count;
  const auto c = static_cast<std::size_t>(m.class_count);

  const fs::path logits_path = dir / "logits.npy";
  auto logits = npy::Read(logits_path);
  ExpectDType(logits, npy::DType::kFloat32, logits_path);
  ExpectShape(logits, {n, c}, logits_path);
  const auto logit_values = logits.AsDoubles();
  const auto labels = ReadIntVector(dir / "labels.npy", n);
  const auto predictions = ReadIntVector(dir / "predictions.npy", n);
  const auto sample_ids = ReadIntVector(dir / "sample_ids.npy", n);
  std::vector<std::int64_t> origin_ids;
  if (m.shift_type == ShiftType::kAdversarial) origin_ids = ReadIntVector(dir / "origin_ids.npy", n);

  std::vector<std::pair<std::size_t, std::vector<double>>> layers;
  for (const auto& layer : m.layer_names) {
    auto a = ReadFloatMatrix(dir / ("features_" + layer + ".npy"), n);
    layers.emplace_back(a.shape[1], a.AsDoubles());
  }
  std::vector<double> odin;
  if (m.has_aux_odin) {
    const fs::path p = dir / "odin_logits.npy";
    auto a = npy::Read(p);
    ExpectDType(a, npy::DType::kFloat32, p);
    ExpectShape(a, {n, c}, p);
    odin = a.AsDoubles();
  }
  std::vector<double> views;
  std::size_t view_dim = 0;
  if (m.has_aux_views) {
    const fs::path p = dir / "view_features.npy";
    auto a = npy::Read(p);
    ExpectDType(a, npy::DType::kFloat32, p);
    if (a.shape.size() != 3 || a.shape[0] != n ||
        a.shape[1] != static_cast<std::size_t>(m.view_count)) {
      throw FormatError(p.string() + ": dimension mismatch, expected [" + std::to_string(n) + "," +
                        std::to_string(m.view_count) + ",D] but found " + Shape(a.shape));
    }
    view_dim = a.shape[2];
    views = a.AsDoubles();
  }

  bundle.records.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = bundle.records[i];
    r.sample_id = sample_ids[i];
    r.label = static_cast<int>(labels[i]);
    r.prediction = static_cast<int>(predictions[i]);
    r.logits = Eigen::Map<const Eigen::VectorXd>(logit_values.data() + i * c,
                                                 static_cast<Eigen::Index>(c));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto d = layers[l].first;
      r.features[m.layer_names[l]] = Eigen::Map<const Eigen::VectorXd>(
          layers[l].second.data() + i * d, static_cast<Eigen::Index>(d));
    }
    if (!origin_ids.empty()) r.origin_id = origin_ids[i];
    if (m.has_aux_odin) {
      r.odin_logits = Eigen::Map<const Eigen::VectorXd>(odin.data() + i * c,
                                                        static_cast<Eigen::Index>(c));
    }
    if (m.has_aux_views) {
      const auto v = static_cast<Eigen::Index>(m.view_count);
      const auto d = static_cast<Eigen::Index>(view_dim);
      r.view_features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                       Eigen::RowMajor>>(
          views.data() + i * view_dim * static_cast<std::size_t>(v), v, d);
    }
  }
  ValidateBundle(bundle);
  return bundle;
}

void WriteBundle(const fs::path& root, const DatasetBundle& bundle) {
  const auto& m = bundle.manifest;
  ValidateBundle(bundle);
  const fs::path dir = root / m.dataset_id;
  fs::create_directories(dir);
  WriteText(dir / "manifest.json", SerializeManifest(m));

  const std::size_t n = bundle.records.size();
  const auto c = static_cast<std::size_t>(m.class_count);
  std::vector<Eigen::VectorXd> logits, odin;
  std::vector<std::int64_t> labels, predictions, ids, origins;
  for (const auto& r : bundle.records) {
    logits.push_back(r.logits);
    labels.push_back(r.label);
    predictions.push_back(r.prediction);
    ids.push_back(r.sample_id);
    if (r.origin_id) origins.push_back(*r.origin_id);
    if (m.has_aux_odin) odin.push_back(*r.odin_logits);
  }
  npy::Write(dir / "logits.npy", npy::FromFloat32({n, c}, RowMajor(logits)));
  npy::Write(dir / "labels.npy", npy::FromInt64({n}, labels));
  npy::Write(dir / "predictions.npy", npy::FromInt64({n}, predictions));
  npy::Write(dir / "sample_ids.npy", npy::FromInt64({n}, ids));
  if (m.shift_type == ShiftType::kAdversarial) {
    npy::Write(dir / "origin_ids.npy", npy::FromInt64({n}, origins));
  }
  for (const auto& layer : m.layer_names) {
    std::vector<Eigen::VectorXd> rows;
    for (const auto& r : bundle.records) rows.push_back(r.features.at(layer));
    const std::size_t d = n ? static_cast<std::size_t>(rows.front().size()) : 0;
    npy::Write(dir / ("features_" + layer + ".npy"), npy::FromFloat32({n, d}, RowMajor(rows)));
  }
  if (m.has_aux_odin) npy::Write(dir / "odin_logits.npy", npy::FromFloat32({n, c}, RowMajor(odin)));
  if (m.has_aux_views) {
    std::vector<double> flat;
    std::size_t d = 0;
    for (const auto& r : bundle.records) {
      const auto& v = *r.view_features;
      d = static_cast<std::size_t>(v.cols());
      for (Eigen::Index a = 0; a < v.rows(); ++a) {
        for (Eigen::Index b = 0; b < v.cols(); ++b) flat.push_back(v(a, b));
      }
    }
    npy::Write(dir / "view_features.npy",
               npy::FromFloat32({n, static_cast<std::size_t>(m.view_count), d}, flat));
  }
}

ModelHead LoadModelHead(const fs::path& root) {
  const fs::path meta_path = root / "model.json";
  json j;
  try {
    j = json::parse(ReadText(meta_path));
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  ModelHead head;
  try {
    head.penultimate_layer = j.at("penultimate_layer").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  const fs::path w_path = root / "head_weight.npy";
  const fs::path b_path = root / "head_bias.npy";
  auto w = npy::Read(w_path);
  auto b = npy::Read(b_path);
  if (w.shape.size() != 2) throw FormatError(w_path.string() + ": expected a C x D matrix");
  ExpectShape(b, {w.shape[0]}, b_path);
  const auto rows = static_cast<Eigen::Index>(w.shape[0]);
  const auto cols = static_cast<Eigen::Index>(w.shape[1]);
  const auto wv = w.AsDoubles();
  const auto bv = b.AsDoubles();
  head.weight = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                               Eigen::RowMajor>>(wv.data(), rows, cols);
  head.bias = Eigen::Map<const Eigen::VectorXd>(bv.data(), rows);
  if (!head.weight.allFinite() || !head.bias.allFinite()) {
    throw DataError(root.string() + ": non-finite classifier head");
  }
  if (j.contains("class_count") && j["class_count"].get<Eigen::Index>() != rows) {
    throw FormatError(meta_path.string() + ": class_count disagrees with head_weight.npy");
  }
  return head;
}

void WriteModelHead(const fs::path& root, const ModelHead& head) {
  fs::create_directories(root);
  json j;
  j["penultimate_layer"] = head.penultimate_layer;
  j["class_count"] = head.class_count();
  j["feature_dim"] = head.feature_dim();
  WriteText(root / "model.json", j.dump(2) + "\n");
  const auto c = static_cast<std::size_t>(head.weight.rows());
  const auto d = static_cast<std::size_t>(head.weight.cols());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = head.weight;
  npy::Write(root / "head_weight.npy",
             npy::FromFloat32({c, d}, std::span<const double>(w.data(), c * d)));
  npy::Write(root / "head_bias.npy",
             npy::FromFloat32({c}, std::span<const double>(head.bias.data(), c)));
}

std::size_t PairedBundle::successful_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.successful_attack ? 1 : 0;
  return n;
}

PairedBundle LinkCounterparts(const DatasetBundle& ood, const DatasetBundle& clean) {
  const auto& m = ood.manifest;
  if (m.shift_type != ShiftType::kAdversarial) {
    throw LinkageError(m.dataset_id + ": counterpart linkage needs an adversarial dataset");
  }
  if (m.origin_dataset_id != clean.manifest.dataset_id) {
    throw LinkageError(m.dataset_id + ": origin dataset is '" + m.origin_dataset_id.value_or("") +
                       "', not '" + clean.manifest.dataset_id + "'");
  }
  std::unordered_map<std::int64_t, std::size_t> by_id;
  for (std::size_t i = 0; i < clean.records.size(); ++i) by_id[clean.records[i].sample_id] = i;

  PairedBundle out{m.dataset_id, clean.manifest.dataset_id, {}};
  out.pairs.reserve(ood.records.size());
  for (std::size_t i = 0; i < ood.records.size(); ++i) {
    const auto& r = ood.records[i];
    auto it = r.origin_id ? by_id.find(*r.origin_id) : by_id.end();
    if (it == by_id.end()) {
      throw LinkageError(m.dataset_id + ": sample_id " + std::to_string(r.sample_id) +
                         " has dangling origin_id " +
                         (r.origin_id ? std::to_string(*r.origin_id) : std::string("<none>")));
    }
    const auto& c = clean.records[it->second];
    const bool success = c.correct() && r.prediction != c.label;
    out.pairs.push_back({i, it->second, success});
  }
  return out;
}

DatasetBundle RestrictByLabels(const DatasetBundle& bundle, const std::set<int>& classes) {
  if (classes.empty()) throw DataError("label restriction needs at least one class");
  DatasetBundle out;
  out.manifest = bundle.manifest;
  out.warnings = bundle.warnings;
  for (const auto& r : bundle.records) {
    if (classes.contains(r.label)) out.records.push_back(r);
  }
  out.manifest.record_count = out.records.size();
  if (out.records.empty()) {
    out.warnings.push_back(bundle.manifest.dataset_id +
                           ": label restriction left no records");
  }
  return out;
}

}  // namespace oodens
