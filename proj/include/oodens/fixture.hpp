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

// Deterministic synthetic feature dump with one dataset per shift type. Used
// by the tests and as a golden-path input for the CLI.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace oodens {

struct FixtureOptions {
  std::uint64_t seed = 7;
  std::size_t train = 2000;
  std::size_t validation = 1500;
  std::size_t test = 1000;
  std::size_t ood = 400;
  int classes = 4;
  int penultimate_dim = 8;
  int early_dim = 6;
  int views = 5;
};

/// Writes model.json/head arrays and the datasets
///   id_train, id_val, id_test   in_distribution
///   novel                       novel_classes
///   adv                         adversarial (origin: id_test)
///   synthetic                   synthetic
///   corrupt                     corruption
///   multi                       multi_label (restricted to classes {0, 1})
void WriteSyntheticFixture(const std::filesystem::path& root, const FixtureOptions& options = {});

/// Ids of the OOD datasets written by WriteSyntheticFixture.
std::vector<std::string> FixtureOodIds();

/// Platform-independent Gaussian draws (Box-Muller over a 53-bit uniform).
class NormalSource {
 public:
  explicit NormalSource(std::uint64_t seed) : rng_(seed) {}
  double Uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double Normal();
  std::uint64_t Bits() { return rng_(); }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace oodens
