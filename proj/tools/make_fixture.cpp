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

// Writes the synthetic fixture dataset root.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "oodens/errors.hpp"
#include "oodens/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic oodens fixture"};
  std::string root;
  oodens::FixtureOptions options;
  app.add_option("root", root, "Output directory")->required();
  app.add_option("--seed", options.seed, "Generator seed");
  app.add_option("--train", options.train, "Training records");
  app.add_option("--validation", options.validation, "Validation records");
  app.add_option("--test", options.test, "Test records");
  app.add_option("--ood", options.ood, "Records per OOD set");
  CLI11_PARSE(app, argc, argv);
  try {
    oodens::WriteSyntheticFixture(root, options);
  } catch (const oodens::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
