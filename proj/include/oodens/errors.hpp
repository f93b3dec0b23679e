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

#pragma once

#include <stdexcept>
#include <string>

namespace oodens {

/// Root of the library's exception hierarchy. Each subclass maps onto one CLI
/// exit code (see tools/oodens.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk artifact: missing file, wrong dtype, shape mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Well-formed container holding invalid values (NaN, out-of-range labels,
/// inconsistent predictions).
class DataError : public Error {
 public:
  using Error::Error;
};

/// An adversarial record points at an origin sample that does not exist.
class LinkageError : public DataError {
 public:
  using DataError::DataError;
};

/// A score needs an auxiliary channel the record does not carry.
class CapabilityError : public Error {
 public:
  CapabilityError(std::string score, const std::string& what)
      : Error(score + ": " + what), score_(std::move(score)) {}
  const std::string& score() const { return score_; }

 private:
  std::string score_;
};

/// A statistical fit cannot be carried out on the given data.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Factorization or other numerical routine failed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class SelectionError : public Error {
 public:
  using Error::Error;
};

/// An evaluation task has no qualifying samples on one side.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace oodens
