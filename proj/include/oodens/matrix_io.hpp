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

// Eigen <-> NPY helpers. Matrices are stored row-major as NumPy expects.

#pragma once

#include <filesystem>

#include <Eigen/Dense>

#include "oodens/errors.hpp"
#include "oodens/npy.hpp"

namespace oodens {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline npy::Array MatrixToNpyF64(const Eigen::MatrixXd& m) {
  const RowMajorMatrix rm = m;
  return npy::FromFloat64(
      {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
      std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
}

inline void WriteMatrixF64(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  npy::Write(path, MatrixToNpyF64(m));
}

inline void WriteVectorF64(const std::filesystem::path& path, const Eigen::VectorXd& v) {
  npy::Write(path, npy::FromFloat64({static_cast<std::size_t>(v.size())},
                                    std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))));
}

inline Eigen::MatrixXd ReadMatrix(const std::filesystem::path& path) {
  const auto a = npy::Read(path);
  if (a.shape.size() != 2) throw FormatError(path.string() + ": expected a 2-d array");
  const auto values = a.AsDoubles();
  return Eigen::Map<const RowMajorMatrix>(values.data(), static_cast<Eigen::Index>(a.shape[0]),
                                          static_cast<Eigen::Index>(a.shape[1]));
}

inline Eigen::VectorXd ReadVector(const std::filesystem::path& path) {
  const auto a = npy::Read(path);
  if (a.shape.size() != 1) throw FormatError(path.string() + ": expected a 1-d array");
  const auto values = a.AsDoubles();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace oodens
