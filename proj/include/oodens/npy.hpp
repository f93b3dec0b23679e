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

// Minimal reader/writer for the NPY v1.0 array format. Only C-ordered,
// little-endian arrays of the four dtypes used by the toolkit are supported.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace oodens::npy {

enum class DType { kFloat32, kFloat64, kInt64, kUInt8 };

std::size_t ItemSize(DType dtype);
/// NumPy descr string, e.g. "<f4".
std::string Descr(DType dtype);

struct Array {
  DType dtype = DType::kFloat64;
  std::vector<std::size_t> shape;
  std::vector<std::byte> bytes;

  std::size_t size() const;
  /// Values converted to double. Valid for every dtype.
  std::vector<double> AsDoubles() const;
  /// Valid for kInt64 and kUInt8 only.
  std::vector<std::int64_t> AsInt64() const;
};

Array FromFloat32(std::vector<std::size_t> shape, std::span<const double> values);
Array FromFloat64(std::vector<std::size_t> shape, std::span<const double> values);
Array FromInt64(std::vector<std::size_t> shape, std::span<const std::int64_t> values);
Array FromUInt8(std::vector<std::size_t> shape, std::span<const std::uint8_t> values);

/// Serialized bytes of a complete .npy file.
std::string Encode(const Array& array);
Array Decode(const std::string& contents, const std::string& origin = "<memory>");

/// Throws FormatError naming the file on any I/O or format failure.
Array Read(const std::filesystem::path& path);
void Write(const std::filesystem::path& path, const Array& array);

}  // namespace oodens::npy
