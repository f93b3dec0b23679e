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

#include "oodens/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <regex>
#include <sstream>

#include "oodens/errors.hpp"

namespace oodens::npy {

static_assert(std::endian::native == std::endian::little,
              "NPY I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

template <typename T>
Array Pack(DType dtype, std::vector<std::size_t> shape, std::span<const T> values) {
  Array out;
  out.dtype = dtype;
  out.shape = std::move(shape);
  if (out.size() != values.size()) {
    throw FormatError("npy: shape holds " + std::to_string(out.size()) +
                      " elements but " + std::to_string(values.size()) +
                      " values were supplied");
  }
  out.bytes.resize(values.size() * sizeof(T));
  if (!values.empty()) std::memcpy(out.bytes.data(), values.data(), out.bytes.size());
  return out;
}

template <typename T>
T Load(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

std::string ShapeString(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) s += ",";
    if (i + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

DType ParseDescr(const std::string& descr, const std::string& origin) {
  if (descr == "<f4") return DType::kFloat32;
  if (descr == "<f8") return DType::kFloat64;
  if (descr == "<i8") return DType::kInt64;
  if (descr == "|u1" || descr == "<u1" || descr == "|b1") return DType::kUInt8;
  throw FormatError(origin + ": unsupported dtype '" + descr + "'");
}

}  // namespace

std::size_t ItemSize(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
    case DType::kInt64: return 8;
    case DType::kUInt8: return 1;
  }
  return 0;
}

std::string Descr(DType dtype) {
  switch (dtype) {
    case DType::kFloat32: return "<f4";
    case DType::kFloat64: return "<f8";
    case DType::kInt64: return "<i8";
    case DType::kUInt8: return "|u1";
  }
  return "";
}

std::size_t Array::size() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::vector<double> Array::AsDoubles() const {
  const std::size_t n = size();
  std::vector<double> out(n);
  const std::byte* p = bytes.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (dtype) {
      case DType::kFloat32: out[i] = Load<float>(p + 4 * i); break;
      case DType::kFloat64: out[i] = Load<double>(p + 8 * i); break;
      case DType::kInt64: out[i] = static_cast<double>(Load<std::int64_t>(p + 8 * i)); break;
      case DType::kUInt8: out[i] = static_cast<double>(Load<std::uint8_t>(p + i)); break;
    }
  }
  return out;
}

std::vector<std::int64_t> Array::AsInt64() const {
  const std::size_t n = size();
  std::vector<std::int64_t> out(n);
  const std::byte* p = bytes.data();
  if (dtype == DType::kInt64) {
    for (std::size_t i = 0; i < n; ++i) out[i] = Load<std::int64_t>(p + 8 * i);
  } else if (dtype == DType::kUInt8) {
    for (std::size_t i = 0; i < n; ++i) out[i] = Load<std::uint8_t>(p + i);
  } else {
    throw FormatError("npy: integer view requested on " + Descr(dtype) + " array");
  }
  return out;
}

Array FromFloat32(std::vector<std::size_t> shape, std::span<const double> values) {
  std::vector<float> narrowed(values.begin(), values.end());
  return Pack<float>(DType::kFloat32, std::move(shape), narrowed);
}

Array FromFloat64(std::vector<std::size_t> shape, std::span<const double> values) {
  return Pack<double>(DType::kFloat64, std::move(shape), values);
}

Array FromInt64(std::vector<std::size_t> shape, std::span<const std::int64_t> values) {
  return Pack<std::int64_t>(DType::kInt64, std::move(shape), values);
}

Array FromUInt8(std::vector<std::size_t> shape, std::span<const std::uint8_t> values) {
  return Pack<std::uint8_t>(DType::kUInt8, std::move(shape), values);
}

std::string Encode(const Array& array) {
  std::string header = "{'descr': '" + Descr(array.dtype) +
                       "', 'fortran_order': False, 'shape': " +
                       ShapeString(array.shape) + ", }";
  // Pad with spaces so magic + version + length + header is 64-byte aligned.
  const std::size_t preamble = kMagicLen + 2 + 2;
  std::size_t total = preamble + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  if (header.size() > 0xFFFF) throw FormatError("npy: header too long for v1.0");

  std::string out(kMagic, kMagicLen);
  out.push_back('\x01');
  out.push_back('\x00');
  const auto len = static_cast<std::uint16_t>(header.size());
  out.push_back(static_cast<char>(len & 0xFF));
  out.push_back(static_cast<char>(len >> 8));
  out += header;
  out.append(reinterpret_cast<const char*>(array.bytes.data()), array.bytes.size());
  return out;
}

Array Decode(const std::string& contents, const std::string& origin) {
  if (contents.size() < kMagicLen + 4 ||
      contents.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    throw FormatError(origin + ": not an NPY file");
  }
  const auto major = static_cast<unsigned char>(contents[kMagicLen]);
  std::size_t header_len = 0;
  std::size_t offset = kMagicLen + 2;
  auto byte_at = [&](std::size_t i) {
    return static_cast<std::size_t>(static_cast<unsigned char>(contents[i]));
  };
  if (major == 1) {
    header_len = byte_at(offset) | (byte_at(offset + 1) << 8);
    offset += 2;
  } else if (major == 2 || major == 3) {
    if (contents.size() < offset + 4) throw FormatError(origin + ": truncated header");
    header_len = byte_at(offset) | (byte_at(offset + 1) << 8) |
                 (byte_at(offset + 2) << 16) | (byte_at(offset + 3) << 24);
    offset += 4;
  } else {
    throw FormatError(origin + ": unsupported NPY version " + std::to_string(major));
  }
  if (contents.size() < offset + header_len) throw FormatError(origin + ": truncated header");
  const std::string header = contents.substr(offset, header_len);
  offset += header_len;

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) throw FormatError(origin + ": header lacks descr");
  Array out;
  out.dtype = ParseDescr(m[1].str(), origin);
  if (!std::regex_search(header, m, order_re)) {
    throw FormatError(origin + ": header lacks fortran_order");
  }
  if (m[1].str() == "True") throw FormatError(origin + ": Fortran-ordered arrays are not supported");
  if (!std::regex_search(header, m, shape_re)) throw FormatError(origin + ": header lacks shape");
  std::stringstream dims(m[1].str());
  std::string tok;
  while (std::getline(dims, tok, ',')) {
    const auto first = tok.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    out.shape.push_back(static_cast<std::size_t>(std::stoull(tok.substr(first))));
  }

  const std::size_t nbytes = out.size() * ItemSize(out.dtype);
  if (contents.size() - offset != nbytes) {
    throw FormatError(origin + ": payload holds " + std::to_string(contents.size() - offset) +
                      " bytes, shape " + ShapeString(out.shape) + " needs " +
                      std::to_string(nbytes));
  }
  out.bytes.resize(nbytes);
  if (nbytes) std::memcpy(out.bytes.data(), contents.data() + offset, nbytes);
  return out;
}

Array Read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing file: " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return Decode(contents, path.string());
}

void Write(const std::filesystem::path& path, const Array& array) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  const std::string bytes = Encode(array);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace oodens::npy
