// Copyright 2026 The SERF Authors.
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

#ifndef SERF_BLOCKFILE_HPP_
#define SERF_BLOCKFILE_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "serf/common.hpp"

namespace serf {

struct CorruptBundle : DataError {
  using DataError::DataError;
};
struct VersionMismatch : DataError {
  using DataError::DataError;
};

// Checksummed archive of named little-endian numeric blocks plus a JSON
// manifest. Layout: 8-byte magic, u32 format version, u64 manifest
// length, manifest bytes, block payloads in manifest order, u32 CRC-32
// (zlib) of everything before it.
class BlockFile {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json meta;  // free-form manifest section

  void put_f64(const std::string& name, std::vector<double> values);
  void put_i64(const std::string& name, std::vector<std::int64_t> values);
  void put_str(const std::string& name, std::vector<std::string> values);

  bool has(const std::string& name) const;
  const std::vector<double>& get_f64(const std::string& name) const;
  const std::vector<std::int64_t>& get_i64(const std::string& name) const;
  const std::vector<std::string>& get_str(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  // Throws CorruptBundle on bad magic / checksum / truncation and
  // VersionMismatch on an unsupported format version.
  static BlockFile deserialize(const std::vector<std::uint8_t>& bytes);

  void write_file(const std::string& path) const;
  static BlockFile read_file(const std::string& path);

 private:
  std::vector<std::string> order_;  // block names in insertion order
  std::map<std::string, std::vector<double>> f64_;
  std::map<std::string, std::vector<std::int64_t>> i64_;
  std::map<std::string, std::vector<std::string>> str_;
};

}  // namespace serf

#endif  // SERF_BLOCKFILE_HPP_
