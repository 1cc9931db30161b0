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

#include "serf/blockfile.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

namespace serf {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'R', 'F', 'B', 'L', 'O', 'K'};

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T value) {
  for (size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

void append_f64(std::vector<std::uint8_t>& out, double value) {
  std::uint64_t bits;
  std::memcpy(&bits, &value, sizeof(bits));
  append_le(out, bits);
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  size_t pos = 0;

  void need(size_t count) const {
    if (pos + count > bytes.size()) throw CorruptBundle("blockfile: truncated");
  }
  template <typename T>
  T read_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }
  double read_f64() {
    const std::uint64_t bits = read_le<std::uint64_t>();
    double value;
    std::memcpy(&value, &bits, sizeof(value));
    return value;
  }
};

}  // namespace

void BlockFile::put_f64(const std::string& name, std::vector<double> values) {
  if (!has(name)) order_.push_back(name);
  f64_[name] = std::move(values);
}

void BlockFile::put_i64(const std::string& name, std::vector<std::int64_t> values) {
  if (!has(name)) order_.push_back(name);
  i64_[name] = std::move(values);
}

void BlockFile::put_str(const std::string& name, std::vector<std::string> values) {
  if (!has(name)) order_.push_back(name);
  str_[name] = std::move(values);
}

bool BlockFile::has(const std::string& name) const {
  return f64_.count(name) || i64_.count(name) || str_.count(name);
}

const std::vector<double>& BlockFile::get_f64(const std::string& name) const {
  auto it = f64_.find(name);
  if (it == f64_.end()) throw CorruptBundle("blockfile: missing f64 block '" + name + "'");
  return it->second;
}

const std::vector<std::int64_t>& BlockFile::get_i64(const std::string& name) const {
  auto it = i64_.find(name);
  if (it == i64_.end()) throw CorruptBundle("blockfile: missing i64 block '" + name + "'");
  return it->second;
}

const std::vector<std::string>& BlockFile::get_str(const std::string& name) const {
  auto it = str_.find(name);
  if (it == str_.end()) throw CorruptBundle("blockfile: missing str block '" + name + "'");
  return it->second;
}

std::vector<std::uint8_t> BlockFile::serialize() const {
  nlohmann::json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["meta"] = meta.is_null() ? nlohmann::json::object() : meta;
  nlohmann::json blocks = nlohmann::json::array();
  for (const std::string& name : order_) {
    nlohmann::json entry;
    entry["name"] = name;
    if (f64_.count(name)) {
      entry["kind"] = "f64";
      entry["count"] = f64_.at(name).size();
    } else if (i64_.count(name)) {
      entry["kind"] = "i64";
      entry["count"] = i64_.at(name).size();
    } else {
      entry["kind"] = "str";
      entry["count"] = str_.at(name).size();
    }
    blocks.push_back(entry);
  }
  manifest["blocks"] = blocks;
  const std::string manifest_text = manifest.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + sizeof(kMagic));
  append_le(out, kFormatVersion);
  append_le(out, static_cast<std::uint64_t>(manifest_text.size()));
  out.insert(out.end(), manifest_text.begin(), manifest_text.end());

  for (const std::string& name : order_) {
    if (auto it = f64_.find(name); it != f64_.end()) {
      for (double v : it->second) append_f64(out, v);
    } else if (auto it2 = i64_.find(name); it2 != i64_.end()) {
      for (std::int64_t v : it2->second) append_le(out, static_cast<std::uint64_t>(v));
    } else {
      for (const std::string& s : str_.at(name)) {
        append_le(out, static_cast<std::uint64_t>(s.size()));
        out.insert(out.end(), s.begin(), s.end());
      }
    }
  }

  const std::uint32_t crc =
      static_cast<std::uint32_t>(crc32(0L, out.data(), static_cast<uInt>(out.size())));
  append_le(out, crc);
  return out;
}

BlockFile BlockFile::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 8 + 4) throw CorruptBundle("blockfile: truncated");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw CorruptBundle("blockfile: bad magic");
  const std::uint32_t stored_crc = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
  const std::uint32_t actual_crc = static_cast<std::uint32_t>(
      crc32(0L, bytes.data(), static_cast<uInt>(bytes.size() - 4)));
  if (stored_crc != actual_crc) throw CorruptBundle("blockfile: checksum mismatch");

  Cursor cur{bytes, sizeof(kMagic)};
  const std::uint32_t version = cur.read_le<std::uint32_t>();
  if (version != kFormatVersion)
    throw VersionMismatch("blockfile: format version " + std::to_string(version) +
                          " not supported (expected " + std::to_string(kFormatVersion) + ")");
  const std::uint64_t manifest_len = cur.read_le<std::uint64_t>();
  cur.need(manifest_len);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + cur.pos, bytes.begin() + cur.pos + manifest_len);
  } catch (const nlohmann::json::exception& e) {
    throw CorruptBundle(std::string("blockfile: bad manifest: ") + e.what());
  }
  cur.pos += manifest_len;

  BlockFile file;
  file.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.value("blocks", nlohmann::json::array())) {
    const std::string name = entry.at("name");
    const std::string kind = entry.at("kind");
    const std::uint64_t count = entry.at("count");
    if (kind == "f64") {
      std::vector<double> values(count);
      for (auto& v : values) v = cur.read_f64();
      file.put_f64(name, std::move(values));
    } else if (kind == "i64") {
      std::vector<std::int64_t> values(count);
      for (auto& v : values) v = cur.read_le<std::int64_t>();
      file.put_i64(name, std::move(values));
    } else if (kind == "str") {
      std::vector<std::string> values(count);
      for (auto& s : values) {
        const std::uint64_t len = cur.read_le<std::uint64_t>();
        cur.need(len);
        s.assign(bytes.begin() + cur.pos, bytes.begin() + cur.pos + len);
        cur.pos += len;
      }
      file.put_str(name, std::move(values));
    } else {
      throw CorruptBundle("blockfile: unknown block kind '" + kind + "'");
    }
  }
  return file;
}

void BlockFile::write_file(const std::string& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

BlockFile BlockFile::read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace serf
