// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary buffers, JSON/text file helpers and a minimal CSV
// reader/writer shared by the container formats and reports.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "icefm/errors.hpp"

namespace icefm {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f32_array(const float* p, std::size_t n) { bytes(p, n * sizeof(float)); }
  void str(std::string_view s) { bytes(s.data(), s.size()); }

  [[nodiscard]] std::string_view view() const { return buf_; }
  /// Writes to a temporary sibling and renames it into place.
  void save(const std::filesystem::path& file) const;

 private:
  std::string buf_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string where) : data_(data), where_(std::move(where)) {}
  static ByteReader from_file(const std::filesystem::path& file);

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { return read<std::uint8_t>(); }
  std::uint16_t u16() { return read<std::uint16_t>(); }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::uint64_t u64() { return read<std::uint64_t>(); }
  void f32_array(float* out, std::size_t n) { bytes(out, n * sizeof(float)); }

  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }
  [[nodiscard]] bool at_end() const { return pos_ == data_.size(); }
  [[nodiscard]] std::string_view view() const { return data_; }

 private:
  template <typename T>
  T read() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError(where_ + ": truncated");
  }

  std::shared_ptr<const std::string> owned_;  // backing store when read from a file
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string where_;
};

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, std::string_view text);
nlohmann::json read_json_file(const std::filesystem::path& file);
void write_json_file(const std::filesystem::path& file, const nlohmann::json& j);

/// Hex FNV-1a digest of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const nlohmann::json& j);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws ValidationError if absent.
  [[nodiscard]] std::size_t column(const std::string& name) const;
  [[nodiscard]] bool has_column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& file);
std::string csv_escape(const std::string& field);
std::string csv_line(const std::vector<std::string>& fields);
void write_csv(const std::filesystem::path& file, const CsvTable& table);

}  // namespace icefm
