#pragma once

// Little-endian field encoding shared by the dataset and model file formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "sbthermo/error.hpp"

namespace sbthermo::detail {

template <typename T>
T to_little_endian(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return value;
}

class ByteWriter {
 public:
  void bytes(std::string_view raw) { buf_.append(raw); }

  template <typename T>
  void put(T value) {
    value = to_little_endian(value);
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    buf_.append(raw, sizeof(T));
  }

  void put_doubles(std::span<const double> values) {
    for (double v : values) put(v);
  }

  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

// Bounds-checked cursor; every read names the field so a truncated or
// corrupted file reports where it broke.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view bytes(std::size_t n, const char* field) {
    require(n, field);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  T get(const char* field) {
    require(sizeof(T), field);
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little_endian(value);
  }

  void get_doubles(std::span<double> out, const char* field) {
    require(out.size() * sizeof(double), field);
    for (double& v : out) v = get<double>(field);
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void require(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n)
      fail(ErrorCode::kFormat, std::string("file truncated while reading ") + field +
                                   " at byte " + std::to_string(pos_));
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary and renames, so readers never observe a
// partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace sbthermo::detail
