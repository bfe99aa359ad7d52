#pragma once

// Little-endian fixed-width serialization helpers shared by the on-disk
// formats (BGDS, BGER, BGTC, BGPP).

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "bingear/error.hpp"

namespace bingear::io {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

class Writer {
 public:
  void magic(std::string_view tag) {
    bytes_.insert(bytes_.end(), tag.begin(), tag.end());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    std::array<char, sizeof(T)> raw;
    std::memcpy(raw.data(), &value, sizeof(T));
    bytes_.insert(bytes_.end(), raw.begin(), raw.end());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put_span(std::span<const T> values) {
    const auto* p = reinterpret_cast<const char*>(values.data());
    bytes_.insert(bytes_.end(), p, p + values.size_bytes());
  }

  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::data, "cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::data, "write failed: " + path);
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes, std::string name = "<buffer>")
      : bytes_(std::move(bytes)), name_(std::move(name)) {}

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::data, "cannot open: " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    return Reader(std::move(bytes), path);
  }

  void expect_magic(std::string_view tag) {
    need(tag.size());
    if (std::string_view(bytes_.data() + pos_, tag.size()) != tag) {
      fail(ErrorKind::format, name_ + ": bad magic, expected \"" +
                                  std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void get_span(std::span<T> out) {
    need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }

  void expect_end() const {
    if (pos_ != bytes_.size()) {
      fail(ErrorKind::format, name_ + ": trailing bytes after payload");
    }
  }

  const std::string& name() const { return name_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail(ErrorKind::format, name_ + ": truncated file");
    }
  }

  std::vector<char> bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace bingear::io
