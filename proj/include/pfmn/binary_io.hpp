#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "pfmn/error.hpp"

namespace pfmn::binary {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

class Writer {
 public:
  template <class U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked cursor; errors carry the byte offset.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  template <class U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v;
    std::memcpy(&v, data_ + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void get_bytes(void* out, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n, const char* field) {
    if (size_ - pos_ < n) {
      throw FormatError(what_ + ": truncated " + field + " at byte offset " + std::to_string(pos_) + ": expected " +
                        std::to_string(n) + " bytes, " + std::to_string(size_ - pos_) + " available");
    }
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace pfmn::binary
