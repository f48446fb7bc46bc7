#pragma once

#include "cecg/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

namespace cecg::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class BinaryWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  void put_doubles(const double* data, std::size_t n) { put_bytes(data, n * sizeof(double)); }

  void write_file(const std::string& path, const char* where) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(where, "cannot open '" + path + "' for writing");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw Error(where, "write to '" + path + "' failed");
  }

 private:
  std::vector<char> bytes_;
};

class BinaryReader {
 public:
  BinaryReader(const std::string& path, const char* where) : where_(where) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(where, "cannot open '" + path + "'");
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    T value;
    get_bytes(&value, sizeof(T));
    return value;
  }
  void get_bytes(void* out, std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError(where_, "truncated file");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  void get_doubles(double* out, std::size_t n) {
    if (n > (bytes_.size() - pos_) / sizeof(double)) throw FormatError(where_, "truncated payload");
    get_bytes(out, n * sizeof(double));
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const char* where_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace cecg::detail
