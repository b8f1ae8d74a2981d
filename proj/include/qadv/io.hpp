#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "qadv/tensor.hpp"

namespace qadv {

// Little-endian byte sink for the binary containers.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i32(std::int32_t v) { u32(std::uint32_t(v)); }
  void i64(std::int64_t v) { u64(std::uint64_t(v)); }
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  void str(std::string_view s);  // u32 length + bytes

  const std::vector<std::uint8_t>& buffer() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked little-endian reader; every failure reports the byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> data) : data_(std::move(data)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int32_t i32() { return std::int32_t(u32()); }
  std::int64_t i64() { return std::int64_t(u64()); }
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  std::string str();

  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n, const char* what);
  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// Raw tensor file: "QTEN", u32 rank, u64 dims[rank], u64 element count,
// then little-endian float32 elements.
void save_raw_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_raw_tensor(const std::filesystem::path& path);
void encode_raw_tensor(ByteWriter& w, const Tensor& t);
Tensor decode_raw_tensor(ByteReader& r);

// 64-bit FNV-1a, used for config hashes in manifests.
std::uint64_t fnv1a(std::string_view s);
std::string hex64(std::uint64_t v);

}  // namespace qadv
