#include "qadv/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "qadv/error.hpp"

namespace qadv {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(std::uint8_t(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u32(std::uint32_t(s.size()));
  bytes(s);
}

void ByteReader::fail(const std::string& what) const {
  throw FormatError(what + " at byte offset " + std::to_string(pos_));
}

void ByteReader::need(std::size_t n, const char* what) {
  if (data_.size() - pos_ < n) fail(std::string("truncated input while reading ") + what);
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return data_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::bytes(std::size_t n) {
  need(n, "bytes");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::string ByteReader::str() {
  const auto n = u32();
  return bytes(n);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string read_text(const std::filesystem::path& path) {
  const auto b = read_file(path);
  return {b.begin(), b.end()};
}

void encode_raw_tensor(ByteWriter& w, const Tensor& t) {
  w.bytes("QTEN");
  w.u32(std::uint32_t(t.rank()));
  for (auto d : t.shape()) w.u64(d);
  w.u64(t.size());
  for (float v : t.data()) w.f32(v);
}

Tensor decode_raw_tensor(ByteReader& r) {
  if (r.bytes(4) != "QTEN") r.fail("bad raw tensor magic");
  const auto rank = r.u32();
  if (rank == 0 || rank > 8) r.fail("unsupported tensor rank " + std::to_string(rank));
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = r.u64();
    if (d == 0 || d > (1ULL << 32)) r.fail("invalid tensor dimension " + std::to_string(d));
    shape.push_back(std::size_t(d));
  }
  const auto count = r.u64();
  if (count != shape_size(shape)) {
    r.fail("element count " + std::to_string(count) + " does not match dims " +
           shape_string(shape));
  }
  std::vector<float> data(count);
  for (auto& v : data) v = r.f32();
  return Tensor(std::move(shape), std::move(data));
}

void save_raw_tensor(const std::filesystem::path& path, const Tensor& t) {
  ByteWriter w;
  encode_raw_tensor(w, t);
  write_file(path, w.buffer());
}

Tensor load_raw_tensor(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  Tensor t = decode_raw_tensor(r);
  if (!r.at_end()) r.fail("trailing bytes after raw tensor");
  return t;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[std::size_t(i)] = digits[v & 0xf];
  return s;
}

}  // namespace qadv
