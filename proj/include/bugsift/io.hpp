#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bugsift/common.hpp"
#include "bugsift/tensor.hpp"

namespace bugsift {

// ---------------------------------------------------------------------------
// Atomic file writes: stage into a sibling temp file, then rename. A stage
// that dies mid-write never leaves a half-written artifact behind.
// ---------------------------------------------------------------------------

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot open for write: " + tmp.string());
    out.write(contents.data(),
              static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw RuntimeFailure("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw RuntimeFailure("atomic rename failed for " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  return contents;
}

// ---------------------------------------------------------------------------
// Little-endian binary encoding. Model files and tree snapshots share this
// convention: magic bytes, u32 format version, then format-specific payload
// with 32-bit little-endian floats for matrices.
// ---------------------------------------------------------------------------

namespace detail {

template <typename U>
void append_le(std::string& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xffu));
}

template <typename U>
U read_le(const std::string& in, std::size_t& pos) {
  static_assert(std::is_unsigned_v<U>);
  if (pos + sizeof(U) > in.size()) throw DataError("truncated binary file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace detail

class BinaryWriter {
 public:
  explicit BinaryWriter(std::string magic, std::uint32_t version) {
    if (magic.size() != 8) throw RuntimeFailure("magic must be 8 bytes");
    buf_ = std::move(magic);
    u32(version);
  }

  void u32(std::uint32_t v) { detail::append_le(buf_, v); }
  void u64(std::uint64_t v) { detail::append_le(buf_, v); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::append_le(buf_, bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    detail::append_le(buf_, bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    buf_.append(s);
  }
  // Matrices are stored as float32 regardless of the in-memory scalar type.
  template <typename T>
  void matrix(const Matrix<T>& m) {
    u64(m.rows);
    u64(m.cols);
    for (T v : m.data) f32(static_cast<float>(v));
  }
  template <typename T>
  void vec_f32(const std::vector<T>& v) {
    u64(v.size());
    for (T x : v) f32(static_cast<float>(x));
  }
  void vec_f64(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

  const std::string& bytes() const { return buf_; }
  void save(const std::filesystem::path& path) const {
    write_file_atomic(path, buf_);
  }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  BinaryReader(std::string bytes, const std::string& expected_magic,
               std::uint32_t expected_version)
      : buf_(std::move(bytes)) {
    if (buf_.size() < 12 || buf_.compare(0, 8, expected_magic) != 0)
      throw DataError("bad magic; not a " + expected_magic + " file");
    pos_ = 8;
    std::uint32_t version = u32();
    if (version != expected_version)
      throw DataError("unsupported " + expected_magic + " format version " +
                      std::to_string(version));
  }

  static BinaryReader open(const std::filesystem::path& path,
                           const std::string& magic, std::uint32_t version) {
    return BinaryReader(read_file(path), magic, version);
  }

  std::uint32_t u32() { return detail::read_le<std::uint32_t>(buf_, pos_); }
  std::uint64_t u64() { return detail::read_le<std::uint64_t>(buf_, pos_); }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    std::uint64_t n = u64();
    if (pos_ + n > buf_.size()) throw DataError("truncated binary file");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  Matrix<T> matrix() {
    std::uint64_t r = u64(), c = u64();
    Matrix<T> m(r, c);
    for (std::size_t i = 0; i < m.data.size(); ++i)
      m.data[i] = static_cast<T>(f32());
    return m;
  }
  template <typename T>
  std::vector<T> vec_f32() {
    std::uint64_t n = u64();
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(f32());
    return v;
  }
  std::vector<double> vec_f64() {
    std::uint64_t n = u64();
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

}  // namespace bugsift
