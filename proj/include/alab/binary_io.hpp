#pragma once

// Little-endian encoders for the checkpoint, adapter and delta files.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "alab/tensor.hpp"

namespace alab {

class BinaryWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  // u32 length, then raw bytes.
  void str(std::string_view s);
  // Raw row-major fp64 values; the shape is written by the caller.
  void blob(const Matrix& m);

  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string data) : data_(std::move(data)) {}

  void expect_magic(std::string_view magic);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  Matrix blob(std::size_t rows, std::size_t cols);

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  void expect_end();

 private:
  void need(std::size_t n);

  std::string data_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);

}  // namespace alab
