#include "alab/binary_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "alab/errors.hpp"

namespace alab {
namespace {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <class T>
void put(std::string& buf, T v) {
  v = to_little(v);
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.append(b, sizeof(T));
}

}  // namespace

void BinaryWriter::u32(std::uint32_t v) { put(buf_, v); }
void BinaryWriter::u64(std::uint64_t v) { put(buf_, v); }
void BinaryWriter::f64(double v) { put(buf_, std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.append(s);
}

void BinaryWriter::blob(const Matrix& m) {
  for (double v : m.values()) f64(v);
}

void BinaryReader::need(std::size_t n) {
  if (data_.size() - pos_ < n) {
    throw FormatError("truncated file: needed " + std::to_string(n) + " more bytes", pos_);
  }
}

void BinaryReader::expect_magic(std::string_view magic) {
  need(magic.size());
  if (std::string_view(data_).substr(pos_, magic.size()) != magic) {
    throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", pos_);
  }
  pos_ += magic.size();
}

std::uint8_t BinaryReader::u8() {
  need(1);
  return static_cast<std::uint8_t>(data_[pos_++]);
}

std::uint32_t BinaryReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return to_little(v);
}

std::uint64_t BinaryReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return to_little(v);
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

Matrix BinaryReader::blob(std::size_t rows, std::size_t cols) {
  const std::size_t start = pos_;
  if (rows != 0 && cols > (data_.size() - pos_) / 8 / rows) {
    throw FormatError("truncated blob of shape " + std::to_string(rows) + "x" + std::to_string(cols), start);
  }
  Matrix m(rows, cols);
  for (double& v : m.values()) v = f64();
  return m;
}

void BinaryReader::expect_end() {
  if (!at_end()) throw FormatError("trailing bytes after payload", pos_);
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorClass::data, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorClass::data, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorClass::data, "short write to " + path.string());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorClass::internal, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

}  // namespace alab
