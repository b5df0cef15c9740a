#pragma once

// Little-endian binary helpers shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <boost/crc.hpp>

#include "flowik/errors.hpp"

namespace flowik::detail {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

inline std::uint32_t crc32(const void* data, std::size_t bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(data, bytes);
  return crc.checksum();
}

class ByteWriter {
 public:
  template <typename T>
  void put(const T& value) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&value);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint64_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  const std::vector<char>& bytes() const { return buf_; }

 private:
  std::vector<char> buf_;
};

// Reads from an in-memory copy of a file. Every short read raises
// ChecksumError since it means the file was truncated.
class ByteReader {
 public:
  ByteReader(std::vector<char> data, std::string source)
      : data_(std::move(data)), source_(std::move(source)) {}

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }
  const char* take(std::size_t n) {
    if (n > data_.size() - pos_) {
      throw ChecksumError(source_ + ": file is truncated");
    }
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string(std::size_t max_len = 1 << 28) {
    const auto n = get<std::uint64_t>();
    if (n > max_len) throw FormatError(source_ + ": implausible string length");
    const char* p = take(static_cast<std::size_t>(n));
    return std::string(p, static_cast<std::size_t>(n));
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& source() const { return source_; }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return std::vector<char>(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path);
}

}  // namespace flowik::detail
