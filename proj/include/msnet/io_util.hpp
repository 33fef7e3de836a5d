#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msnet {

// CRC-32 (IEEE, reflected 0xEDB88320), same check values as zip/zlib.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed = 0);

// Little-endian append-only buffer used by the binary file formats.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(const void* data, std::size_t len);
  void magic(const char tag[5]);  // exactly 4 chars

  // Appends the CRC-32 of everything written so far.
  void trailing_crc();

  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

// Cursor over a fully loaded file. Reads past the end throw a truncation
// error naming the file.
class ByteReader {
 public:
  ByteReader(std::string data, std::string name);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void bytes(void* out, std::size_t len);
  void expect_magic(const char tag[5]);

  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  // Verifies that the last 4 bytes hold the CRC-32 of everything before
  // them; subsequent reads stop short of the checksum.
  void check_trailing_crc();

  // For formats parsed before verification: call once the payload has been
  // consumed; exactly the 4 checksum bytes must remain and must hold the
  // CRC-32 of everything before them.
  void finish_trailing_crc();

  const std::string& name() const { return name_; }

 private:
  void need(std::size_t len);

  std::string data_;
  std::string name_;
  std::size_t pos_ = 0;
  std::size_t limit_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& data);
bool file_exists(const std::string& path);

}  // namespace msnet
