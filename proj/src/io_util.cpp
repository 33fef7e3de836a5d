#include "msnet/io_util.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "msnet/errors.hpp"

namespace msnet {

namespace {

struct Crc32Table {
  std::uint32_t t[256];
  Crc32Table() {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
  }
};

const Crc32Table kCrcTable;

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint32_t c = seed ^ 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = kCrcTable.t[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

void ByteWriter::u32(std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xFF);
  buf_.append(b, 4);
}

void ByteWriter::u64(std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xFF);
  buf_.append(b, 8);
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::bytes(const void* data, std::size_t len) {
  buf_.append(static_cast<const char*>(data), len);
}

void ByteWriter::magic(const char tag[5]) { buf_.append(tag, 4); }

void ByteWriter::trailing_crc() { u32(crc32(buf_.data(), buf_.size())); }

ByteReader::ByteReader(std::string data, std::string name)
    : data_(std::move(data)), name_(std::move(name)), limit_(data_.size()) {}

void ByteReader::need(std::size_t len) {
  if (pos_ + len > limit_)
    throw IoError(name_ + ": truncated file (wanted " + std::to_string(len) + " bytes at offset " +
                  std::to_string(pos_) + ")");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::bytes(void* out, std::size_t len) {
  need(len);
  std::memcpy(out, data_.data() + pos_, len);
  pos_ += len;
}

void ByteReader::expect_magic(const char tag[5]) {
  need(4);
  if (std::memcmp(data_.data() + pos_, tag, 4) != 0)
    throw IoError(name_ + ": bad magic, expected \"" + std::string(tag, 4) + "\"");
  pos_ += 4;
}

void ByteReader::check_trailing_crc() {
  if (data_.size() < 4) throw IoError(name_ + ": truncated file (no checksum)");
  const std::size_t body = data_.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= std::uint32_t(static_cast<unsigned char>(data_[body + i])) << (8 * i);
  const std::uint32_t computed = crc32(data_.data(), body);
  if (stored != computed)
    throw IoError(name_ + ": checksum mismatch (file corrupt)");
  limit_ = body;
}

void ByteReader::finish_trailing_crc() {
  if (remaining() > 4) throw IoError(name_ + ": trailing bytes after payload");
  if (remaining() < 4) throw IoError(name_ + ": truncated file (no checksum)");
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= std::uint32_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  if (stored != crc32(data_.data(), pos_))
    throw IoError(name_ + ": checksum mismatch (file corrupt)");
  pos_ = data_.size();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path + ": read failed");
  return data;
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(data.data(), std::streamsize(data.size()));
  out.flush();
  if (!out) throw IoError(path + ": write failed");
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

}  // namespace msnet
