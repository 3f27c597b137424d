#include "vixen/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "vixen/error.hpp"

namespace vixen {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian host");

namespace {

std::uint32_t crc_of(std::string_view s) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

}  // namespace

BinaryWriter::BinaryWriter(std::string_view magic, std::uint32_t version) {
  buf_.append(magic);
  u32(version);
}

void BinaryWriter::u32(std::uint32_t v) { put(buf_, v); }
void BinaryWriter::u64(std::uint64_t v) { put(buf_, v); }
void BinaryWriter::f64(double v) { put(buf_, v); }

void BinaryWriter::f64s(std::span<const double> v) {
  buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void BinaryWriter::bytes(std::string_view s) {
  u64(s.size());
  buf_.append(s);
}

std::string BinaryWriter::finish() && {
  put(buf_, crc_of(buf_));
  return std::move(buf_);
}

BinaryReader::BinaryReader(std::string data, std::string_view magic, std::uint32_t version,
                           std::string what)
    : data_(std::move(data)), what_(std::move(what)) {
  const std::size_t header = magic.size() + sizeof(std::uint32_t);
  if (data_.size() < header + sizeof(std::uint32_t)) throw CheckpointError(what_ + ": file truncated");
  if (std::string_view(data_).substr(0, magic.size()) != magic) {
    throw CheckpointError(what_ + ": bad magic bytes (expected '" + std::string(magic) + "')");
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, data_.data() + data_.size() - sizeof stored_crc, sizeof stored_crc);
  end_ = data_.size() - sizeof stored_crc;
  if (crc_of(std::string_view(data_).substr(0, end_)) != stored_crc) {
    throw CheckpointError(what_ + ": CRC mismatch, file is corrupt");
  }
  pos_ = magic.size();
  const std::uint32_t found = u32();
  if (found != version) {
    throw CheckpointError(what_ + ": unsupported version " + std::to_string(found) + " (expected " +
                          std::to_string(version) + ")");
  }
}

void BinaryReader::need(std::size_t n) const {
  if (n > end_ - pos_) throw CheckpointError(what_ + ": payload truncated");
}

std::uint32_t BinaryReader::u32() {
  need(4);
  std::uint32_t v;
  std::memcpy(&v, data_.data() + pos_, 4);
  pos_ += 4;
  return v;
}

std::uint64_t BinaryReader::u64() {
  need(8);
  std::uint64_t v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

double BinaryReader::f64() {
  need(8);
  double v;
  std::memcpy(&v, data_.data() + pos_, 8);
  pos_ += 8;
  return v;
}

std::vector<double> BinaryReader::f64s(std::size_t n) {
  if (n > (end_ - pos_) / sizeof(double)) throw CheckpointError(what_ + ": payload truncated");
  std::vector<double> v(n);
  std::memcpy(v.data(), data_.data() + pos_, n * sizeof(double));
  pos_ += n * sizeof(double);
  return v;
}

std::string BinaryReader::bytes() {
  const auto n = u64();
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

void BinaryReader::expect_end() const {
  if (pos_ != end_) throw CheckpointError(what_ + ": trailing bytes after payload");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace vixen
