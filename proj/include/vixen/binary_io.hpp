#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vixen {

// Little-endian record writer for the versioned checkpoint containers.
// Every container is: 4-byte magic, u32 version, payload, u32 CRC-32 of all
// preceding bytes.
class BinaryWriter {
 public:
  BinaryWriter(std::string_view magic, std::uint32_t version);

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> v);
  /// u64 length then raw bytes.
  void bytes(std::string_view s);

  /// Appends the CRC and returns the finished buffer.
  std::string finish() &&;

 private:
  std::string buf_;
};

class BinaryReader {
 public:
  /// Verifies magic, version and CRC before any payload is exposed.
  /// Throws CheckpointError naming `what` on any mismatch.
  BinaryReader(std::string data, std::string_view magic, std::uint32_t version, std::string what);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t n);
  std::string bytes();

  /// Throws unless the whole payload was consumed.
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::string data_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  std::string what_;
};

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view data);

}  // namespace vixen
