#ifndef SEMSHIFT_SHA256_HPP
#define SEMSHIFT_SHA256_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace semshift {

/// Incremental SHA-256 (FIPS 180-4).
class Sha256 {
 public:
  Sha256();
  void update(const void* data, std::size_t len);
  /// Finalizes and returns the lowercase hex digest.
  std::string hex_digest();

 private:
  void process_block(const std::uint8_t* block);

  std::uint32_t state_[8];
  std::uint64_t bit_count_ = 0;
  std::uint8_t buffer_[64];
  std::size_t buffered_ = 0;
};

std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::filesystem::path& path);

}  // namespace semshift

#endif  // SEMSHIFT_SHA256_HPP
