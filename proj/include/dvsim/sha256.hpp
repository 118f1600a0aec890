#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace dvsim {

/// Incremental SHA-256. Self-contained so the ledger has no external
/// crypto dependency; verified against the FIPS 180-4 test vectors.
class Sha256 {
 public:
  Sha256();

  void update(const void* data, std::size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }

  /// Finalizes and returns the digest as lowercase hex. The object must not
  /// be updated afterwards.
  std::string hex_digest();

  static std::string hash_hex(std::string_view s);

 private:
  void process_block(const std::uint8_t* block);

  std::array<std::uint32_t, 8> state_;
  std::array<std::uint8_t, 64> buffer_;
  std::uint64_t total_len_ = 0;
  std::size_t buffer_len_ = 0;
};

}  // namespace dvsim
