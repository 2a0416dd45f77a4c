#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace affect {

/// SHA-256 digest of a byte buffer, as a lowercase hex string.
std::string sha256_hex(const std::uint8_t* data, std::size_t size);

inline std::string sha256_hex(const std::vector<std::uint8_t>& data) {
  return sha256_hex(data.data(), data.size());
}

inline std::string sha256_hex(const std::string& data) {
  return sha256_hex(reinterpret_cast<const std::uint8_t*>(data.data()),
                    data.size());
}

}  // namespace affect
