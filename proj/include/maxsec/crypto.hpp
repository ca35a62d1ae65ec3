#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace maxsec::crypto {

using AesKey = std::array<std::uint8_t, 16>;
using Block = std::array<std::uint8_t, 16>;

// CRC-32, reflected, polynomial 0xEDB88320 (zlib).
std::uint32_t crc32(std::span<const std::uint8_t> data, std::uint32_t crc = 0);

// AES-128-CBC without padding; `data.size()` must be a multiple of 16.
// `iv` is updated to the last ciphertext block so calls can be chained.
void cbc_encrypt(const AesKey& key, Block& iv, std::span<std::uint8_t> data);
void cbc_decrypt(const AesKey& key, Block& iv, std::span<std::uint8_t> data);

// 64-bit finalizer (splitmix64). Non-cryptographic.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

} // namespace maxsec::crypto
