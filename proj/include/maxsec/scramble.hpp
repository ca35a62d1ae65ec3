#pragma once

#include "maxsec/crypto.hpp"

#include <array>
#include <cstdint>
#include <string_view>

namespace maxsec::forensics {

// Nibble permutation applied independently to each 16-nibble half of a 16-byte key field.
// Nibble order within a half follows the hex rendering: byte 0 high nibble first.
// scramble: out[j] = in[perm[j]].
class ScrambleMap {
public:
    // The mapping observed in POF key fields: 0123456789ABCDEF -> 3B7F195D2A6E084C.
    static ScrambleMap observed();

    // Derives the permutation from a plain/scrambled pair of 16 distinct hex digits.
    static ScrambleMap from_example(std::string_view plain, std::string_view scrambled);

    explicit ScrambleMap(const std::array<std::uint8_t, 16>& perm);

    const std::array<std::uint8_t, 16>& perm() const { return perm_; }

    crypto::AesKey scramble(const crypto::AesKey& key) const;
    crypto::AesKey unscramble(const crypto::AesKey& field) const;

private:
    std::array<std::uint8_t, 16> perm_;
};

} // namespace maxsec::forensics
