#include "maxsec/scramble.hpp"

#include "maxsec/errors.hpp"

namespace maxsec::forensics {

namespace {

int nibble_value(char c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    return -1;
}

std::uint8_t get_nibble(const crypto::AesKey& k, std::size_t half, std::size_t j)
{
    std::uint8_t b = k[half * 8 + j / 2];
    return (j % 2 == 0) ? static_cast<std::uint8_t>(b >> 4) : static_cast<std::uint8_t>(b & 0xF);
}

void set_nibble(crypto::AesKey& k, std::size_t half, std::size_t j, std::uint8_t v)
{
    std::uint8_t& b = k[half * 8 + j / 2];
    if (j % 2 == 0)
        b = static_cast<std::uint8_t>((b & 0x0F) | (v << 4));
    else
        b = static_cast<std::uint8_t>((b & 0xF0) | v);
}

} // namespace

ScrambleMap ScrambleMap::observed()
{
    return from_example("0123456789ABCDEF", "3B7F195D2A6E084C");
}

ScrambleMap ScrambleMap::from_example(std::string_view plain, std::string_view scrambled)
{
    if (plain.size() != 16 || scrambled.size() != 16)
        throw LengthMismatch("scramble example must be 16 hex digits on each side");
    std::array<int, 16> position{};
    position.fill(-1);
    for (std::size_t i = 0; i < 16; ++i) {
        int v = nibble_value(plain[i]);
        if (v < 0 || position[static_cast<std::size_t>(v)] >= 0)
            throw FormatError("plain side must hold 16 distinct hex digits");
        position[static_cast<std::size_t>(v)] = static_cast<int>(i);
    }
    std::array<std::uint8_t, 16> perm{};
    for (std::size_t j = 0; j < 16; ++j) {
        int v = nibble_value(scrambled[j]);
        if (v < 0)
            throw FormatError("scrambled side holds a non-hex digit");
        perm[j] = static_cast<std::uint8_t>(position[static_cast<std::size_t>(v)]);
    }
    return ScrambleMap(perm);
}

ScrambleMap::ScrambleMap(const std::array<std::uint8_t, 16>& perm) : perm_(perm)
{
    std::array<bool, 16> seen{};
    for (auto p : perm_) {
        if (p >= 16 || seen[p])
            throw FormatError("scramble map is not a permutation of 0..15");
        seen[p] = true;
    }
}

crypto::AesKey ScrambleMap::scramble(const crypto::AesKey& key) const
{
    crypto::AesKey out{};
    for (std::size_t half = 0; half < 2; ++half)
        for (std::size_t j = 0; j < 16; ++j)
            set_nibble(out, half, j, get_nibble(key, half, perm_[j]));
    return out;
}

crypto::AesKey ScrambleMap::unscramble(const crypto::AesKey& field) const
{
    crypto::AesKey out{};
    for (std::size_t half = 0; half < 2; ++half)
        for (std::size_t j = 0; j < 16; ++j)
            set_nibble(out, half, perm_[j], get_nibble(field, half, j));
    return out;
}

} // namespace maxsec::forensics
