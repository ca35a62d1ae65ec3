#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace maxsec {

// Ordered bit sequence in JTAG shift order: bit 0 is the first bit on the wire.
// Storage is little-endian bit-packed: bit i lives in byte i/8 at position i%8.
class BitVector {
public:
    BitVector() = default;
    explicit BitVector(std::size_t size, bool fill = false);

    static BitVector from_uint(std::uint64_t value, std::size_t width);
    // Parses the wire hex form. Padding bits above `size` must be zero.
    static BitVector from_hex(std::size_t size, std::string_view hex);
    static BitVector from_bytes(const std::uint8_t* data, std::size_t nbytes, std::size_t size);

    std::size_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    bool get(std::size_t i) const { return (bytes_[i >> 3] >> (i & 7)) & 1u; }
    void set(std::size_t i, bool b)
    {
        auto mask = static_cast<std::uint8_t>(1u << (i & 7));
        if (b)
            bytes_[i >> 3] |= mask;
        else
            bytes_[i >> 3] &= static_cast<std::uint8_t>(~mask);
    }
    bool operator[](std::size_t i) const { return get(i); }

    void push_back(bool b);
    void append(const BitVector& other);
    void resize(std::size_t size, bool fill = false);

    BitVector slice(std::size_t begin, std::size_t count) const;

    // Value of bits [0, min(64,size)).
    std::uint64_t to_uint() const;
    std::uint64_t to_uint(std::size_t begin, std::size_t count) const;

    std::string to_hex() const;
    std::string to_binary() const;
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

    std::size_t popcount() const;

    bool operator==(const BitVector& other) const = default;

private:
    void clear_padding();

    std::vector<std::uint8_t> bytes_;
    std::size_t size_ = 0;
};

} // namespace maxsec
