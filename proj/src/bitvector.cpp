#include "maxsec/bitvector.hpp"

#include "maxsec/errors.hpp"

#include <bit>

namespace maxsec {

namespace {

int hex_digit(char c)
{
    if (c >= '0' && c <= '9')
        return c - '0';
    if (c >= 'a' && c <= 'f')
        return c - 'a' + 10;
    if (c >= 'A' && c <= 'F')
        return c - 'A' + 10;
    return -1;
}

} // namespace

BitVector::BitVector(std::size_t size, bool fill)
    : bytes_((size + 7) / 8, fill ? 0xFF : 0x00), size_(size)
{
    clear_padding();
}

BitVector BitVector::from_uint(std::uint64_t value, std::size_t width)
{
    BitVector v(width);
    for (std::size_t i = 0; i < width && i < 64; ++i)
        v.set(i, (value >> i) & 1u);
    return v;
}

BitVector BitVector::from_hex(std::size_t size, std::string_view hex)
{
    const std::size_t nbytes = (size + 7) / 8;
    if (hex.size() != nbytes * 2)
        throw FormatError("hex field has " + std::to_string(hex.size()) + " digits, expected "
                          + std::to_string(nbytes * 2) + " for " + std::to_string(size) + " bits");
    BitVector v(size);
    for (std::size_t i = 0; i < nbytes; ++i) {
        int hi = hex_digit(hex[2 * i]);
        int lo = hex_digit(hex[2 * i + 1]);
        if (hi < 0 || lo < 0)
            throw FormatError("invalid hex digit in bit field");
        v.bytes_[i] = static_cast<std::uint8_t>((hi << 4) | lo);
    }
    if (size % 8 != 0) {
        auto pad = static_cast<std::uint8_t>(0xFFu << (size % 8));
        if (v.bytes_.back() & pad)
            throw FormatError("nonzero padding bits above bit count");
    }
    return v;
}

BitVector BitVector::from_bytes(const std::uint8_t* data, std::size_t nbytes, std::size_t size)
{
    BitVector v(size);
    for (std::size_t i = 0; i < v.bytes_.size() && i < nbytes; ++i)
        v.bytes_[i] = data[i];
    v.clear_padding();
    return v;
}

void BitVector::push_back(bool b)
{
    if (size_ % 8 == 0)
        bytes_.push_back(0);
    ++size_;
    set(size_ - 1, b);
}

void BitVector::append(const BitVector& other)
{
    if (size_ % 8 == 0) {
        bytes_.insert(bytes_.end(), other.bytes_.begin(), other.bytes_.end());
        size_ += other.size_;
        return;
    }
    for (std::size_t i = 0; i < other.size_; ++i)
        push_back(other.get(i));
}

void BitVector::resize(std::size_t size, bool fill)
{
    const std::size_t old = size_;
    bytes_.resize((size + 7) / 8, 0);
    size_ = size;
    for (std::size_t i = old; i < size; ++i)
        set(i, fill);
    clear_padding();
}

BitVector BitVector::slice(std::size_t begin, std::size_t count) const
{
    if (begin + count > size_)
        throw std::out_of_range("BitVector::slice out of range");
    BitVector v(count);
    for (std::size_t i = 0; i < count; ++i)
        v.set(i, get(begin + i));
    return v;
}

std::uint64_t BitVector::to_uint() const
{
    return to_uint(0, size_ < 64 ? size_ : 64);
}

std::uint64_t BitVector::to_uint(std::size_t begin, std::size_t count) const
{
    std::uint64_t value = 0;
    for (std::size_t i = 0; i < count && i < 64; ++i)
        if (get(begin + i))
            value |= std::uint64_t{1} << i;
    return value;
}

std::string BitVector::to_hex() const
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes_.size() * 2);
    for (auto b : bytes_) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

std::string BitVector::to_binary() const
{
    std::string out(size_, '0');
    for (std::size_t i = 0; i < size_; ++i)
        if (get(i))
            out[size_ - 1 - i] = '1';
    return out;
}

std::size_t BitVector::popcount() const
{
    std::size_t n = 0;
    for (auto b : bytes_)
        n += static_cast<std::size_t>(std::popcount(static_cast<unsigned>(b)));
    return n;
}

void BitVector::clear_padding()
{
    if (size_ % 8 != 0 && !bytes_.empty())
        bytes_.back() &= static_cast<std::uint8_t>((1u << (size_ % 8)) - 1);
}

} // namespace maxsec
