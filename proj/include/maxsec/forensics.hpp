#pragma once

#include "maxsec/crypto.hpp"
#include "maxsec/profile.hpp"
#include "maxsec/scramble.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maxsec::forensics {

struct ByteDiff {
    std::uint32_t offset = 0;
    std::uint8_t a = 0;
    std::uint8_t b = 0;
    std::optional<AccessClass> region; // set when a region map was supplied
    bool operator==(const ByteDiff&) const = default;
};

// Every differing offset, ascending. Throws LengthMismatch when sizes differ.
std::vector<ByteDiff> diff_images(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
                                  const RegionMap* regions = nullptr);

// Throws LengthMismatch unless `field` is 16 bytes.
crypto::AesKey unscramble_key(std::span<const std::uint8_t> field,
                              const ScrambleMap& map = ScrambleMap::observed());

// Quartus-style conversion mapping listing.
struct MappingRange {
    std::string name;
    std::uint32_t start = 0;
    std::uint32_t end = 0;
    std::optional<std::uint32_t> used_end; // the parenthesized value on CFM lines
};

struct MappingInfo {
    std::vector<MappingRange> ranges;
    std::optional<bool> epof;
    std::optional<bool> secured_jtag;
    std::optional<bool> verify_protect;
    std::optional<bool> io_pullup;
    std::optional<bool> spi_io_pullup;
    std::optional<std::string> watchdog;
    std::optional<std::string> por;
    std::optional<std::uint32_t> data_checksum;
    std::vector<std::string> notes; // unrecognized lines, verbatim

    const MappingRange* find(std::string_view name) const;
};

// Throws ParseError (with line number) on malformed hex, overlapping ranges or no ranges.
MappingInfo parse_mapping(std::string_view text);

// SRAM object file fields at fixed offsets.
inline constexpr std::size_t kSofUniqueIdOffset = 0x008B;
inline constexpr std::size_t kSofChecksumOffset = 0x0114;
inline constexpr std::size_t kSofHeaderBytes = 0x0124;

struct SofReport {
    std::array<std::uint8_t, 16> unique_id{};
    std::uint32_t checksum_field = 0;
    std::uint32_t computed_checksum = 0; // byte sum of the design body
    std::uint32_t trailing_crc = 0;      // last four bytes, LE; not validated
    std::size_t body_bytes = 0;

    bool checksum_matches() const { return checksum_field == computed_checksum; }
    bool operator==(const SofReport&) const = default;
};

// Throws ImageTooShort unless the file is longer than the header plus trailer.
SofReport analyze_sof(std::span<const std::uint8_t> sof);

struct SofComparison {
    bool unique_id_differs = false;
    bool checksum_differs = false;
    bool crc_differs = false;
    std::size_t body_bit_diffs = 0;
    std::size_t metadata_byte_diffs = 0; // header bytes outside the id and checksum fields
    // True when the designs differ and nothing outside the derived fields changed.
    bool design_only() const { return body_bit_diffs > 0 && metadata_byte_diffs == 0; }
};

SofComparison compare_sof(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);

// Builds an SOF around `design`: fixed header, design-derived unique id, byte-sum checksum,
// CRC-32 trailer.
std::vector<std::uint8_t> synthesize_sof(std::span<const std::uint8_t> design);

} // namespace maxsec::forensics
