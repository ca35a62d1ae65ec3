#pragma once

#include "maxsec/crypto.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maxsec::forensics {

// 0x6C48A50F stored little-endian.
inline constexpr std::array<std::uint8_t, 4> kFuseMarker = {0x0F, 0xA5, 0x48, 0x6C};
inline constexpr std::uint32_t kFuseMarkerValue = 0x6C48A50F;

// Offsets in a 10M08 POF image (flash byte addresses). Control and tail bytes live in the
// configuration header at the start of CFM, so they move with the CFM base on other parts.
inline constexpr std::uint32_t kDefaultCfmBase = 0x01D000;
inline constexpr std::uint32_t kCtrlDelta = 0x7;
inline constexpr std::uint32_t kTailDelta = 0xC;
inline constexpr std::uint32_t kKeyOffset = 0x0000;

enum class SignatureKind : std::uint8_t { VerifyProtect, EncryptedWithKey, EncryptedPofOnly, SecuredJtag };

inline constexpr std::array<SignatureKind, 4> kAllSignatures = {
    SignatureKind::VerifyProtect, SignatureKind::EncryptedWithKey, SignatureKind::EncryptedPofOnly,
    SignatureKind::SecuredJtag};

struct FuseSignature {
    SignatureKind kind;
    std::string_view name;
    std::uint32_t marker_offset;
    std::uint8_t ctrl;
    std::array<std::uint8_t, 3> tail;
};

const std::array<FuseSignature, 4>& signature_table();
const FuseSignature& signature(SignatureKind kind);

// Bit set over SignatureKind.
class SignatureSet {
public:
    constexpr SignatureSet() = default;
    static constexpr SignatureSet from_bits(unsigned bits) { return SignatureSet(bits & 0xF); }

    constexpr bool has(SignatureKind k) const { return bits_ & bit(k); }
    constexpr void add(SignatureKind k) { bits_ |= bit(k); }
    constexpr unsigned bits() const { return bits_; }
    constexpr bool empty() const { return bits_ == 0; }
    bool operator==(const SignatureSet&) const = default;

private:
    constexpr explicit SignatureSet(unsigned bits) : bits_(bits) {}
    static constexpr unsigned bit(SignatureKind k) { return 1u << static_cast<unsigned>(k); }
    unsigned bits_ = 0;
};

// Control and tail bytes for a combination of signatures. The base pattern (no fuses) is
// C2 / E2,0C,58; each signature contributes its XOR delta from that base, so every single
// signature reproduces its observed bytes.
std::uint8_t combined_ctrl(SignatureSet set);
std::array<std::uint8_t, 3> combined_tail(SignatureSet set);

// Writes markers, control/tail bytes and (for EncryptedWithKey) the scrambled key field.
void write_signatures(std::span<std::uint8_t> image, SignatureSet set,
                      const std::optional<crypto::AesKey>& key = std::nullopt,
                      std::uint32_t cfm_base = kDefaultCfmBase);

// Minimal erased (0xFF) image of `size` bytes carrying the requested signatures.
std::vector<std::uint8_t> synthesize_pof(std::size_t size, SignatureSet set,
                                         const std::optional<crypto::AesKey>& key = std::nullopt,
                                         std::uint32_t cfm_base = kDefaultCfmBase);

struct FuseDetection {
    SignatureKind kind;
    std::string name;
    std::uint32_t marker_offset;
    std::uint32_t ctrl_offset;
    std::uint32_t tail_offset;
};

struct SignatureAnomaly {
    std::string name;
    std::uint32_t offset;
    std::string detail;
};

struct FuseReport {
    std::vector<FuseDetection> fuses;
    std::vector<SignatureAnomaly> anomalies;
    // Present when EncryptedWithKey was detected: raw field and unscrambled key.
    std::optional<crypto::AesKey> key_field;
    std::optional<crypto::AesKey> key;

    SignatureSet set() const;
};

FuseReport detect_fuses(std::span<const std::uint8_t> image, std::uint32_t cfm_base = kDefaultCfmBase);

} // namespace maxsec::forensics
