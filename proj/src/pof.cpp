#include "maxsec/pof.hpp"

#include "maxsec/errors.hpp"
#include "maxsec/scramble.hpp"
#include "text_util.hpp"

#include <algorithm>

namespace maxsec::forensics {

namespace {

constexpr std::uint8_t kBaseCtrl = 0xC2;
constexpr std::array<std::uint8_t, 3> kBaseTail = {0xE2, 0x0C, 0x58};

constexpr std::array<FuseSignature, 4> kTable = {{
    {SignatureKind::VerifyProtect, "VerifyProtect", 0x0030, 0xD2, {0xF3, 0x0C, 0x59}},
    {SignatureKind::EncryptedWithKey, "EncryptedWithKey", 0x0028, 0xC2, {0xE2, 0x0C, 0x98}},
    {SignatureKind::EncryptedPofOnly, "EncryptedPofOnly", 0x0014, 0xC3, {0xF2, 0x0C, 0x58}},
    {SignatureKind::SecuredJtag, "SecuredJtag", 0x001C, 0xC6, {0xA7, 0x0C, 0x58}},
}};

bool has_marker(std::span<const std::uint8_t> image, std::uint32_t offset)
{
    return std::equal(kFuseMarker.begin(), kFuseMarker.end(), image.begin() + offset);
}

} // namespace

const std::array<FuseSignature, 4>& signature_table()
{
    return kTable;
}

const FuseSignature& signature(SignatureKind kind)
{
    return kTable[static_cast<std::size_t>(kind)];
}

std::uint8_t combined_ctrl(SignatureSet set)
{
    std::uint8_t c = kBaseCtrl;
    for (const auto& s : kTable)
        if (set.has(s.kind))
            c ^= static_cast<std::uint8_t>(s.ctrl ^ kBaseCtrl);
    return c;
}

std::array<std::uint8_t, 3> combined_tail(SignatureSet set)
{
    auto t = kBaseTail;
    for (const auto& s : kTable)
        if (set.has(s.kind))
            for (std::size_t i = 0; i < 3; ++i)
                t[i] ^= static_cast<std::uint8_t>(s.tail[i] ^ kBaseTail[i]);
    return t;
}

void write_signatures(std::span<std::uint8_t> image, SignatureSet set,
                      const std::optional<crypto::AesKey>& key, std::uint32_t cfm_base)
{
    const std::size_t need = cfm_base + kTailDelta + 3;
    if (image.size() < need)
        throw ImageTooShort(image.size(), need);
    for (const auto& s : kTable)
        if (set.has(s.kind))
            std::copy(kFuseMarker.begin(), kFuseMarker.end(), image.begin() + s.marker_offset);
    if (set.has(SignatureKind::EncryptedWithKey)) {
        if (!key)
            throw Error("EncryptedWithKey signature requires a key");
        auto field = ScrambleMap::observed().scramble(*key);
        std::copy(field.begin(), field.end(), image.begin() + kKeyOffset);
    }
    image[cfm_base + kCtrlDelta] = combined_ctrl(set);
    auto tail = combined_tail(set);
    std::copy(tail.begin(), tail.end(), image.begin() + cfm_base + kTailDelta);
}

std::vector<std::uint8_t> synthesize_pof(std::size_t size, SignatureSet set,
                                         const std::optional<crypto::AesKey>& key,
                                         std::uint32_t cfm_base)
{
    std::vector<std::uint8_t> image(size, 0xFF);
    write_signatures(image, set, key, cfm_base);
    return image;
}

SignatureSet FuseReport::set() const
{
    SignatureSet s;
    for (const auto& f : fuses)
        s.add(f.kind);
    return s;
}

FuseReport detect_fuses(std::span<const std::uint8_t> image, std::uint32_t cfm_base)
{
    const std::size_t need = cfm_base + kTailDelta + 3;
    if (image.size() < need)
        throw ImageTooShort(image.size(), need);

    const std::uint32_t ctrl_offset = cfm_base + kCtrlDelta;
    const std::uint32_t tail_offset = cfm_base + kTailDelta;
    const std::uint8_t ctrl = image[ctrl_offset];
    const std::array<std::uint8_t, 3> tail = {image[tail_offset], image[tail_offset + 1],
                                              image[tail_offset + 2]};

    SignatureSet markers;
    for (const auto& s : kTable)
        if (has_marker(image, s.marker_offset))
            markers.add(s.kind);

    FuseReport report;
    if (!markers.empty() && ctrl == combined_ctrl(markers) && tail == combined_tail(markers)) {
        for (const auto& s : kTable)
            if (markers.has(s.kind))
                report.fuses.push_back(
                    {s.kind, std::string(s.name), s.marker_offset, ctrl_offset, tail_offset});
    } else {
        for (const auto& s : kTable) {
            if (markers.has(s.kind))
                report.anomalies.push_back({std::string(s.name), s.marker_offset,
                                            "marker present but control/tail bytes "
                                                + detail::hex(ctrl, 2) + " do not match"});
        }
        // Control/tail bytes of a single signature without its marker.
        for (const auto& s : kTable) {
            if (s.kind == SignatureKind::EncryptedWithKey)
                continue; // its control byte equals the base pattern
            if (!markers.has(s.kind) && ctrl == s.ctrl && tail == s.tail)
                report.anomalies.push_back({std::string(s.name), ctrl_offset,
                                            "control/tail bytes present without marker"});
        }
    }
    if (report.set().has(SignatureKind::EncryptedWithKey)) {
        crypto::AesKey field{};
        std::copy_n(image.begin() + kKeyOffset, 16, field.begin());
        report.key_field = field;
        report.key = ScrambleMap::observed().unscramble(field);
    }
    return report;
}

} // namespace maxsec::forensics
