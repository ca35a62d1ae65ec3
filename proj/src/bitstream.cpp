#include "maxsec/bitstream.hpp"

#include "maxsec/errors.hpp"
#include "maxsec/pof.hpp"
#include "maxsec/scramble.hpp"

#include <algorithm>
#include <random>

namespace maxsec::device {

namespace {

const Region& cfm_region(const DeviceProfile& profile)
{
    const Region* cfm = profile.regions.find(AccessClass::ConfigFlash);
    if (!cfm)
        throw UnsupportedProfile("profile " + profile.name + " has no configuration flash region");
    return *cfm;
}

void store_le32(std::uint8_t* p, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t load_le32(const std::uint8_t* p)
{
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16
           | std::uint32_t{p[3]} << 24;
}

std::uint32_t frame_crc(const std::vector<std::uint8_t>& flash, std::uint32_t cfm_base,
                        const FrameLayout& f, std::span<const std::uint8_t> plain_body, bool first)
{
    std::uint32_t crc = 0;
    if (first)
        crc = crypto::crc32({flash.data() + cfm_base, kHeaderBytes}, crc);
    crc = crypto::crc32(plain_body, crc);
    crc = crypto::crc32({flash.data() + f.trailer() + 4, kTrailerBytes - 4}, crc);
    return crc;
}

} // namespace

std::vector<FrameLayout> cfm_frames(const DeviceProfile& profile)
{
    const Region& cfm = cfm_region(profile);
    const std::uint32_t frame = profile.cfm_frame_bytes;
    if (frame < 32 || frame % 16 != 0)
        throw UnsupportedProfile("cfm_frame_bytes must be a multiple of 16 and at least 32");
    if (cfm.size() < kHeaderBytes + 32 || cfm.size() % 16 != 0)
        throw UnsupportedProfile("configuration flash region too small for a bitstream");

    std::vector<FrameLayout> frames;
    std::uint32_t addr = cfm.start + kHeaderBytes;
    const std::uint32_t end = cfm.end + 1;
    while (addr < end) {
        std::uint32_t len = std::min(frame, end - addr);
        if (len < 32) {
            // Fold a too-short remainder into the previous frame.
            frames.back().body_bytes += len;
            break;
        }
        frames.push_back({addr, len - kTrailerBytes});
        addr += len;
    }
    return frames;
}

void install_key(FlashImage& image, const AesKey& key)
{
    auto field = forensics::ScrambleMap::observed().scramble(key);
    std::copy(field.begin(), field.end(), image.bytes.begin() + kKeySlot);
    std::copy(forensics::kFuseMarker.begin(), forensics::kFuseMarker.end(),
              image.bytes.begin() + kEncryptionSlot);
}

FlashImage build_image(const DeviceProfile& profile, const FuseSet& fuses, std::uint64_t seed)
{
    FlashImage image = FlashImage::erased(profile.flash_size());
    std::mt19937_64 rng(seed);
    auto fill_random = [&](std::uint32_t begin, std::uint32_t end) {
        for (std::uint32_t a = begin; a < end; ++a)
            image.bytes[a] = static_cast<std::uint8_t>(rng());
    };
    for (const Region& r : profile.regions.regions())
        if (r.access == AccessClass::UserFlash || r.access == AccessClass::Shadow)
            fill_random(r.start, r.end + 1);

    const Region& cfm = cfm_region(profile);
    const auto frames = cfm_frames(profile);

    // Header. The signature writer fills in the ctrl and tail bytes.
    std::uint8_t* hdr = image.bytes.data() + cfm.start;
    store_le32(hdr, static_cast<std::uint32_t>(crypto::mix64(seed)));
    hdr[4] = static_cast<std::uint8_t>(frames.size());
    hdr[5] = static_cast<std::uint8_t>(frames.size() >> 8);
    hdr[6] = static_cast<std::uint8_t>(profile.cfm_frame_bytes / 16);
    store_le32(hdr + 8, static_cast<std::uint32_t>(cfm.size()));
    hdr[0xF] = 0x00;

    forensics::SignatureSet set;
    if (fuses.verify_protect)
        set.add(forensics::SignatureKind::VerifyProtect);
    if (fuses.encrypted_pof_only)
        set.add(forensics::SignatureKind::EncryptedPofOnly);
    if (fuses.jtag_secure)
        set.add(forensics::SignatureKind::SecuredJtag);
    if (fuses.aes_key)
        set.add(forensics::SignatureKind::EncryptedWithKey);
    forensics::write_signatures(image.bytes, set, fuses.aes_key, cfm.start);

    crypto::Block iv{};
    std::vector<std::uint8_t> body;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const FrameLayout& f = frames[i];
        body.resize(f.body_bytes);
        for (auto& b : body)
            b = static_cast<std::uint8_t>(rng());
        std::uint8_t* trailer = image.bytes.data() + f.trailer();
        for (std::uint32_t k = 4; k < kTrailerBytes; ++k)
            trailer[k] = static_cast<std::uint8_t>(rng());
        store_le32(trailer, frame_crc(image.bytes, cfm.start, f, body, i == 0));
        if (fuses.aes_key)
            crypto::cbc_encrypt(*fuses.aes_key, iv, body);
        std::copy(body.begin(), body.end(), image.bytes.begin() + f.start);
    }
    return image;
}

BootResult boot_image(const DeviceProfile& profile, const FlashImage& image,
                      const std::optional<AesKey>& key)
{
    BootResult result;
    result.encrypted = key.has_value();
    result.events.push_back({BootPhase::Por, 0});

    const Region& cfm = cfm_region(profile);
    const auto frames = cfm_frames(profile);
    auto fetch = [&](std::uint32_t addr, std::uint32_t bytes) {
        for (std::uint32_t a = addr; a < addr + bytes; a += 8)
            result.events.push_back({BootPhase::FlashFetch, a});
    };

    fetch(cfm.start, kHeaderBytes);
    crypto::Block iv{};
    std::vector<std::uint8_t> body;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const FrameLayout& f = frames[i];
        body.assign(image.bytes.begin() + f.start, image.bytes.begin() + f.trailer());
        for (std::uint32_t off = 0; off < f.body_bytes; off += 16) {
            fetch(f.start + off, 16);
            if (key)
                result.events.push_back({BootPhase::AesDecrypt, f.start + off});
        }
        if (key)
            crypto::cbc_decrypt(*key, iv, body);
        fetch(f.trailer(), kTrailerBytes);
        result.events.push_back({BootPhase::CrcCheck, f.start});
        const std::uint32_t stored = load_le32(image.bytes.data() + f.trailer());
        if (stored != frame_crc(image.bytes, cfm.start, f, body, i == 0)) {
            result.events.push_back({BootPhase::Fail, f.start});
            result.failed_frame = i;
            return result;
        }
    }
    result.events.push_back({BootPhase::Configure, cfm.start});
    result.success = true;
    return result;
}

BootResult Device::boot() const
{
    return boot_image(profile_, flash_, stored_fuses().aes_key);
}

} // namespace maxsec::device
