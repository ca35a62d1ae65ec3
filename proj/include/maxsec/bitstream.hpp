#pragma once

#include "maxsec/device.hpp"

#include <cstdint>
#include <vector>

namespace maxsec::device {

// Configuration bitstream layout inside CFM:
//   16-byte plaintext header (ctrl byte at +7, tail bytes at +0xC..+0xE)
//   frames of profile.cfm_frame_bytes (the last one may be shorter), each made of a
//   body (AES-128-CBC with zero IV when a key is installed, chained across frames) and a
//   16-byte plaintext trailer: CRC-32 LE followed by 12 pad bytes.
// A frame's CRC covers the header (frame 0 only), the plaintext body and the pad bytes.
inline constexpr std::uint32_t kHeaderBytes = 16;
inline constexpr std::uint32_t kTrailerBytes = 16;

struct FrameLayout {
    std::uint32_t start;      // flash address of the frame
    std::uint32_t body_bytes; // multiple of 16
    std::uint32_t trailer() const { return start + body_bytes; }
    std::uint32_t end() const { return trailer() + kTrailerBytes; } // exclusive
};

// Frame layout for the profile's CFM. Throws UnsupportedProfile when CFM cannot hold it.
std::vector<FrameLayout> cfm_frames(const DeviceProfile& profile);

// A complete programmed image: random user data in UFM and Shadow, a seeded design
// bitstream in CFM (encrypted when fuses.aes_key is set) and the fuse markers.
FlashImage build_image(const DeviceProfile& profile, const FuseSet& fuses, std::uint64_t seed);

// Writes the scrambled key field and the encryption marker into the system area.
void install_key(FlashImage& image, const AesKey& key);

// Runs the boot sequence over an image with the given decryption key.
BootResult boot_image(const DeviceProfile& profile, const FlashImage& image,
                      const std::optional<AesKey>& key);

} // namespace maxsec::device
