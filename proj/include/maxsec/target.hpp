#pragma once

#include "maxsec/device.hpp"
#include "maxsec/profile.hpp"
#include "maxsec/tap.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

namespace maxsec {

// "sim:<profile>[?fuses=vp,epof,jtagsec&image=<file>&key=<32 hex>&seed=<n>&preload=1]"
// or "remote:<host>:<port>".
struct TargetSpec {
    enum class Kind : std::uint8_t { Sim, Remote };
    Kind kind = Kind::Sim;

    std::string profile;              // sim
    device::FuseSet fuses;            // sim; aes_key from key=
    std::optional<std::string> image; // sim: raw flash image instead of a synthesized one
    std::uint64_t seed = 1;           // sim: seed of the synthesized design
    bool preload = false;             // sim: a user design is running (enables the USER1 path)

    std::string host; // remote
    std::uint16_t port = 0;

    // Throws FormatError on malformed specs and unknown fuse names.
    static TargetSpec parse(std::string_view text);
    std::string str() const;
};

// 32 hex digits, byte 0 first. Throws FormatError.
crypto::AesKey parse_key(std::string_view hex);
std::string key_hex(const crypto::AesKey& key);

// Comma-separated fuse names: vp, epof, jtagsec. Throws FormatError.
device::FuseSet parse_fuse_list(std::string_view list);

// Builds the simulated device for a sim: spec.
device::Device make_device(const TargetSpec& spec);

struct OpenTarget {
    std::unique_ptr<tap::Transport> transport;
    DeviceProfile profile;
    device::SimTransport* sim = nullptr; // set for sim: targets
};

// Remote targets do not describe themselves; `remote_profile` names the profile to assume.
OpenTarget open_target(const TargetSpec& spec, const std::string& remote_profile = "10m08");

} // namespace maxsec
