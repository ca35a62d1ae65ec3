#include "maxsec/target.hpp"

#include "maxsec/bitstream.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/remote.hpp"
#include "text_util.hpp"

#include <fmt/format.h>

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

std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            return out;
        start = pos + 1;
    }
}

} // namespace

crypto::AesKey parse_key(std::string_view hex)
{
    if (hex.size() != 32)
        throw FormatError("AES key must be 32 hex digits");
    crypto::AesKey k{};
    for (std::size_t i = 0; i < 16; ++i) {
        const int hi = hex_digit(hex[2 * i]);
        const int lo = hex_digit(hex[2 * i + 1]);
        if (hi < 0 || lo < 0)
            throw FormatError("AES key contains a non-hex digit");
        k[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return k;
}

std::string key_hex(const crypto::AesKey& key)
{
    std::string s;
    for (auto b : key)
        s += fmt::format("{:02X}", b);
    return s;
}

device::FuseSet parse_fuse_list(std::string_view list)
{
    device::FuseSet f;
    if (list.empty())
        return f;
    for (auto name : split(list, ',')) {
        if (name == "vp")
            f.verify_protect = true;
        else if (name == "epof")
            f.encrypted_pof_only = true;
        else if (name == "jtagsec")
            f.jtag_secure = true;
        else
            throw FormatError("unknown fuse '" + std::string(name) + "' (expected vp, epof, jtagsec)");
    }
    return f;
}

TargetSpec TargetSpec::parse(std::string_view text)
{
    TargetSpec spec;
    if (text.starts_with("remote:")) {
        spec.kind = Kind::Remote;
        std::tie(spec.host, spec.port) = remote::parse_endpoint(text.substr(7));
        return spec;
    }
    if (!text.starts_with("sim:"))
        throw FormatError("target must start with sim: or remote:");
    text.remove_prefix(4);
    const auto q = text.find('?');
    spec.profile = std::string(text.substr(0, q));
    if (spec.profile.empty())
        throw FormatError("sim target needs a profile name");
    if (q == std::string_view::npos)
        return spec;
    std::optional<crypto::AesKey> key;
    for (auto param : split(text.substr(q + 1), '&')) {
        const auto eq = param.find('=');
        if (eq == std::string_view::npos)
            throw FormatError("expected key=value in target, got '" + std::string(param) + "'");
        const auto k = param.substr(0, eq);
        const auto v = param.substr(eq + 1);
        if (k == "fuses") {
            spec.fuses = parse_fuse_list(v);
        } else if (k == "image") {
            spec.image = std::string(v);
        } else if (k == "key") {
            key = parse_key(v);
        } else if (k == "seed") {
            auto n = detail::parse_uint(v);
            if (!n)
                throw FormatError("seed must be an integer");
            spec.seed = *n;
        } else if (k == "preload") {
            if (v != "0" && v != "1")
                throw FormatError("preload must be 0 or 1");
            spec.preload = v == "1";
        } else {
            throw FormatError("unknown target parameter '" + std::string(k) + "'");
        }
    }
    spec.fuses.aes_key = key;
    return spec;
}

std::string TargetSpec::str() const
{
    if (kind == Kind::Remote)
        return fmt::format("remote:{}:{}", host, port);
    std::vector<std::string> params;
    std::string fl;
    for (auto [on, name] : {std::pair{fuses.verify_protect, "vp"}, std::pair{fuses.encrypted_pof_only, "epof"},
                            std::pair{fuses.jtag_secure, "jtagsec"}})
        if (on)
            fl += (fl.empty() ? "" : ",") + std::string(name);
    if (!fl.empty())
        params.push_back("fuses=" + fl);
    if (image)
        params.push_back("image=" + *image);
    if (fuses.aes_key)
        params.push_back("key=" + key_hex(*fuses.aes_key));
    if (seed != 1)
        params.push_back(fmt::format("seed={}", seed));
    if (preload)
        params.push_back("preload=1");
    std::string s = "sim:" + profile;
    for (std::size_t i = 0; i < params.size(); ++i)
        s += (i ? "&" : "?") + params[i];
    return s;
}

device::Device make_device(const TargetSpec& spec)
{
    if (spec.kind != TargetSpec::Kind::Sim)
        throw Error("not a simulated target");
    DeviceProfile profile = load_profile(spec.profile);
    device::FlashImage image;
    if (spec.image) {
        image = device::FlashImage::load(*spec.image, profile.flash_size());
        for (device::Fuse f : device::kAllFuses) {
            if (!spec.fuses.get(f))
                continue;
            const std::uint32_t slot = device::fuse_slot(f);
            for (int i = 0; i < 4; ++i)
                image.bytes[slot + i] = static_cast<std::uint8_t>(0x6C48A50Fu >> (8 * i));
        }
        if (spec.fuses.aes_key)
            device::install_key(image, *spec.fuses.aes_key);
    } else {
        image = device::build_image(profile, spec.fuses, spec.seed);
    }
    device::Device dev(std::move(profile), std::move(image));
    dev.set_user_design_loaded(spec.preload);
    return dev;
}

OpenTarget open_target(const TargetSpec& spec, const std::string& remote_profile)
{
    OpenTarget t;
    if (spec.kind == TargetSpec::Kind::Remote) {
        t.profile = load_profile(remote_profile);
        t.transport = std::make_unique<remote::RemoteTransport>(spec.host, spec.port);
        return t;
    }
    device::Device dev = make_device(spec);
    t.profile = dev.profile();
    auto sim = std::make_unique<device::SimTransport>(std::move(dev));
    t.sim = sim.get();
    t.transport = std::move(sim);
    return t;
}

} // namespace maxsec
