#include "maxsec/trace.hpp"

#include "maxsec/bitstream.hpp"
#include "maxsec/crypto.hpp"
#include "text_util.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>

namespace maxsec::trace {

std::string_view phase_name(Phase p)
{
    switch (p) {
    case Phase::Por: return "POR";
    case Phase::FlashFetch: return "FlashFetch";
    case Phase::AesDecrypt: return "AesDecrypt";
    case Phase::Configure: return "Configure";
    case Phase::Fail: return "Fail";
    }
    return "?";
}

namespace {

class Builder {
public:
    Builder(PowerTrace& t) : t_(t) {}

    void emit(Phase p, double level, std::size_t n)
    {
        begin(p);
        t_.samples.insert(t_.samples.end(), n, static_cast<float>(level));
        extend();
    }

    void emit(Phase p, const std::vector<double>& shape)
    {
        begin(p);
        for (double v : shape)
            t_.samples.push_back(static_cast<float>(v));
        extend();
    }

private:
    void begin(Phase p)
    {
        if (t_.annotations.empty() || t_.annotations.back().phase != p)
            t_.annotations.push_back({p, t_.samples.size(), t_.samples.size()});
    }
    void extend() { t_.annotations.back().end = t_.samples.size(); }

    PowerTrace& t_;
};

std::uint64_t hash_bytes(std::uint64_t h, std::span<const std::uint8_t> bytes)
{
    for (std::size_t i = 0; i < bytes.size(); i += 8) {
        std::uint64_t w = 0;
        for (std::size_t j = 0; j < 8 && i + j < bytes.size(); ++j)
            w |= std::uint64_t{bytes[i + j]} << (8 * j);
        h = crypto::mix64(h ^ w);
    }
    return h;
}

std::size_t nominal_samples(const DeviceProfile& profile, bool keyed, const Templates& tpl)
{
    std::size_t fetches = device::kHeaderBytes / 8;
    std::size_t blocks = 0;
    for (const auto& f : device::cfm_frames(profile)) {
        fetches += (f.body_bytes + device::kTrailerBytes) / 8;
        blocks += f.body_bytes / 16;
    }
    return tpl.por_samples + fetches * tpl.fetch_samples + (keyed ? blocks * tpl.burst_samples : 0)
           + tpl.configure_samples;
}

} // namespace

PowerTrace synthesize_boot_trace(const DeviceProfile& profile, const device::FlashImage& image,
                                 const std::optional<device::AesKey>& key, std::uint64_t noise_seed,
                                 const Templates& tpl)
{
    const device::BootResult boot = device::boot_image(profile, image, key);
    PowerTrace t;
    t.sample_rate = tpl.sample_rate;
    Builder b(t);

    const std::uint64_t key_hash = key ? hash_bytes(0x6B6579, *key) : 0;
    std::array<std::uint8_t, 16> chain{};
    std::vector<double> burst(tpl.burst_samples);

    for (const auto& ev : boot.events) {
        switch (ev.phase) {
        case device::BootPhase::Por:
            b.emit(Phase::Por, tpl.por_level, tpl.por_samples);
            break;
        case device::BootPhase::FlashFetch:
            b.emit(Phase::FlashFetch, tpl.fetch_level, tpl.fetch_samples);
            break;
        case device::BootPhase::AesDecrypt: {
            const std::span<const std::uint8_t> block(image.bytes.data() + ev.address, 16);
            const std::uint64_t h = hash_bytes(hash_bytes(key_hash, chain), block);
            for (std::size_t i = 0; i < burst.size(); ++i) {
                const double u = static_cast<double>(crypto::mix64(h + i) >> 11) * 0x1.0p-53;
                burst[i] = tpl.burst_low + (tpl.burst_high - tpl.burst_low) * u;
            }
            b.emit(Phase::AesDecrypt, burst);
            std::copy(block.begin(), block.end(), chain.begin());
            break;
        }
        case device::BootPhase::CrcCheck:
            break;
        case device::BootPhase::Configure: {
            std::vector<double> ramp(tpl.configure_samples);
            for (std::size_t i = 0; i < ramp.size(); ++i) {
                const double f = ramp.size() > 1 ? static_cast<double>(i) / static_cast<double>(ramp.size() - 1) : 0.0;
                ramp[i] = tpl.configure_from + (tpl.configure_to - tpl.configure_from) * f;
            }
            b.emit(Phase::Configure, ramp);
            break;
        }
        case device::BootPhase::Fail: {
            const std::size_t nominal = nominal_samples(profile, key.has_value(), tpl);
            b.emit(Phase::Fail, tpl.fail_level, nominal > t.samples.size() ? nominal - t.samples.size() : 1);
            break;
        }
        }
    }

    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, tpl.noise_sigma);
    const double clip = 4.0 * tpl.noise_sigma;
    for (auto& s : t.samples)
        s = static_cast<float>(s + std::clamp(noise(rng), -clip, clip));
    return t;
}

PowerTrace synthesize_boot_trace(const device::Device& dev, std::uint64_t noise_seed, const Templates& tpl)
{
    return synthesize_boot_trace(dev.profile(), dev.flash(), dev.stored_fuses().aes_key, noise_seed, tpl);
}

TraceDiff diff_traces(const PowerTrace& a, const PowerTrace& b, double threshold)
{
    if (a.samples.size() != b.samples.size())
        throw LengthMismatch(fmt::format("traces differ in length: {} vs {}", a.samples.size(), b.samples.size()));
    if (a.sample_rate != b.sample_rate)
        throw LengthMismatch("traces differ in sample rate");
    TraceDiff d;
    d.diff.resize(a.samples.size());
    for (std::size_t i = 0; i < d.diff.size(); ++i) {
        d.diff[i] = a.samples[i] - b.samples[i];
        const double mag = std::fabs(d.diff[i]);
        if (mag <= threshold)
            continue;
        if (!d.windows.empty() && d.windows.back().end == i) {
            d.windows.back().end = i + 1;
            d.windows.back().peak = std::max(d.windows.back().peak, mag);
        } else {
            d.windows.push_back({i, i + 1, mag});
        }
    }
    return d;
}

std::vector<Segment> segment_boot(const PowerTrace& trace, const Bands& bands)
{
    const Templates tpl;
    auto classify = [&](float v) {
        if (v < bands.fail_below)
            return Phase::Fail;
        if (v < bands.por_below)
            return Phase::Por;
        if (v < bands.configure_below)
            return Phase::Configure;
        if (v < bands.fetch_below)
            return Phase::FlashFetch;
        return Phase::AesDecrypt;
    };
    std::vector<Segment> segs;
    for (std::size_t i = 0; i < trace.samples.size(); ++i) {
        const Phase p = classify(trace.samples[i]);
        if (segs.empty() || segs.back().phase != p)
            segs.push_back({p, i, i});
        segs.back().end = i + 1;
    }

    if (segs.empty())
        throw SegmentationError("empty trace");
    if (segs.front().phase != Phase::Por || segs.front().length() < tpl.por_samples / 2)
        throw SegmentationError("trace does not start with a power-on reset");
    for (std::size_t i = 1; i < segs.size(); ++i) {
        const Segment& s = segs[i];
        const bool last = i + 1 == segs.size();
        switch (s.phase) {
        case Phase::Por:
            throw SegmentationError(fmt::format("unexpected reset level at sample {}", s.start));
        case Phase::FlashFetch:
            if (s.length() % tpl.fetch_samples)
                throw SegmentationError(fmt::format("fetch run at sample {} is not whole words", s.start));
            break;
        case Phase::AesDecrypt:
            if (s.length() % tpl.burst_samples)
                throw SegmentationError(fmt::format("decrypt run at sample {} is not whole blocks", s.start));
            break;
        case Phase::Configure:
        case Phase::Fail:
            if (!last)
                throw SegmentationError(fmt::format("{} at sample {} is followed by more activity",
                                                    phase_name(s.phase), s.start));
            break;
        }
    }
    return segs;
}

namespace {

constexpr char kMagic[4] = {'M', 'X', 'P', 'T'};

template <class T>
void put_le(std::vector<std::uint8_t>& out, T v)
{
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get_le(std::span<const std::uint8_t> in, std::size_t off)
{
    std::uint8_t buf[sizeof(T)];
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(off), sizeof(T), buf);
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void check_rate(double rate)
{
    if (!(rate > 0) || !std::isfinite(rate))
        throw FormatError("sample rate must be positive");
}

} // namespace

std::vector<std::uint8_t> to_binary(const PowerTrace& t)
{
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_le<double>(out, t.sample_rate);
    put_le<std::uint64_t>(out, t.samples.size());
    for (float s : t.samples)
        put_le<float>(out, s);
    return out;
}

PowerTrace from_binary(std::span<const std::uint8_t> data)
{
    if (data.size() < 20 || !std::equal(kMagic, kMagic + 4, data.begin()))
        throw FormatError("not a power trace file");
    PowerTrace t;
    t.sample_rate = get_le<double>(data, 4);
    check_rate(t.sample_rate);
    const auto count = get_le<std::uint64_t>(data, 12);
    if (count == 0 || (data.size() - 20) / 4 != count || (data.size() - 20) % 4)
        throw FormatError("sample count does not match the file size");
    t.samples.resize(count);
    for (std::size_t i = 0; i < count; ++i)
        t.samples[i] = get_le<float>(data, 20 + 4 * i);
    return t;
}

std::string to_csv(const PowerTrace& t)
{
    std::string s = "index,time_us,value\n";
    for (std::size_t i = 0; i < t.samples.size(); ++i)
        s += fmt::format("{},{:.4f},{:.6g}\n", i, static_cast<double>(i) / t.sample_rate, t.samples[i]);
    return s;
}

PowerTrace from_csv(std::string_view text)
{
    const auto lines = detail::split_lines(text);
    if (lines.empty() || detail::trim(lines[0]) != "index,time_us,value")
        throw FormatError("missing trace CSV header");
    PowerTrace t;
    double second_time = 0.0;
    for (std::size_t n = 1; n < lines.size(); ++n) {
        const auto line = detail::trim(lines[n]);
        if (line.empty())
            continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string_view::npos || c2 == std::string_view::npos)
            throw ParseError(n + 1, "expected three columns");
        auto idx = detail::parse_uint(line.substr(0, c1));
        auto time = detail::parse_double(line.substr(c1 + 1, c2 - c1 - 1));
        auto value = detail::parse_double(line.substr(c2 + 1));
        if (!idx || !time || !value || *idx != t.samples.size())
            throw ParseError(n + 1, "malformed trace row");
        if (*idx == 1)
            second_time = *time;
        t.samples.push_back(static_cast<float>(*value));
    }
    if (t.samples.empty())
        throw FormatError("trace has no samples");
    if (t.samples.size() > 1) {
        check_rate(1.0 / second_time);
        t.sample_rate = 1.0 / second_time;
    }
    return t;
}

} // namespace maxsec::trace
