#pragma once

#include "maxsec/device.hpp"
#include "maxsec/errors.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace maxsec::trace {

class SegmentationError : public Error {
public:
    using Error::Error;
};

enum class Phase : std::uint8_t { Por, FlashFetch, AesDecrypt, Configure, Fail };
std::string_view phase_name(Phase p);

struct Segment {
    Phase phase = Phase::Por;
    std::size_t start = 0;
    std::size_t end = 0; // exclusive
    std::size_t length() const { return end - start; }
    bool operator==(const Segment&) const = default;
};

struct PowerTrace {
    double sample_rate = 5.0; // samples per us
    std::vector<float> samples;
    std::vector<Segment> annotations; // generator markers; empty for imported traces
};

// Amplitude templates in arbitrary power units.
struct Templates {
    double sample_rate = 5.0;
    std::size_t por_samples = 200;
    double por_level = 1.0;
    std::size_t fetch_samples = 4; // one 64-bit word, 0.8 us
    double fetch_level = 3.0;
    std::size_t burst_samples = 16;
    double burst_low = 5.5;
    double burst_high = 8.5;
    std::size_t configure_samples = 64;
    double configure_from = 1.6;
    double configure_to = 2.4;
    double fail_level = 0.2;
    double noise_sigma = 0.05; // clipped at 4 sigma
};

// Band edges used by segment_boot; they sit between the template levels.
struct Bands {
    double fail_below = 0.6;
    double por_below = 1.3;
    double configure_below = 2.7;
    double fetch_below = 4.25;
};

// Renders the boot events of `image` booted with `key`. A failed boot is padded with the
// fail level up to the length of a successful boot.
PowerTrace synthesize_boot_trace(const DeviceProfile& profile, const device::FlashImage& image,
                                 const std::optional<device::AesKey>& key, std::uint64_t noise_seed,
                                 const Templates& tpl = {});
PowerTrace synthesize_boot_trace(const device::Device& dev, std::uint64_t noise_seed, const Templates& tpl = {});

struct Window {
    std::size_t start = 0;
    std::size_t end = 0; // exclusive
    double peak = 0.0;   // largest |diff| inside
    bool operator==(const Window&) const = default;
};

struct TraceDiff {
    std::vector<float> diff; // a - b
    std::vector<Window> windows;
};

// Throws LengthMismatch when lengths or rates differ.
TraceDiff diff_traces(const PowerTrace& a, const PowerTrace& b, double threshold = 0.5);

// Throws SegmentationError when the trace does not look like a boot.
std::vector<Segment> segment_boot(const PowerTrace& trace, const Bands& bands = {});

// Binary: "MXPT", f64 sample rate, u64 count, f32 samples; all little-endian.
std::vector<std::uint8_t> to_binary(const PowerTrace& t);
PowerTrace from_binary(std::span<const std::uint8_t> data);
// CSV: "index,time_us,value" header, one row per sample.
std::string to_csv(const PowerTrace& t);
PowerTrace from_csv(std::string_view text);

} // namespace maxsec::trace
