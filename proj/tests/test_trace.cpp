#include "maxsec/bitstream.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/trace.hpp"

#include <doctest.h>

#include <random>

using namespace maxsec;
using namespace maxsec::trace;

namespace {

device::AesKey key_from(std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    device::AesKey k;
    for (auto& b : k)
        b = static_cast<std::uint8_t>(rng());
    return k;
}

device::FlashImage keyed_image(const DeviceProfile& p, const device::AesKey& key, std::uint64_t seed)
{
    device::FuseSet f;
    f.aes_key = key;
    return device::build_image(p, f, seed);
}

bool inside_decrypt(const PowerTrace& t, std::size_t i)
{
    return std::any_of(t.annotations.begin(), t.annotations.end(), [&](const Segment& s) {
        return s.phase == Phase::AesDecrypt && i >= s.start && i < s.end;
    });
}

std::vector<Segment> decrypt_segments(const PowerTrace& t)
{
    std::vector<Segment> out;
    for (const auto& s : t.annotations)
        if (s.phase == Phase::AesDecrypt)
            out.push_back(s);
    return out;
}

} // namespace

TEST_CASE("plaintext boot has no decrypt bursts and is deterministic")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto img = device::build_image(p, {}, 3);
    const auto a = synthesize_boot_trace(p, img, std::nullopt, 5);
    const auto b = synthesize_boot_trace(p, img, std::nullopt, 5);
    CHECK(a.samples == b.samples);
    CHECK(decrypt_segments(a).empty());
    const auto segs = segment_boot(a);
    CHECK(segs == a.annotations);
    CHECK(std::none_of(segs.begin(), segs.end(), [](const Segment& s) { return s.phase == Phase::AesDecrypt; }));
}

TEST_CASE("traces of two keys differ only inside decrypt bursts")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto ka = key_from(1), kb = key_from(2);
    const auto ta = synthesize_boot_trace(p, keyed_image(p, ka, 9), ka, 4);
    const auto tb = synthesize_boot_trace(p, keyed_image(p, kb, 9), kb, 4);
    REQUIRE(ta.annotations == tb.annotations);
    const auto d = diff_traces(ta, tb);
    CHECK_FALSE(d.windows.empty());
    std::size_t outside = 0, bursts_differing = 0;
    for (std::size_t i = 0; i < d.diff.size(); ++i)
        if (d.diff[i] != 0.0f && !inside_decrypt(ta, i))
            ++outside;
    for (const auto& s : decrypt_segments(ta)) {
        bool any = false;
        for (std::size_t i = s.start; i < s.end; ++i)
            any = any || d.diff[i] != 0.0f;
        bursts_differing += any;
    }
    CHECK(outside == 0);
    CHECK(bursts_differing == decrypt_segments(ta).size());
    for (const auto& w : d.windows)
        for (std::size_t i = w.start; i < w.end; ++i)
            CHECK(inside_decrypt(ta, i));
}

TEST_CASE("a flipped ciphertext bit changes nothing before its block")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto key = key_from(3);
    const auto img = keyed_image(p, key, 11);
    const auto base = synthesize_boot_trace(p, img, key, 8);
    const auto bursts = decrypt_segments(base);
    const auto frames = device::cfm_frames(p);
    std::mt19937 rng(6);
    for (int trial = 0; trial < 6; ++trial) {
        // Pick a body block of frame 1 or 2 so the index maps to a burst directly.
        const std::size_t fi = 1 + rng() % 2;
        const std::size_t blocks_before = [&] {
            std::size_t n = 0;
            for (std::size_t k = 0; k < fi; ++k)
                n += frames[k].body_bytes / 16;
            return n;
        }();
        const std::size_t blk = rng() % (frames[fi].body_bytes / 16);
        auto bad = img;
        bad.bytes[frames[fi].start + 16 * blk + rng() % 16] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
        const auto t = synthesize_boot_trace(p, bad, key, 8);
        const auto d = diff_traces(base, t);
        const Segment& burst = bursts[blocks_before + blk];
        for (std::size_t i = 0; i < burst.start; ++i)
            REQUIRE(d.diff[i] == 0.0f);
        CHECK_FALSE(d.windows.empty());
        CHECK(d.windows.front().start >= burst.start);
        const auto segs = segment_boot(t);
        CHECK(segs.back().phase == Phase::Fail);
        CHECK(segs[segs.size() - 2].phase == Phase::FlashFetch);
    }
}

TEST_CASE("segmentation recovers the generator annotations")
{
    const DeviceProfile p = *builtin_profile("10m04");
    std::mt19937_64 rng(31);
    for (int i = 0; i < 8; ++i) {
        const bool keyed = i % 2 == 0;
        const auto key = key_from(rng());
        const auto img = keyed ? keyed_image(p, key, rng()) : device::build_image(p, {}, rng());
        const auto t = synthesize_boot_trace(p, img, keyed ? std::optional(key) : std::nullopt, rng());
        CHECK(segment_boot(t) == t.annotations);
    }
}

TEST_CASE("failed boot is padded and ends in Fail")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto key = key_from(4);
    const auto img = keyed_image(p, key, 2);
    const auto good = synthesize_boot_trace(p, img, key, 1);
    const auto bad = synthesize_boot_trace(p, img, key_from(5), 1);
    CHECK(bad.samples.size() == good.samples.size());
    CHECK(segment_boot(bad).back().phase == Phase::Fail);
}

TEST_CASE("noise-only traces do not segment")
{
    PowerTrace t;
    std::mt19937 rng(1);
    std::uniform_real_distribution<float> u(0.0f, 9.0f);
    for (int i = 0; i < 5000; ++i)
        t.samples.push_back(u(rng));
    CHECK_THROWS_AS(segment_boot(t), SegmentationError);
    CHECK_THROWS_AS(segment_boot(PowerTrace{}), SegmentationError);
}

TEST_CASE("trace diff basics")
{
    PowerTrace a;
    a.samples = {1, 2, 3, 4, 5, 6};
    auto b = a;
    const auto same = diff_traces(a, b);
    CHECK(same.windows.empty());
    CHECK(std::all_of(same.diff.begin(), same.diff.end(), [](float v) { return v == 0.0f; }));
    b.samples[2] = 4.0f;
    b.samples[3] = 5.0f;
    b.samples[5] = 5.0f;
    const auto d = diff_traces(a, b);
    REQUIRE(d.windows.size() == 2);
    CHECK(d.windows[0] == Window{2, 4, 1.0});
    CHECK(d.windows[1] == Window{5, 6, 1.0});
    b.samples.pop_back();
    CHECK_THROWS_AS(diff_traces(a, b), LengthMismatch);
    auto c = a;
    c.sample_rate = 10;
    CHECK_THROWS_AS(diff_traces(a, c), LengthMismatch);
}

TEST_CASE("binary and CSV round trips")
{
    const DeviceProfile p = *builtin_profile("10m04");
    const auto t = synthesize_boot_trace(p, device::build_image(p, {}, 1), std::nullopt, 2);
    const auto bin = to_binary(t);
    CHECK(std::string(bin.begin(), bin.begin() + 4) == "MXPT");
    CHECK(bin.size() == 4 + 8 + 8 + 4 * t.samples.size());
    const auto back = from_binary(bin);
    CHECK(back.samples == t.samples);
    CHECK(back.sample_rate == t.sample_rate);

    PowerTrace small;
    small.samples = {1.5f, -0.25f, 3.0f};
    const auto csv = to_csv(small);
    CHECK(csv.starts_with("index,time_us,value\n0,0.0000,1.5\n"));
    CHECK(from_csv(csv).samples == small.samples);

    auto broken = bin;
    broken[0] = 'X';
    CHECK_THROWS_AS(from_binary(broken), FormatError);
    CHECK_THROWS_AS(from_binary(std::span(bin.data(), 30)), FormatError);
    CHECK_THROWS_AS(from_csv("index,time_us,value\n0,0,abc\n"), ParseError);
}
