#include "maxsec/bitstream.hpp"
#include "maxsec/device.hpp"
#include "maxsec/errors.hpp"

#include <doctest.h>

#include <bit>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

using namespace maxsec;
using namespace maxsec::device;

namespace {

DeviceProfile p08()
{
    return *builtin_profile("10m08");
}

Device make(const FuseSet& fuses, std::uint64_t seed = 1)
{
    const DeviceProfile p = p08();
    return Device(p, build_image(p, fuses, seed));
}

// Access table written out by hand: is a CFM read denied for (vp, epof, js, path)?
bool cfm_denied(bool vp, bool epof, bool js, AccessPath path)
{
    if (js)
        return true;
    if (vp && epof)
        return true;
    return vp && path == AccessPath::DirectJtag;
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("default 10M08 region map")
{
    const auto& r = p08().regions.regions();
    REQUIRE(r.size() == 4);
    CHECK(r[0].start == 0x00000);
    CHECK(r[0].end == 0x007FF);
    CHECK(r[1].start == 0x00800);
    CHECK(r[1].end == 0x1CFFF);
    CHECK(r[2].start == 0x1D000);
    CHECK(r[2].end == 0x4E7FF);
    CHECK(r[3].start == 0x4E800);
    CHECK(r[3].end == 0x4EFFF);
    CHECK(p08().flash_size() == 0x4F000);
}

TEST_CASE("region maps must be contiguous from zero")
{
    CHECK_THROWS(RegionMap({{"a", 0x10, 0x20, AccessClass::UserFlash}}));
    CHECK_THROWS(RegionMap({{"a", 0, 0x20, AccessClass::UserFlash}, {"b", 0x22, 0x30, AccessClass::Shadow}}));
    CHECK_NOTHROW(RegionMap({{"a", 0, 0x20, AccessClass::UserFlash}, {"b", 0x21, 0x30, AccessClass::Shadow}}));
}

TEST_CASE("profile text round trip and shipped data files")
{
    for (const auto& name : builtin_profile_names()) {
        const DeviceProfile p = *builtin_profile(name);
        const DeviceProfile q = parse_profile(format_profile(p));
        CHECK(format_profile(q) == format_profile(p));
        CHECK(read_file(std::string(MAXSEC_DATA_DIR) + "/profiles/" + name + ".profile") == format_profile(p));
    }
    CHECK(read_file(std::string(MAXSEC_DATA_DIR) + "/known_cmds.txt") == format_known_commands(p08()));
}

TEST_CASE("profile parser reports the failing line")
{
    try {
        parse_profile("name = x\nidcode = zz\n");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("fuse markers round trip")
{
    const std::uint8_t bytes[4] = {0x0F, 0xA5, 0x48, 0x6C};
    CHECK((bytes[0] | bytes[1] << 8 | bytes[2] << 16 | static_cast<std::uint32_t>(bytes[3]) << 24) == 0x6C48A50Fu);
    for (unsigned bits = 0; bits < 8; ++bits) {
        const FuseSet f = FuseSet::from_bits(bits);
        const Device d = make(f);
        CHECK(d.stored_fuses().bits() == bits);
        for (Fuse fu : kAllFuses) {
            const auto* s = &d.flash().bytes[fuse_slot(fu)];
            const bool marked = std::equal(s, s + 4, bytes);
            CHECK(marked == f.get(fu));
        }
    }
}

TEST_CASE("access matrix over every fuse combination, region and path")
{
    const std::uint32_t probe[] = {0x00010, 0x00900, 0x1D100, 0x4E900};
    for (unsigned bits = 0; bits < 8; ++bits) {
        const FuseSet f = FuseSet::from_bits(bits);
        Device d = make(f);
        for (AccessPath path : {AccessPath::DirectJtag, AccessPath::UserModeSramPreload}) {
            CAPTURE(bits);
            CHECK(d.read_flash(probe[0], path).status == ReadStatus::NotReadable);
            for (std::uint32_t a : {probe[1], probe[3]}) {
                const auto r = d.read_flash(a, path);
                CHECK(r.status == (f.jtag_secure ? ReadStatus::SecurityDenied : ReadStatus::Ok));
            }
            const auto c = d.read_flash(probe[2], path);
            const bool denied = cfm_denied(f.verify_protect, f.encrypted_pof_only, f.jtag_secure, path);
            CHECK(c.status == (denied ? ReadStatus::SecurityDenied : ReadStatus::Ok));
            if (c.ok())
                CHECK(c.value == d.flash().bytes[probe[2]]);
        }
    }
    Device d = make({});
    CHECK(d.read_flash(0x4F000, AccessPath::DirectJtag).status == ReadStatus::AddressOutOfRange);
}

TEST_CASE("writes only clear bits")
{
    Device d = make({});
    std::mt19937 rng(2);
    for (int i = 0; i < 50; ++i) {
        const std::uint32_t a = 0x01000 + i;
        std::uint8_t expect = d.flash().bytes[a];
        for (int k = 0; k < 5; ++k) {
            const auto v = static_cast<std::uint8_t>(rng());
            CHECK(d.write_flash(a, v) == WriteStatus::Ok);
            expect &= v;
        }
        CHECK(d.read_flash(a, AccessPath::DirectJtag).value == expect);
    }
    Device e(p08(), FlashImage::erased(0x4F000));
    e.write_flash(0x1000, 0x0F);
    CHECK(e.read_flash(0x1000, AccessPath::DirectJtag).value == 0x0F);
    e.write_flash(0x1000, 0xFF);
    CHECK(e.read_flash(0x1000, AccessPath::DirectJtag).value == 0x0F);
}

TEST_CASE("write permissions")
{
    Device d = make(FuseSet::from_bits(3));
    CHECK(d.write_flash(0x1D000, 0x00) == WriteStatus::Ok);
    CHECK(d.write_flash(0x4E800, 0x00) == WriteStatus::WriteProtected);
    CHECK(d.write_flash(0x00040, 0x00) == WriteStatus::WriteProtected);
    Device js = make(FuseSet::from_bits(4));
    CHECK(js.write_flash(0x01000, 0x00) == WriteStatus::SecurityDenied);
}

TEST_CASE("system area is writable once after a full erase")
{
    Device d = make(FuseSet::from_bits(1));
    d.chip_erase(1.0);
    CHECK(d.system_write_armed());
    CHECK(d.stored_fuses().bits() == 0);
    for (std::uint32_t a = 0x800; a < 0x4F000; a += 0x1111)
        if (auto r = d.read_flash(a, AccessPath::DirectJtag); r.ok())
            CHECK(r.value == 0xFF);
    CHECK(d.program_word(kVerifyProtectSlot, 0x6C48A50F) == WriteStatus::Ok);
    CHECK(d.stored_fuses().verify_protect);
    CHECK(d.program_word(kJtagSecureSlot, 0x6C48A50F) == WriteStatus::WriteProtected);
}

TEST_CASE("partial erase keeps the image at zero and erases all at one")
{
    Device d = make({});
    const auto before = d.flash().bytes;
    d.chip_erase(0.0);
    CHECK(d.flash().bytes == before);
    d.chip_erase(1.0);
    CHECK(std::all_of(d.flash().bytes.begin(), d.flash().bytes.end(), [](auto b) { return b == 0xFF; }));
}

TEST_CASE("remanence at the default termination point")
{
    const DeviceProfile p = p08();
    Device d = make({});
    const auto before = d.flash().bytes;
    d.chip_erase(p.remanence_point);
    const Region& cfm = *p.regions.find(AccessClass::ConfigFlash);
    std::uint64_t programmed = 0, kept = 0;
    for (std::uint32_t a = cfm.start; a <= cfm.end; ++a) {
        const std::uint8_t zeros = static_cast<std::uint8_t>(~before[a]);
        programmed += std::popcount(zeros);
        kept += std::popcount(static_cast<std::uint8_t>(zeros & ~d.flash().bytes[a]));
    }
    CHECK(static_cast<double>(kept) / static_cast<double>(programmed) >= 0.97);
    CHECK(p.erasure_curve(0.0) == 0.0);
    CHECK(p.erasure_curve(1.0) == 1.0);
    for (double t = 0.0; t < 1.0; t += 0.05)
        CHECK(p.erasure_curve(t) <= p.erasure_curve(t + 0.05));
}

TEST_CASE("boot succeeds on a valid plaintext image without decrypt events")
{
    const Device d = make({});
    const BootResult r = d.boot();
    CHECK(r.success);
    CHECK(r.events.front().phase == BootPhase::Por);
    CHECK(r.events.back().phase == BootPhase::Configure);
    CHECK(std::none_of(r.events.begin(), r.events.end(),
                       [](const BootEvent& e) { return e.phase == BootPhase::AesDecrypt; }));
    CHECK(d.boot().events == r.events);
}

TEST_CASE("a single flipped CFM bit breaks boot")
{
    const DeviceProfile p = p08();
    const FlashImage img = build_image(p, {}, 4);
    std::mt19937 rng(8);
    const Region& cfm = *p.regions.find(AccessClass::ConfigFlash);
    const auto frames = cfm_frames(p);
    const std::uint32_t used_end = frames.back().end();
    for (int i = 0; i < 25; ++i) {
        FlashImage bad = img;
        const std::uint32_t a = cfm.start + rng() % (used_end - cfm.start);
        bad.bytes[a] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
        CHECK_FALSE(boot_image(p, bad, std::nullopt).success);
    }
}

TEST_CASE("encrypted image boots only with its key")
{
    const DeviceProfile p = p08();
    FuseSet f;
    f.aes_key = AesKey{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
    const FlashImage img = build_image(p, f, 3);
    const BootResult good = boot_image(p, img, f.aes_key);
    CHECK(good.success);
    CHECK(good.encrypted);
    AesKey wrong = *f.aes_key;
    wrong[0] ^= 1;
    const BootResult bad = boot_image(p, img, wrong);
    CHECK_FALSE(bad.success);
    CHECK(bad.failed_frame == std::size_t{0});
    CHECK(bad.events.back().phase == BootPhase::Fail);
    CHECK(std::any_of(bad.events.begin(), bad.events.end(),
                      [](const BootEvent& e) { return e.phase == BootPhase::AesDecrypt; }));
}

TEST_CASE("IR behaviours")
{
    const DeviceProfile p = p08();
    const Device d = make({});
    const auto by = d.handle_ir(p.bypass_opcode());
    CHECK(by.action == IrAction::Bypass);
    CHECK(by.dr_length == 1);
    CHECK(d.handle_ir(0x006).action == IrAction::Idcode);
    CHECK(d.handle_ir(0x006).dr_length == 32);
    // Undocumented opcodes carry distinct private lengths.
    std::set<std::uint32_t> lengths;
    for (std::uint32_t op : {0x008, 0x015, 0x090, 0x091, 0x1EE, 0x206, 0x207, 0x2B0, 0x2D0, 0x303, 0x3F5}) {
        const auto b = d.handle_ir(op);
        CHECK(b.action == IrAction::Private);
        CHECK(b.dr_length == p.find_opcode(op)->dr_length);
        lengths.insert(b.dr_length);
    }
    CHECK(lengths.size() == 11);
    CHECK(d.handle_ir(0x0AB).action == IrAction::Bypass);

    const Device js = make(FuseSet::from_bits(4));
    for (const auto& ins : p.instructions) {
        const auto b = js.handle_ir(ins.opcode);
        if (is_boundary_scan(ins.action))
            CHECK(b.action == ins.action);
        else {
            CHECK(b.action == IrAction::Bypass);
            CHECK(b.dr_length == 1);
        }
    }
}

TEST_CASE("fault effects")
{
    Device d = make(FuseSet::from_bits(4));
    CHECK(d.read_flash(0x01000, AccessPath::DirectJtag).status == ReadStatus::SecurityDenied);
    d.apply_fault(FuseFetchCorrupt{Fuse::JtagSecure});
    CHECK(d.read_flash(0x01000, AccessPath::DirectJtag).ok());
    d.apply_fault(ResetFault{});
    CHECK(d.reset_count() == 1);
    CHECK(d.read_flash(0x01000, AccessPath::DirectJtag).status == ReadStatus::SecurityDenied);

    Device u = make({});
    const std::uint8_t stored = u.flash().bytes[0x01000];
    u.apply_fault(ReadCorrupt{0x01});
    const auto r = u.read_flash(0x01000, AccessPath::DirectJtag);
    CHECK((r.value ^ stored) == 0x01);
    CHECK(u.read_flash(0x01000, AccessPath::DirectJtag).value == stored);

    Device v = make(FuseSet::from_bits(1));
    v.apply_fault(FuseFetchCorrupt{Fuse::VerifyProtect});
    CHECK(v.read_flash(0x1D100, AccessPath::DirectJtag).ok());
    v.power_cycle();
    CHECK_FALSE(v.fuse_overridden(Fuse::VerifyProtect));
    CHECK_FALSE(v.read_flash(0x1D100, AccessPath::DirectJtag).ok());
}

TEST_CASE("JTAG upset forces Test-Logic-Reset")
{
    Device d = make({});
    d.clock(false, false);
    d.clock(true, false);
    CHECK(d.tap_state() == tap::TapState::SelectDRScan);
    d.apply_fault(JtagUpset{});
    CHECK(d.tap_state() == tap::TapState::TestLogicReset);
}

TEST_CASE("flash image files must have the exact size")
{
    const std::string path = "test_device_image.bin";
    FlashImage::erased(100).save(path);
    CHECK_THROWS(FlashImage::load(path, 0x4F000));
    CHECK(FlashImage::load(path, 100).size() == 100);
    std::remove(path.c_str());
}
