#include "maxsec/bitstream.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/scanner.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace maxsec;
using namespace maxsec::scan;

namespace {

const std::vector<std::uint32_t> kUndocumented = {0x008, 0x015, 0x090, 0x091, 0x1EE, 0x206,
                                                  0x207, 0x2B0, 0x2D0, 0x303, 0x3F5};

device::SimTransport sim(const device::FuseSet& fuses, bool preload = false, const char* profile = "10m08")
{
    const DeviceProfile p = *builtin_profile(profile);
    device::Device d(p, device::build_image(p, fuses, 2));
    d.set_user_design_loaded(preload);
    return device::SimTransport(std::move(d));
}

// Expected observation per region, derived from the configured region map and fuse state.
std::vector<ProbedRegion> projected(const DeviceProfile& p, const device::FuseSet& f, const MapOptions& o,
                                    bool preload)
{
    std::vector<ProbedRegion> out;
    std::uint8_t sector = 0;
    for (const Region& r : p.regions.regions()) {
        ObservedClass c = ObservedClass::NotReadable;
        if (!f.jtag_secure) {
            switch (r.access) {
            case AccessClass::SystemArea: c = ObservedClass::NotReadable; break;
            case AccessClass::UserFlash: c = ObservedClass::ReadWrite; break;
            case AccessClass::Shadow: c = ObservedClass::ReadOnly; break;
            case AccessClass::ConfigFlash:
                if (!f.verify_protect)
                    c = ObservedClass::ReadWrite;
                else if ((o.use_user_path && preload && !f.encrypted_pof_only) || o.allow_destructive)
                    c = ObservedClass::ReadProtectable;
                break;
            }
        }
        const std::uint8_t s = f.jtag_secure ? 0 : sector;
        if (!out.empty() && out.back().observed == c && out.back().sector == s)
            out.back().end = r.end;
        else
            out.push_back({r.start, r.end, c, s});
        ++sector;
    }
    return out;
}

} // namespace

TEST_CASE("DR length measurement")
{
    auto t = sim({});
    tap::reset(t);
    CHECK(measure_dr_length(t, 10, 0x3FF) == std::size_t{1});
    CHECK(measure_dr_length(t, 10, 0x006) == std::size_t{32});
    const DeviceProfile p = *builtin_profile("10m08");
    for (const auto& ins : p.instructions) {
        const auto expect = t.device().handle_ir(ins.opcode).dr_length;
        CHECK(measure_dr_length(t, 10, ins.opcode) == std::size_t{expect});
    }
}

TEST_CASE("DR longer than the bound is unmeasurable")
{
    DeviceProfile p = *builtin_profile("10m08");
    p.instructions.push_back({"LONG", 0x0AB, IrAction::Private, 5000});
    device::SimTransport t(device::Device(p, device::build_image(p, {}, 1)));
    tap::reset(t);
    CHECK_FALSE(measure_dr_length(t, 10, 0x0AB).has_value());
    CHECK(measure_dr_length(t, 10, 0x0AB, 6000) == std::size_t{5000});
}

TEST_CASE("IR survey finds exactly the undocumented opcodes")
{
    auto t = sim({});
    const DeviceProfile p = *builtin_profile("10m08");
    const auto known = parse_known_commands(format_known_commands(p));
    const auto entries = enumerate_ir(t, 10, known);
    CHECK(entries.size() == 1024);
    std::vector<std::uint32_t> found;
    for (const auto& e : entries)
        if (e.classification == IrClass::Undocumented)
            found.push_back(e.opcode);
    CHECK(found == kUndocumented);
}

TEST_CASE("IR survey with every opcode known has no undocumented entries")
{
    auto t = sim({});
    std::vector<KnownCommand> all;
    for (std::uint32_t op = 0; op < 1024; ++op)
        all.push_back({op, "op"});
    const auto entries = enumerate_ir(t, 10, all);
    CHECK(std::none_of(entries.begin(), entries.end(),
                       [](const auto& e) { return e.classification == IrClass::Undocumented; }));
}

TEST_CASE("IR survey is independent of visit order")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto known = parse_known_commands(format_known_commands(p));
    std::vector<std::uint32_t> order(1024);
    for (std::uint32_t i = 0; i < 1024; ++i)
        order[i] = i;
    auto t1 = sim({});
    const auto a = enumerate_ir(t1, 10, known);
    std::mt19937 rng(5);
    std::shuffle(order.begin(), order.end(), rng);
    auto t2 = sim({});
    SurveyOptions o;
    o.opcodes = order;
    CHECK(enumerate_ir(t2, 10, known, o) == a);
}

TEST_CASE("JTAG-secured device answers every non-boundary opcode as bypass")
{
    auto t = sim(device::FuseSet::from_bits(4));
    const DeviceProfile p = *builtin_profile("10m08");
    const auto known = parse_known_commands(format_known_commands(p));
    for (const auto& e : enumerate_ir(t, 10, known)) {
        const Instruction* ins = p.find_opcode(e.opcode);
        const bool boundary = ins && is_boundary_scan(ins->action) && ins->action != IrAction::Clamp
                              && ins->action != IrAction::Highz;
        if (!boundary)
            CHECK(e.classification == IrClass::BypassLike);
    }
}

TEST_CASE("survey cancellation returns partial results")
{
    auto t = sim({});
    std::atomic<bool> cancel{true};
    SurveyOptions o;
    o.cancel = &cancel;
    CHECK(enumerate_ir(t, 10, {}, o).empty());
}

TEST_CASE("unprotected 10M08 maps to the four regions")
{
    auto t = sim({});
    const auto rs = map_memory(t, *builtin_profile("10m08"));
    REQUIRE(rs.size() == 4);
    CHECK(rs[0] == ProbedRegion{0x00000, 0x007FF, ObservedClass::NotReadable, 0});
    CHECK(rs[1] == ProbedRegion{0x00800, 0x1CFFF, ObservedClass::ReadWrite, 1});
    CHECK(rs[2] == ProbedRegion{0x1D000, 0x4E7FF, ObservedClass::ReadWrite, 2});
    CHECK(rs[3] == ProbedRegion{0x4E800, 0x4EFFF, ObservedClass::ReadOnly, 3});
}

TEST_CASE("memory map equals the class-projected region map for every fuse combination")
{
    const DeviceProfile p = *builtin_profile("10m08");
    for (unsigned bits = 0; bits < 8; ++bits) {
        for (int variant = 0; variant < 3; ++variant) {
            MapOptions o;
            o.use_user_path = variant == 1;
            o.allow_destructive = variant == 2;
            const bool preload = variant == 1;
            const auto f = device::FuseSet::from_bits(bits);
            auto t = sim(f, preload);
            CAPTURE(bits);
            CAPTURE(variant);
            CHECK(map_memory(t, p, o) == projected(p, f, o, preload));
        }
    }
}

TEST_CASE("non-destructive mapping leaves the flash untouched")
{
    auto t = sim(device::FuseSet::from_bits(1));
    const auto before = t.device().flash().bytes;
    map_memory(t, *builtin_profile("10m08"));
    CHECK(t.device().flash().bytes == before);
}

TEST_CASE("profile without flash opcodes is unsupported")
{
    DeviceProfile p = *builtin_profile("10m08");
    std::erase_if(p.instructions, [](const Instruction& i) { return i.action == IrAction::FlashRead; });
    auto t = sim({});
    CHECK_THROWS_AS(map_memory(t, p), UnsupportedProfile);
}

TEST_CASE("fuse inference lattice")
{
    const DeviceProfile p = *builtin_profile("10m08");
    for (unsigned bits = 0; bits < 8; ++bits) {
        for (bool preload : {false, true}) {
            auto t = sim(device::FuseSet::from_bits(bits), preload);
            const auto inf = infer_fuses(t, p);
            CAPTURE(bits);
            CHECK(std::find(inf.candidates.begin(), inf.candidates.end(), device::FuseSet::from_bits(bits))
                  != inf.candidates.end());
            CHECK_FALSE(inf.evidence.empty());
        }
    }
    auto vp = sim(device::FuseSet::from_bits(1), true);
    CHECK(infer_fuses(vp, p).candidates.size() == 1);
    auto vp_nouser = sim(device::FuseSet::from_bits(1), false);
    CHECK(infer_fuses(vp_nouser, p).candidates.size() == 2);
}

TEST_CASE("remanence recovery")
{
    const DeviceProfile p = *builtin_profile("10m08");
    {
        auto t = sim({});
        CHECK(recover_remanent(t, p, p.remanence_point).fraction >= 0.97);
    }
    {
        auto t = sim({});
        CHECK(recover_remanent(t, p, 1.0).fraction == 0.0);
    }
    {
        auto t = sim({});
        CHECK(recover_remanent(t, p, 0.0).fraction == 1.0);
    }
}
