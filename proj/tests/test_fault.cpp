#include "maxsec/bitstream.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/fault.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

using namespace maxsec;
using namespace maxsec::fault;

namespace {

struct Point {
    const char* device;
    GlitchKind kind;
    double amplitude, width;
    std::uint64_t errors;
};

// Published error counts, one row per calibrated point.
const Point kPoints[] = {
    {"10M16SCE144", GlitchKind::PowerGlitch, 1.5, 5, 9},
    {"10M16SCE144", GlitchKind::PowerGlitch, 1.45, 4, 1706},
    {"10M16SCE144", GlitchKind::PowerGlitch, 1.4, 4, 1860},
    {"10M16SCE144", GlitchKind::PowerGlitch, 1.3, 3.5, 17},
    {"10M16DAF256", GlitchKind::PowerGlitch, 0.6, 1.2, 241},
    {"10M16DAF256", GlitchKind::PowerGlitch, 0.4, 0.7, 650},
    {"10M16DAF256", GlitchKind::PowerGlitch, 0.3, 0.5, 13491},
    {"10M16DAF256", GlitchKind::PowerGlitch, 0.2, 0.4, 9954},
    {"10M16SCE144", GlitchKind::EmPulse, 190, 27, 26},
    {"10M16SCE144", GlitchKind::EmPulse, 220, 30, 80},
    {"10M16SCE144", GlitchKind::EmPulse, 260, 35, 184},
    {"10M16SCE144", GlitchKind::EmPulse, 290, 40, 352},
    {"10M16DAF256", GlitchKind::EmPulse, 170, 31, 241},
    {"10M16DAF256", GlitchKind::EmPulse, 200, 34, 650},
    {"10M16DAF256", GlitchKind::EmPulse, 240, 30, 191},
    {"10M16DAF256", GlitchKind::EmPulse, 285, 30, 254},
};

// Bytes a full JTAG read returns: every region except the system area.
std::uint64_t readable_bytes(const DeviceProfile& p)
{
    std::uint64_t n = 0;
    for (const Region& r : p.regions.regions())
        if (r.access != AccessClass::SystemArea)
            n += r.size();
    return n;
}

DeviceFactory factory(const char* profile, const device::FuseSet& fuses)
{
    const DeviceProfile p = *builtin_profile(profile);
    auto proto = std::make_shared<const device::Device>(p, device::build_image(p, fuses, 7));
    return [proto](std::uint64_t) { return *proto; };
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Flash-array rectangle of the default floorplan, written out independently.
bool in_flash_rect(double x, double y)
{
    return x >= 1800 && x <= 2800 && y >= 2000 && y <= 3000;
}

} // namespace

TEST_CASE("builtin calibration holds the published counts")
{
    const auto& cal = CalibrationTable::builtin();
    CHECK(cal.rows().size() == 16);
    for (const auto& pt : kPoints) {
        const auto rows = cal.rows_for(pt.device, pt.kind);
        const auto it = std::find_if(rows.begin(), rows.end(), [&](const CalibrationRow& r) {
            return r.amplitude == pt.amplitude && r.width == pt.width;
        });
        REQUIRE(it != rows.end());
        CHECK(it->errors == pt.errors);
    }
    CHECK(cal.knee("10M16SCE144", GlitchKind::PowerGlitch) == 1.4);
    CHECK(cal.knee("10M16DAF256", GlitchKind::PowerGlitch) == 0.3);
}

TEST_CASE("shipped calibration file parses to the builtin table")
{
    const auto text = read_file(std::string(MAXSEC_DATA_DIR) + "/calibration.txt");
    CHECK(CalibrationTable::parse(text).format() == CalibrationTable::builtin().format());
    const auto again = CalibrationTable::parse(CalibrationTable::builtin().format());
    CHECK(again.format() == CalibrationTable::builtin().format());
}

TEST_CASE("calibration parse errors")
{
    CHECK_THROWS_AS(CalibrationTable::parse("point X power 1 1 1\n"), ParseError);
    CHECK_THROWS_AS(CalibrationTable::parse("device X profile=10m16\npoint X plasma 1 1 1\n"), ParseError);
    CHECK_THROWS_AS(CalibrationTable::parse("device X profile=10m16\npoint X power 1 1 many\n"), ParseError);
    CHECK_THROWS_AS(CalibrationTable::parse("device X profile=10m16 supply=triple\n"), ParseError);
}

TEST_CASE("reads per trial is the readable flash of the profile")
{
    const std::uint64_t n = readable_bytes(*builtin_profile("10m16"));
    CHECK(n == 567296);
    for (const auto& d : CalibrationTable::builtin().devices())
        CHECK(d.reads_per_trial == n);
}

TEST_CASE("response is exact at every calibrated point")
{
    const auto& cal = CalibrationTable::builtin();
    const double n = 567296.0;
    for (const auto& pt : kPoints) {
        const Outcome o = cal.response(pt.device, {pt.kind, pt.amplitude, pt.width, std::nullopt, 0.0});
        CAPTURE(pt.amplitude);
        CHECK(o.p_corrupt == doctest::Approx(static_cast<double>(pt.errors) / n).epsilon(1e-12));
        CHECK(o.p_corrupt + o.p_reset <= 1.0);
    }
}

TEST_CASE("power response is monotone in depth up to the knee")
{
    const auto& cal = CalibrationTable::builtin();
    struct Sweep {
        const char* device;
        double shallow, knee;
    };
    for (const Sweep s : {Sweep{"10M16SCE144", 1.6, 1.4}, Sweep{"10M16DAF256", 0.7, 0.3}}) {
        for (double width : {0.4, 1.0, 4.0, 5.0}) {
            double prev = 0.0;
            for (int i = 0; i <= 200; ++i) {
                const double a = s.shallow + (s.knee - s.shallow) * i / 200.0;
                const double p = cal.response(s.device, {GlitchKind::PowerGlitch, a, width, std::nullopt, 0.0}).p_corrupt;
                CHECK(p >= prev - 1e-15);
                prev = p;
            }
        }
    }
}

TEST_CASE("far beyond the knee resets dominate")
{
    const auto& cal = CalibrationTable::builtin();
    const Outcome o = cal.response("10M16SCE144", {GlitchKind::PowerGlitch, 0.5, 4, std::nullopt, 0.0});
    CHECK(o.p_reset == 1.0);
    CHECK(o.p_corrupt == 0.0);
    for (double a = 1.6; a > 0.0; a -= 0.01) {
        const Outcome x = cal.response("10M16SCE144", {GlitchKind::PowerGlitch, a, 4, std::nullopt, 0.0});
        CHECK(x.p_corrupt >= 0.0);
        CHECK(x.p_reset >= 0.0);
        CHECK(x.p_none() >= -1e-12);
    }
    CHECK_THROWS(cal.response("NOPE", {GlitchKind::PowerGlitch, 1.4, 4, std::nullopt, 0.0}));
    CHECK_THROWS(cal.response("10M16SCE144", {GlitchKind::Laser, 50, 20, std::nullopt, 0.0}));
}

TEST_CASE("campaign determinism and job independence")
{
    const auto f = factory("10m16", {});
    CampaignSpec spec{"10M16SCE144", {GlitchKind::PowerGlitch, 1.45, 4, std::nullopt, 0.0}, 4, 99};
    const auto& cal = CalibrationTable::builtin();
    const auto serial = run_campaign_serial(spec, cal, f);
    CHECK(run_campaign(spec, cal, f, 1).trials == serial.trials);
    CHECK(run_campaign(spec, cal, f, 3).trials == serial.trials);
    CHECK(run_campaign(spec, cal, f).corrupt_count == serial.corrupt_count);
    for (std::size_t i = 0; i < serial.trials.size(); ++i) {
        CHECK(serial.trials[i].seed == 99 + i);
        CHECK(serial.trials[i].reads == 567296);
    }
    spec.trials = 0;
    CHECK_THROWS(run_campaign(spec, cal, f));
    CHECK_THROWS(run_campaign_serial(spec, cal, f));
}

TEST_CASE("campaign mean tracks n*p over 100 seeded trials")
{
    const auto f = factory("10m16", {});
    CampaignSpec spec{"10M16SCE144", {GlitchKind::PowerGlitch, 1.4, 4, std::nullopt, 0.0}, 100, 2024};
    const auto r = run_campaign(spec, CalibrationTable::builtin(), f);
    const double mean = static_cast<double>(r.corrupt_count) / 100.0;
    CHECK(std::abs(mean - 1860.0) <= 0.01 * 1860.0);
}

TEST_CASE("default floorplan lies inside the die")
{
    const auto plan = Floorplan::default_max10();
    CHECK(plan.width == 4300);
    CHECK(plan.height == 4400);
    for (const auto& r : plan.rects) {
        CHECK(r.x0 >= 0);
        CHECK(r.y0 >= 0);
        CHECK(r.x1 <= plan.width);
        CHECK(r.y1 <= plan.height);
    }
}

TEST_CASE("timing model")
{
    const TimingModel m;
    CHECK(m.effective(-20, 20));
    CHECK(m.effective(-20, 40));
    CHECK_FALSE(m.effective(0, 40));
    CHECK_FALSE(m.effective(-10, 10));
    CHECK_FALSE(m.effective(-20, 19));
    CHECK(m.effective(-20, 19.5));
}

TEST_CASE("laser scan clears verify protect exactly inside the flash rectangle")
{
    const auto plan = Floorplan::default_max10();
    const Grid g{1500, 1750, 3100, 3300, 50};
    const LaserPulse pulse{50, 20, -20};
    const auto map = laser_scan(g, pulse, factory("10m08", device::FuseSet::from_bits(1)), plan);
    CHECK(map.nx == 33);
    CHECK(map.ny == 32);
    for (std::size_t iy = 0; iy < map.ny; ++iy)
        for (std::size_t ix = 0; ix < map.nx; ++ix)
            CHECK(map.at(ix, iy) == (in_flash_rect(map.x(ix), map.y(iy)) ? FaultClass::FuseDisableVp : FaultClass::None));
    CHECK(laser_scan_serial(g, pulse, factory("10m08", device::FuseSet::from_bits(1)), plan) == map);

    const auto js = laser_scan(g, pulse, factory("10m08", device::FuseSet::from_bits(4)), plan);
    for (std::size_t iy = 0; iy < js.ny; ++iy)
        for (std::size_t ix = 0; ix < js.nx; ++ix)
            CHECK(js.at(ix, iy)
                  == (in_flash_rect(js.x(ix), js.y(iy)) ? FaultClass::FuseDisableJtagSecure : FaultClass::None));
}

TEST_CASE("laser scan degenerate grids")
{
    const auto plan = Floorplan::default_max10();
    const auto f = factory("10m08", device::FuseSet::from_bits(1));
    const LaserPulse pulse{50, 20, -20};
    const auto one = laser_scan({0, 0, 4300, 4400, 10000}, pulse, f, plan);
    CHECK(one.nx == 1);
    CHECK(one.ny == 1);
    CHECK_THROWS(laser_scan({0, 0, 5000, 100, 100}, pulse, f, plan));
    CHECK_THROWS(laser_scan({0, 0, 100, 100, 0}, pulse, f, plan));
    const auto short_pulse = laser_scan({0, 0, 4300, 4400, 100}, {50, 10, -10}, f, plan);
    CHECK(std::all_of(short_pulse.cells.begin(), short_pulse.cells.end(),
                      [](FaultClass c) { return c == FaultClass::None; }));
}

TEST_CASE("laser classes per region")
{
    const auto plan = Floorplan::default_max10();
    const LaserPulse pulse{50, 20, -20};
    const auto f = factory("10m08", {});
    CHECK(laser_probe(f(0), plan, 800, 3700, pulse) == FaultClass::JtagUpset);
    CHECK(laser_probe(f(0), plan, 2200, 1300, pulse) == FaultClass::UfmCorrupt);
    CHECK(laser_probe(f(0), plan, 100, 100, pulse) == FaultClass::None);
}

TEST_CASE("pulses after the edge or shorter than 15 us never fault")
{
    const auto plan = Floorplan::default_max10();
    const DeviceFactory fs[] = {factory("10m08", {}), factory("10m08", device::FuseSet::from_bits(1)),
                                factory("10m08", device::FuseSet::from_bits(4))};
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> ux(0, 4300), uy(0, 4400), power(1, 200);
    for (int i = 0; i < 300; ++i) {
        const auto& f = fs[i % 3];
        std::uniform_real_distribution<double> start(0, 100), length(0.01, 100);
        const LaserPulse late{power(rng), length(rng), start(rng)};
        CHECK(laser_probe(f(0), plan, ux(rng), uy(rng), late) == FaultClass::None);
        std::uniform_real_distribution<double> shortlen(0.01, 14.99), pre(-30, 10);
        const LaserPulse brief{power(rng), shortlen(rng), pre(rng)};
        CHECK(laser_probe(f(0), plan, ux(rng), uy(rng), brief) == FaultClass::None);
    }
}

TEST_CASE("timing sweeps")
{
    const auto plan = Floorplan::default_max10();
    const auto f = factory("10m08", device::FuseSet::from_bits(4));
    const Axis x{0, 1, 12}, y{0, 2, 12};
    const auto over = timing_sweep(SweepKind::Overshoot, x, y, 50, {2300, 2500}, f, plan);
    for (std::size_t iy = 0; iy < y.count; ++iy)
        for (std::size_t ix = 0; ix < x.count; ++ix) {
            CHECK(over.at(ix, iy) == over.at(0, iy));
            CHECK(over.at(ix, iy) == (y.at(iy) >= 15));
        }
    CHECK(timing_sweep_serial(SweepKind::Overshoot, x, y, 50, {2300, 2500}, f, plan) == over);

    const Axis gx{0, 0.1, 12}, ly{5, 2, 12};
    const auto under = timing_sweep(SweepKind::Undershoot, gx, ly, 50, {2300, 2500}, f, plan);
    for (std::size_t iy = 0; iy < ly.count; ++iy)
        for (std::size_t ix = 0; ix < gx.count; ++ix) {
            if (ly.at(iy) < 15)
                CHECK_FALSE(under.at(ix, iy));
            else
                CHECK(under.at(ix, iy) == (gx.at(ix) < 0.8 - 1e-9));
        }

    const auto empty = timing_sweep(SweepKind::Overshoot, {0, 1, 0}, {0, 1, 0}, 50, {2300, 2500}, f, plan);
    CHECK(empty.effective.empty());
}

TEST_CASE("graymap and text renderings")
{
    GridMap m{0, 0, 10, 3, 2, {FaultClass::None, FaultClass::JtagUpset, FaultClass::UfmCorrupt,
                               FaultClass::FuseDisableVp, FaultClass::FuseDisableJtagSecure, FaultClass::None}};
    const std::string pgm = grid_to_pgm(m);
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(pgm.size() == header.size() + 6);
    CHECK(pgm.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(pgm[header.size()]) == 0);
    const std::string text = grid_to_text(m);
    CHECK(text.find(".JU") != std::string::npos);
    CHECK(text.find("VS.") != std::string::npos);
}
