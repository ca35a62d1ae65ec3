#include "maxsec/bitstream.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/stapl.hpp"

#include <doctest.h>

#include <regex>

using namespace maxsec;
using namespace maxsec::stapl;

namespace {

device::SimTransport sim(const device::FlashImage& image)
{
    return device::SimTransport(device::Device(*builtin_profile("10m08"), image));
}

// Counts TCK cycles without touching a device.
class Counter final : public tap::Transport {
public:
    bool clock(bool, bool) override
    {
        ++n;
        return false;
    }
    std::uint64_t cycles() const override { return n; }
    std::uint64_t n = 0;
};

std::size_t line_of(const std::string& text, const std::string& needle)
{
    const auto pos = text.find(needle);
    REQUIRE(pos != std::string::npos);
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

RunResult run_text(const std::string& text, const std::string& action = "RUN")
{
    Counter c;
    return run(parse(text), c, {.action = action});
}

} // namespace

TEST_CASE("scalars, arrays, loops and exports")
{
    const auto r = run_text(R"(
ACTION RUN = P;
PROCEDURE P;
    INTEGER i;
    INTEGER sum = 0;
    BOOLEAN v[8] = $A5;
    FOR i = 0 TO 7;
        IF v[i] THEN sum = sum + (1 << i);
    NEXT i;
    EXPORT "SUM", sum;
    PRINT "sum=", sum;
ENDPROC;
)");
    CHECK(r.exit_code == 0);
    REQUIRE(r.exports.size() == 1);
    CHECK(r.exports[0].second == 0xA5);
    REQUIRE(r.printed.size() == 1);
    CHECK(r.printed[0] == "sum=165");
}

TEST_CASE("GOTO, CALL and EXIT")
{
    const auto r = run_text(R"(
ACTION RUN = P;
PROCEDURE Q;
    EXPORT "Q", 1;
ENDPROC;
PROCEDURE P;
    INTEGER n = 0;
LOOP: n = n + 1;
    IF n < 5 THEN GOTO LOOP;
    CALL Q;
    EXPORT "N", n;
    EXIT 3;
    EXPORT "unreached", 0;
ENDPROC;
)");
    CHECK(r.exit_code == 3);
    REQUIRE(r.exports.size() == 2);
    CHECK(r.exports[1].second == 5);
    CHECK(r.exit_line == std::size_t{12});
}

TEST_CASE("WAIT advances simulated time without clocks")
{
    Counter base, c;
    run(parse("ACTION RUN = P;\nPROCEDURE P;\nENDPROC;\n"), base, {.action = "RUN"});
    const auto r = run(parse("ACTION RUN = P;\nPROCEDURE P;\nWAIT 1000 USEC;\nENDPROC;\n"), c, {.action = "RUN"});
    CHECK(r.elapsed_us == 1000.0);
    CHECK(c.n == base.n);
}

TEST_CASE("static errors carry the line")
{
    const std::pair<const char*, std::size_t> cases[] = {
        {"ACTION RUN = P;\nPROCEDURE P;\nGOTO NOWHERE;\nENDPROC;\n", 3},
        {"ACTION RUN = P;\nPROCEDURE P;\nINTEGER i;\nFOR i = 0 TO 1;\nENDPROC;\n", 4},
        {"ACTION RUN = P;\nPROCEDURE P;\nCALL MISSING;\nENDPROC;\n", 3},
        {"ACTION RUN = P;\nPROCEDURE P;\nBOOLEAN a[8] = @ABCD;\nENDPROC;\n", 3},
    };
    for (const auto& [text, line] : cases) {
        try {
            parse(text);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == line);
        }
    }
}

TEST_CASE("runtime errors abort with the statement location")
{
    const char* undefined = "ACTION RUN = P;\nPROCEDURE P;\nINTEGER a;\na = b + 1;\nENDPROC;\n";
    const char* bounds = "ACTION RUN = P;\nPROCEDURE P;\nBOOLEAN v[4];\nv[9] = 1;\nENDPROC;\n";
    for (const char* text : {undefined, bounds}) {
        try {
            run_text(text);
            FAIL("expected RuntimeError");
        } catch (const RuntimeError& e) {
            CHECK(e.line() == 4);
        }
    }
    CHECK_THROWS(run_text("ACTION RUN = P;\nPROCEDURE P;\nENDPROC;\n", "OTHER"));
}

TEST_CASE("optional action steps are skipped unless requested")
{
    const char* text = "ACTION RUN = P, Q OPTIONAL;\nPROCEDURE P;\nEXPORT \"P\", 1;\nENDPROC;\n"
                       "PROCEDURE Q;\nEXPORT \"Q\", 1;\nENDPROC;\n";
    Counter c;
    CHECK(run(parse(text), c, {.action = "RUN"}).exports.size() == 1);
    CHECK(run(parse(text), c, {.action = "RUN", .run_optional = true}).exports.size() == 2);
}

TEST_CASE("hex literal and obfuscated names")
{
    CHECK(hex_literal(BitVector::from_uint(0x1A5, 12)) == "$1A5");
    CHECK(is_obfuscated_name("L107"));
    CHECK(is_obfuscated_name("A12"));
    CHECK_FALSE(is_obfuscated_name("VERIFY"));
    CHECK_FALSE(is_obfuscated_name("L"));
    CHECK(format_trace_line({"L1", true, 10, "0200"}) == "L1\tIR\t10\t0200");
}

TEST_CASE("generated jam programs and verifies a matching device")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto image = device::build_image(p, {}, 21);
    const std::string jam = generate_jam(p, image);
    const Program prog = parse(jam);

    auto blank = sim(device::FlashImage::erased(p.flash_size()));
    const auto programmed = run(prog, blank, {.action = "PROGRAM", .trace = true});
    CHECK(programmed.exit_code == 0);
    const Region& ufm = *p.regions.find(AccessClass::UserFlash);
    const Region& cfm = *p.regions.find(AccessClass::ConfigFlash);
    CHECK(std::equal(image.bytes.begin() + ufm.start, image.bytes.begin() + cfm.end + 1,
                     blank.device().flash().bytes.begin() + ufm.start));

    const std::regex shape(R"([A-Za-z_][A-Za-z0-9_]*\t(IR|DR)\t[0-9]+\t[0-9a-f]+)");
    REQUIRE_FALSE(programmed.trace.empty());
    for (std::size_t i = 0; i < programmed.trace.size(); i += 997)
        CHECK(std::regex_match(format_trace_line(programmed.trace[i]), shape));

    auto same = sim(image);
    CHECK(run(prog, same, {.action = "VERIFY"}).exit_code == 0);
}

TEST_CASE("verify fails at the compare scan on a one-bit difference")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto image = device::build_image(p, {}, 21);
    const std::string jam = generate_jam(p, image);
    auto bad = image;
    bad.bytes[0x30000] ^= 0x04;
    auto t = sim(bad);
    const auto r = run(parse(jam), t, {.action = "VERIFY"});
    CHECK(r.exit_code == kExitVerifyFailure);
    REQUIRE(r.exit_line);
    // The failing EXIT is the one following the CFM compare, the last compare in the file.
    const auto compare = jam.rfind("COMPARE");
    const std::size_t compare_line
        = 1 + static_cast<std::size_t>(std::count(jam.begin(), jam.begin() + static_cast<long>(compare), '\n'));
    CHECK(*r.exit_line == compare_line + 1);
}

TEST_CASE("jam runs are deterministic")
{
    const DeviceProfile p = *builtin_profile("10m08");
    const auto image = device::build_image(p, {}, 3);
    JamOptions o;
    o.include_ufm = false;
    const Program prog = parse(generate_jam(p, image, o));
    auto a = sim(image);
    auto b = sim(image);
    const auto ra = run(prog, a, {.action = "VERIFY", .trace = true});
    const auto rb = run(prog, b, {.action = "VERIFY", .trace = true});
    CHECK(ra.trace == rb.trace);
    CHECK(a.cycles() == b.cycles());
    CHECK(line_of(generate_jam(p, image, {.obfuscate = false}), "PROCEDURE") > 0);
}
