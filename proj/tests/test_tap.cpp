#include "maxsec/bitstream.hpp"
#include "maxsec/bitvector.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/remote.hpp"
#include "maxsec/tap.hpp"

#include <doctest.h>

#include <random>
#include <sstream>
#include <thread>

using namespace maxsec;
using tap::TapState;

namespace {

// 1149.1 successor table written out row by row: {state, next on TMS=0, next on TMS=1}.
struct Row {
    TapState s, on0, on1;
};
constexpr Row kTable[] = {
    {TapState::TestLogicReset, TapState::RunTestIdle, TapState::TestLogicReset},
    {TapState::RunTestIdle, TapState::RunTestIdle, TapState::SelectDRScan},
    {TapState::SelectDRScan, TapState::CaptureDR, TapState::SelectIRScan},
    {TapState::CaptureDR, TapState::ShiftDR, TapState::Exit1DR},
    {TapState::ShiftDR, TapState::ShiftDR, TapState::Exit1DR},
    {TapState::Exit1DR, TapState::PauseDR, TapState::UpdateDR},
    {TapState::PauseDR, TapState::PauseDR, TapState::Exit2DR},
    {TapState::Exit2DR, TapState::ShiftDR, TapState::UpdateDR},
    {TapState::UpdateDR, TapState::RunTestIdle, TapState::SelectDRScan},
    {TapState::SelectIRScan, TapState::CaptureIR, TapState::TestLogicReset},
    {TapState::CaptureIR, TapState::ShiftIR, TapState::Exit1IR},
    {TapState::ShiftIR, TapState::ShiftIR, TapState::Exit1IR},
    {TapState::Exit1IR, TapState::PauseIR, TapState::UpdateIR},
    {TapState::PauseIR, TapState::PauseIR, TapState::Exit2IR},
    {TapState::Exit2IR, TapState::ShiftIR, TapState::UpdateIR},
    {TapState::UpdateIR, TapState::RunTestIdle, TapState::SelectDRScan},
};

// Records the TAP state seen by a passive observer of the TMS stream.
class Recorder final : public tap::Transport {
public:
    bool clock(bool tms, bool tdi) override
    {
        state = tap::step(state, tms);
        tms_log.push_back(tms);
        tdi_log.push_back(tdi);
        return false;
    }
    TapState state = TapState::TestLogicReset;
    BitVector tms_log, tdi_log;
};

device::Device sim_device(const char* profile = "10m08")
{
    const DeviceProfile p = *builtin_profile(profile);
    return device::Device(p, device::build_image(p, {}, 5));
}

} // namespace

TEST_CASE("bitvector hex round trip and packing")
{
    const auto v = BitVector::from_uint(0x155, 10);
    CHECK(v.to_hex() == "5501");
    CHECK(BitVector::from_hex(10, "5501") == v);
    CHECK(v.get(0));
    CHECK_FALSE(v.get(1));
    CHECK(v.to_uint(2, 4) == 0x5);

    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = 1 + rng() % 300;
        BitVector b(n);
        for (std::size_t k = 0; k < n; ++k)
            b.set(k, rng() & 1);
        CHECK(BitVector::from_hex(n, b.to_hex()) == b);
    }
}

TEST_CASE("bitvector rejects malformed hex")
{
    CHECK_THROWS_AS(BitVector::from_hex(8, "zz"), FormatError);
    CHECK_THROWS_AS(BitVector::from_hex(8, "0102"), FormatError);
    // Padding bits above the length must be zero.
    CHECK_THROWS_AS(BitVector::from_hex(4, "f0"), FormatError);
}

TEST_CASE("tap step matches the 1149.1 table")
{
    for (const auto& r : kTable) {
        CHECK(tap::step(r.s, false) == r.on0);
        CHECK(tap::step(r.s, true) == r.on1);
    }
}

TEST_CASE("five TMS=1 clocks reach Test-Logic-Reset from every state")
{
    for (TapState s : tap::kAllTapStates) {
        TapState x = s;
        for (int i = 0; i < 5; ++i)
            x = tap::step(x, true);
        CHECK(x == TapState::TestLogicReset);
    }
}

TEST_CASE("path reaches every stable state from every state")
{
    const TapState stable[] = {TapState::TestLogicReset, TapState::RunTestIdle, TapState::ShiftDR,
                               TapState::PauseDR,        TapState::ShiftIR,     TapState::PauseIR};
    for (TapState from : tap::kAllTapStates) {
        for (TapState to : stable) {
            const BitVector p = tap::path(from, to);
            TapState x = from;
            for (std::size_t i = 0; i < p.size(); ++i)
                x = tap::step(x, p[i]);
            CHECK(x == to);
            CHECK(p.size() <= 7);
        }
    }
}

TEST_CASE("state names parse in both spellings")
{
    CHECK(tap::parse_state("IDLE") == TapState::RunTestIdle);
    CHECK(tap::parse_state("DRPAUSE") == TapState::PauseDR);
    CHECK(tap::parse_state("RunTestIdle") == TapState::RunTestIdle);
    CHECK_FALSE(tap::parse_state("NOWHERE"));
    for (TapState s : tap::kAllTapStates)
        CHECK(tap::parse_state(tap::state_name(s)) == s);
}

TEST_CASE("scans start and end in Run-Test/Idle and shift exactly the payload")
{
    Recorder r;
    tap::reset(r);
    CHECK(r.state == TapState::RunTestIdle);
    for (bool ir : {true, false}) {
        const auto data = BitVector::from_uint(0x2A5, 10);
        const auto frame = tap::build_scan(ir, data);
        TapState x = TapState::RunTestIdle;
        std::size_t shifts = 0;
        for (std::size_t i = 0; i < frame.tms.size(); ++i) {
            const TapState before = x;
            x = tap::step(x, frame.tms[i]);
            if (before == (ir ? TapState::ShiftIR : TapState::ShiftDR)) {
                CHECK(frame.tdi[i] == data[shifts]);
                CHECK(i == frame.shift_offset + shifts);
                ++shifts;
            }
        }
        CHECK(shifts == data.size());
        CHECK(x == TapState::RunTestIdle);
    }
}

TEST_CASE("shift is observationally identical to single clocks")
{
    device::SimTransport a(sim_device());
    device::SimTransport b(sim_device());
    std::mt19937_64 rng(9);
    BitVector tms(2000), tdi(2000);
    for (std::size_t i = 0; i < tms.size(); ++i) {
        tms.set(i, rng() % 4 == 0);
        tdi.set(i, rng() & 1);
    }
    const BitVector batched = a.shift(tms, tdi);
    BitVector single;
    for (std::size_t i = 0; i < tms.size(); ++i)
        single.push_back(b.clock(tms[i], tdi[i]));
    CHECK(batched == single);
    CHECK(a.cycles() == b.cycles());
}

TEST_CASE("wire protocol requests")
{
    const auto tms = BitVector::from_uint(0b0011, 4);
    const auto tdi = BitVector::from_uint(0b1010, 4);
    CHECK(remote::format_shift(tms, tdi) == "SHIFT 4 03 0a");
    auto req = remote::parse_request("SHIFT 4 03 0a");
    REQUIRE(std::holds_alternative<remote::ShiftRequest>(req));
    CHECK(std::get<remote::ShiftRequest>(req).tdi == tdi);
    CHECK(std::holds_alternative<remote::ResetRequest>(remote::parse_request("RESET")));
    CHECK_THROWS_AS(remote::parse_request("SHIFT 4 03"), FormatError);
    CHECK_THROWS_AS(remote::parse_request("SHIFT x 03 0a"), FormatError);
    CHECK_THROWS_AS(remote::parse_request("HELLO"), FormatError);
}

TEST_CASE("handle_line answers OK or ERR and never throws")
{
    device::SimTransport sim(sim_device());
    CHECK(remote::handle_line("RESET", sim) == "OK");
    CHECK(remote::handle_line("bogus", sim).starts_with("ERR "));
    CHECK(remote::handle_line("SHIFT 2 03 zz", sim).starts_with("ERR "));
    // One TMS=0 clock leaves Test-Logic-Reset for Run-Test/Idle.
    CHECK(remote::handle_line("SHIFT 1 00 00", sim).starts_with("OK "));
    // IR capture of 0x155 comes out during an IR scan.
    const auto frame = tap::build_scan(true, BitVector::from_uint(0x006, 10));
    const std::string reply = remote::handle_line(remote::format_shift(frame.tms, frame.tdi), sim);
    REQUIRE(reply.starts_with("OK "));
    const auto tdo = BitVector::from_hex(frame.tms.size(), reply.substr(3));
    CHECK(tdo.to_uint(frame.shift_offset, 10) == 0x155);
}

TEST_CASE("serve_stream answers one line per request")
{
    device::SimTransport sim(sim_device());
    std::istringstream in("RESET\nnonsense\nRESET\n");
    std::ostringstream out;
    remote::serve_stream(in, out, sim);
    const std::string s = out.str();
    CHECK(s.starts_with("OK\nERR "));
    CHECK(s.ends_with("OK\n"));
}

TEST_CASE("endpoint parsing")
{
    auto [h, p] = remote::parse_endpoint("127.0.0.1:4242");
    CHECK(h == "127.0.0.1");
    CHECK(p == 4242);
    CHECK_THROWS_AS(remote::parse_endpoint("nohost"), FormatError);
    CHECK_THROWS_AS(remote::parse_endpoint("h:99999"), FormatError);
}

TEST_CASE("remote transport over TCP equals direct access")
{
    device::SimTransport served(sim_device());
    remote::TcpServer server(served, 0);
    std::thread th([&] { server.run(1); });

    device::SimTransport direct(sim_device());
    std::mt19937_64 rng(3);
    {
        remote::RemoteTransport rt("127.0.0.1", server.port());
        for (int round = 0; round < 20; ++round) {
            BitVector tms(300), tdi(300);
            for (std::size_t i = 0; i < 300; ++i) {
                tms.set(i, rng() % 5 == 0);
                tdi.set(i, rng() & 1);
            }
            CHECK(rt.shift(tms, tdi) == direct.shift(tms, tdi));
        }
        const bool a = rt.clock(false, true);
        CHECK(a == direct.clock(false, true));
        CHECK(rt.cycles() == direct.cycles());
    }
    th.join();
}

TEST_CASE("remote transport reports a refused connection as a channel error")
{
    // Bind and release a port so nothing listens there.
    std::uint16_t port;
    {
        device::SimTransport sim(sim_device());
        remote::TcpServer s(sim, 0);
        port = s.port();
    }
    CHECK_THROWS_AS(remote::RemoteTransport("127.0.0.1", port, std::chrono::milliseconds(300)), ChannelError);
}
