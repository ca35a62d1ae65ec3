#include "maxsec/tap.hpp"

#include "maxsec/errors.hpp"

#include <cctype>
#include <string>
#include <utility>

namespace maxsec::tap {

namespace {

struct StateName {
    TapState state;
    std::string_view name;
    std::string_view stapl;
};

constexpr std::array<StateName, kTapStateCount> kNames = {{
    {TapState::TestLogicReset, "TestLogicReset", "RESET"},
    {TapState::RunTestIdle, "RunTestIdle", "IDLE"},
    {TapState::SelectDRScan, "SelectDRScan", "DRSELECT"},
    {TapState::CaptureDR, "CaptureDR", "DRCAPTURE"},
    {TapState::ShiftDR, "ShiftDR", "DRSHIFT"},
    {TapState::Exit1DR, "Exit1DR", "DREXIT1"},
    {TapState::PauseDR, "PauseDR", "DRPAUSE"},
    {TapState::Exit2DR, "Exit2DR", "DREXIT2"},
    {TapState::UpdateDR, "UpdateDR", "DRUPDATE"},
    {TapState::SelectIRScan, "SelectIRScan", "IRSELECT"},
    {TapState::CaptureIR, "CaptureIR", "IRCAPTURE"},
    {TapState::ShiftIR, "ShiftIR", "IRSHIFT"},
    {TapState::Exit1IR, "Exit1IR", "IREXIT1"},
    {TapState::PauseIR, "PauseIR", "IRPAUSE"},
    {TapState::Exit2IR, "Exit2IR", "IREXIT2"},
    {TapState::UpdateIR, "UpdateIR", "IRUPDATE"},
}};

bool iequals(std::string_view a, std::string_view b)
{
    if (a.size() != b.size())
        return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (std::toupper(static_cast<unsigned char>(a[i]))
            != std::toupper(static_cast<unsigned char>(b[i])))
            return false;
    return true;
}

void append_bits(BitVector& v, std::uint32_t bits, std::size_t count)
{
    for (std::size_t i = 0; i < count; ++i)
        v.push_back((bits >> i) & 1u);
}

} // namespace

std::string_view state_name(TapState s)
{
    return kNames[static_cast<std::size_t>(s)].name;
}

std::optional<TapState> parse_state(std::string_view name)
{
    for (const auto& n : kNames)
        if (iequals(name, n.name) || iequals(name, n.stapl))
            return n.state;
    return std::nullopt;
}

BitVector path(TapState from, TapState to)
{
    // Breadth-first search over the 16-state graph; the result is the shortest TMS path.
    std::array<int, kTapStateCount> prev{};
    std::array<bool, kTapStateCount> prev_tms{};
    prev.fill(-1);
    std::array<TapState, kTapStateCount> queue{};
    std::size_t head = 0, tail = 0;
    queue[tail++] = from;
    prev[static_cast<std::size_t>(from)] = static_cast<int>(from);
    while (head < tail) {
        TapState s = queue[head++];
        if (s == to)
            break;
        for (bool tms : {false, true}) {
            TapState n = step(s, tms);
            auto ni = static_cast<std::size_t>(n);
            if (prev[ni] < 0) {
                prev[ni] = static_cast<int>(s);
                prev_tms[ni] = tms;
                queue[tail++] = n;
            }
        }
    }
    std::vector<bool> reversed;
    for (TapState s = to; s != from;) {
        auto si = static_cast<std::size_t>(s);
        reversed.push_back(prev_tms[si]);
        s = static_cast<TapState>(prev[si]);
    }
    BitVector out;
    for (auto it = reversed.rbegin(); it != reversed.rend(); ++it)
        out.push_back(*it);
    return out;
}

BitVector Transport::shift(const BitVector& tms, const BitVector& tdi)
{
    if (tms.size() != tdi.size())
        throw LengthMismatch("shift: TMS and TDI lengths differ");
    BitVector tdo(tms.size());
    for (std::size_t i = 0; i < tms.size(); ++i)
        tdo.set(i, clock(tms.get(i), tdi.get(i)));
    return tdo;
}

void reset(Transport& t)
{
    BitVector tms(6, true);
    tms.set(5, false);
    t.shift(tms, BitVector(6));
}

ScanFrame build_scan(bool ir, const BitVector& data)
{
    ScanFrame f;
    // RunTestIdle -> Select-DR [-> Select-IR] -> Capture -> Shift
    if (ir)
        append_bits(f.tms, 0b0011, 4);
    else
        append_bits(f.tms, 0b001, 3);
    f.tdi.resize(f.tms.size());
    f.shift_offset = f.tms.size();
    for (std::size_t i = 0; i < data.size(); ++i) {
        f.tms.push_back(i + 1 == data.size());
        f.tdi.push_back(data.get(i));
    }
    // Exit1 -> Update -> RunTestIdle
    append_bits(f.tms, 0b01, 2);
    f.tdi.resize(f.tms.size());
    return f;
}

namespace {

BitVector run_scan(Transport& t, bool ir, const BitVector& data)
{
    if (data.empty())
        return {};
    ScanFrame f = build_scan(ir, data);
    BitVector tdo = t.shift(f.tms, f.tdi);
    return tdo.slice(f.shift_offset, data.size());
}

} // namespace

BitVector shift_ir(Transport& t, const BitVector& opcode)
{
    return run_scan(t, true, opcode);
}

BitVector shift_dr(Transport& t, const BitVector& data)
{
    return run_scan(t, false, data);
}

void idle(Transport& t, std::uint64_t cycles)
{
    constexpr std::uint64_t kChunk = 1u << 16;
    while (cycles > 0) {
        auto n = static_cast<std::size_t>(cycles < kChunk ? cycles : kChunk);
        t.shift(BitVector(n), BitVector(n));
        cycles -= n;
    }
}

} // namespace maxsec::tap
