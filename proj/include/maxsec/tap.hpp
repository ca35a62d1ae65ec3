#pragma once

#include "maxsec/bitvector.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace maxsec::tap {

enum class TapState : std::uint8_t {
    TestLogicReset,
    RunTestIdle,
    SelectDRScan,
    CaptureDR,
    ShiftDR,
    Exit1DR,
    PauseDR,
    Exit2DR,
    UpdateDR,
    SelectIRScan,
    CaptureIR,
    ShiftIR,
    Exit1IR,
    PauseIR,
    Exit2IR,
    UpdateIR,
};

inline constexpr std::size_t kTapStateCount = 16;

inline constexpr std::array<TapState, kTapStateCount> kAllTapStates = {
    TapState::TestLogicReset, TapState::RunTestIdle, TapState::SelectDRScan, TapState::CaptureDR,
    TapState::ShiftDR,        TapState::Exit1DR,     TapState::PauseDR,      TapState::Exit2DR,
    TapState::UpdateDR,       TapState::SelectIRScan, TapState::CaptureIR,   TapState::ShiftIR,
    TapState::Exit1IR,        TapState::PauseIR,     TapState::Exit2IR,      TapState::UpdateIR,
};

// IEEE 1149.1 successor on a TCK rising edge.
constexpr TapState step(TapState s, bool tms)
{
    using S = TapState;
    switch (s) {
    case S::TestLogicReset: return tms ? S::TestLogicReset : S::RunTestIdle;
    case S::RunTestIdle:    return tms ? S::SelectDRScan : S::RunTestIdle;
    case S::SelectDRScan:   return tms ? S::SelectIRScan : S::CaptureDR;
    case S::CaptureDR:      return tms ? S::Exit1DR : S::ShiftDR;
    case S::ShiftDR:        return tms ? S::Exit1DR : S::ShiftDR;
    case S::Exit1DR:        return tms ? S::UpdateDR : S::PauseDR;
    case S::PauseDR:        return tms ? S::Exit2DR : S::PauseDR;
    case S::Exit2DR:        return tms ? S::UpdateDR : S::ShiftDR;
    case S::UpdateDR:       return tms ? S::SelectDRScan : S::RunTestIdle;
    case S::SelectIRScan:   return tms ? S::TestLogicReset : S::CaptureIR;
    case S::CaptureIR:      return tms ? S::Exit1IR : S::ShiftIR;
    case S::ShiftIR:        return tms ? S::Exit1IR : S::ShiftIR;
    case S::Exit1IR:        return tms ? S::UpdateIR : S::PauseIR;
    case S::PauseIR:        return tms ? S::Exit2IR : S::PauseIR;
    case S::Exit2IR:        return tms ? S::UpdateIR : S::ShiftIR;
    case S::UpdateIR:       return tms ? S::SelectDRScan : S::RunTestIdle;
    }
    return S::TestLogicReset;
}

std::string_view state_name(TapState s);
// Accepts both the enum spelling ("RunTestIdle") and STAPL names ("IDLE", "DRPAUSE", ...).
std::optional<TapState> parse_state(std::string_view name);

// TMS sequence (LSB first) that moves the TAP from `from` to stable state `to`.
// Stable targets: TestLogicReset, RunTestIdle, ShiftDR, PauseDR, ShiftIR, PauseIR.
BitVector path(TapState from, TapState to);

// Bit-level channel to a JTAG target. One owner, no concurrent use.
class Transport {
public:
    virtual ~Transport() = default;

    virtual bool clock(bool tms, bool tdi) = 0;

    // Batched clocking. Must be observationally identical to tms.size() clock() calls.
    virtual BitVector shift(const BitVector& tms, const BitVector& tdi);

    // Total TCK cycles issued through this transport.
    virtual std::uint64_t cycles() const { return 0; }
};

// Forces TestLogicReset with five TMS=1 clocks, then parks in RunTestIdle.
void reset(Transport& t);

// Scans `opcode` into IR starting from RunTestIdle and parks in RunTestIdle.
// Returns the bits captured on TDO while shifting.
BitVector shift_ir(Transport& t, const BitVector& opcode);

// Same for DR. Zero-length data issues no clocks.
BitVector shift_dr(Transport& t, const BitVector& data);

// Clocks `cycles` times with TMS=0 in RunTestIdle.
void idle(Transport& t, std::uint64_t cycles);

// Builds the TMS/TDI streams for a full IR or DR scan from RunTestIdle back to RunTestIdle.
// `shift_offset` receives the index of the first shift clock.
struct ScanFrame {
    BitVector tms;
    BitVector tdi;
    std::size_t shift_offset = 0;
};
ScanFrame build_scan(bool ir, const BitVector& data);

} // namespace maxsec::tap
