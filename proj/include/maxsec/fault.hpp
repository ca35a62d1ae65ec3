#pragma once

#include "maxsec/device.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace maxsec::fault {

enum class GlitchKind : std::uint8_t { PowerGlitch, EmPulse, Laser };
std::string_view glitch_kind_name(GlitchKind k);
std::optional<GlitchKind> parse_glitch_kind(std::string_view s);

// Power: amplitude in V (the table's glitch voltage), width in us.
// EM: amplitude is the coil peak in V, width in ns. Laser: amplitude in mW, width in us.
struct GlitchParams {
    GlitchKind kind = GlitchKind::PowerGlitch;
    double amplitude = 0.0;
    double width = 0.0;
    std::optional<std::pair<double, double>> position; // die coordinates, um
    double timing_us = 0.0;                            // start relative to the TCK rising edge
};

struct Outcome {
    double p_corrupt = 0.0;
    double p_reset = 0.0;
    double p_none() const { return 1.0 - p_corrupt - p_reset; }
};

struct CalibrationRow {
    std::string device;
    GlitchKind kind = GlitchKind::PowerGlitch;
    double amplitude = 0.0;
    double width = 0.0;
    std::uint64_t errors = 0;
};

struct CalibratedDevice {
    std::string name;
    std::string profile;
    std::string supply = "single"; // single or dual
    std::uint64_t reads_per_trial = 0; // readable flash bytes of the profile
    double nominal_v = 0.0;
};

// Per (device, kind): the deepest amplitude that does not yet collapse into resets.
struct ResetKnee {
    std::string device;
    GlitchKind kind;
    double amplitude;
};

class CalibrationTable {
public:
    // Key-value text; see data/calibration.txt.
    static CalibrationTable parse(std::string_view text);
    std::string format() const;
    // The shipped tables (four devices x kinds, four points each).
    static const CalibrationTable& builtin();

    const std::vector<CalibrationRow>& rows() const { return rows_; }
    const std::vector<CalibratedDevice>& devices() const { return devices_; }
    const CalibratedDevice* device(std::string_view name) const;
    std::vector<CalibrationRow> rows_for(std::string_view device, GlitchKind kind) const;
    std::optional<double> knee(std::string_view device, GlitchKind kind) const;

    // Rate interpolated log-linearly along depth, scaled by width / calibrated width (capped at 1).
    // Throws Error for an unknown device or a kind without calibration rows.
    Outcome response(std::string_view device, const GlitchParams& params) const;

private:
    std::vector<CalibratedDevice> devices_;
    std::vector<CalibrationRow> rows_;
    std::vector<ResetKnee> knees_;
};

// Larger is deeper: lower voltage for power glitches, higher coil voltage for EM.
double glitch_depth(GlitchKind kind, double amplitude);

struct CampaignSpec {
    std::string device;
    GlitchParams params;
    std::uint64_t trials = 1;
    std::uint64_t seed = 0;
};

struct TrialRecord {
    std::uint64_t index = 0;
    std::uint64_t seed = 0;
    std::uint64_t reads = 0;
    std::uint64_t corrupt = 0; // bytes read back differing from the stored image
    std::uint64_t resets = 0;
    bool operator==(const TrialRecord&) const = default;
};

struct CampaignResult {
    std::uint64_t corrupt_count = 0;
    std::uint64_t reset_count = 0;
    std::vector<TrialRecord> trials;
    Outcome outcome;
};

// Returns a fresh device for trial `index`.
using DeviceFactory = std::function<device::Device(std::uint64_t index)>;

// One trial: JTAG read of every readable region with the stimulus sampled per byte read.
TrialRecord run_trial(device::Device dev, const Outcome& outcome, std::uint64_t index, std::uint64_t seed);

// Trials in parallel (OpenMP); `jobs` = 0 uses the runtime default. Results do not depend on
// `jobs`. Throws Error when trials == 0.
CampaignResult run_campaign(const CampaignSpec& spec, const CalibrationTable& cal, const DeviceFactory& factory,
                            int jobs = 0);
// Sequential reference implementation of run_campaign.
CampaignResult run_campaign_serial(const CampaignSpec& spec, const CalibrationTable& cal,
                                   const DeviceFactory& factory);

// ---------------------------------------------------------------------------
// Laser

enum class FaultClass : std::uint8_t { None, JtagUpset, UfmCorrupt, FuseDisableVp, FuseDisableJtagSecure };
std::string_view fault_class_name(FaultClass c);
char fault_class_glyph(FaultClass c);

struct FloorRect {
    std::string label;
    double x0, y0, x1, y1; // inclusive bounds, um
    std::vector<FaultClass> classes;
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct Floorplan {
    double width = 4300.0;
    double height = 4400.0;
    std::vector<FloorRect> rects;

    // JTAG logic, UFM data path and the flash array of a 10M08 die.
    static Floorplan default_max10();
    std::vector<FaultClass> classes_at(double x, double y) const;
    const FloorRect* find(std::string_view label) const;
};

struct TimingModel {
    double min_pulse_us = 15.0;
    double data_window_us = 0.8;

    // A pulse [start, start + length] relative to the TCK edge at 0.
    bool effective(double start_us, double length_us) const;
};

struct LaserPulse {
    double power_mw = 0.0;
    double length_us = 0.0;
    double start_us = 0.0; // relative to the TCK rising edge; negative is before
};

struct Grid {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0, step = 1;
};

struct GridMap {
    double x0 = 0, y0 = 0, step = 1;
    std::size_t nx = 0, ny = 0;
    std::vector<FaultClass> cells; // row-major, y outer

    FaultClass at(std::size_t ix, std::size_t iy) const { return cells[iy * nx + ix]; }
    double x(std::size_t ix) const { return x0 + step * static_cast<double>(ix); }
    double y(std::size_t iy) const { return y0 + step * static_cast<double>(iy); }
    bool operator==(const GridMap&) const = default;
};

// Fault class observed on one device when the pulse hits (x, y).
FaultClass laser_probe(device::Device dev, const Floorplan& plan, double x, double y, const LaserPulse& pulse,
                       const TimingModel& timing = {});

// Throws Error when the grid leaves the die or step <= 0.
GridMap laser_scan(const Grid& grid, const LaserPulse& pulse, const DeviceFactory& factory, const Floorplan& plan,
                   const TimingModel& timing = {}, int jobs = 0);
GridMap laser_scan_serial(const Grid& grid, const LaserPulse& pulse, const DeviceFactory& factory,
                          const Floorplan& plan, const TimingModel& timing = {});

enum class SweepKind : std::uint8_t {
    Overshoot,  // x: laser on after the edge (us), y: laser on before the edge (us)
    Undershoot, // x: gap between laser off and the edge (us), y: pulse length (us)
};

struct Axis {
    double start = 0.0;
    double step = 1.0;
    std::size_t count = 0;
    double at(std::size_t i) const { return start + step * static_cast<double>(i); }
    bool operator==(const Axis&) const = default;
};

struct TimingMap {
    SweepKind kind = SweepKind::Overshoot;
    Axis x, y;
    std::vector<bool> effective; // row-major, y outer
    bool at(std::size_t ix, std::size_t iy) const { return effective[iy * x.count + ix]; }
    bool operator==(const TimingMap&) const = default;
};

// Pulse for a sweep cell.
LaserPulse sweep_pulse(SweepKind kind, double xv, double yv, double power_mw);

// Each cell fires at `target` on a fresh device and records whether a fault was observed.
TimingMap timing_sweep(SweepKind kind, const Axis& x, const Axis& y, double power_mw,
                       std::pair<double, double> target, const DeviceFactory& factory, const Floorplan& plan,
                       const TimingModel& timing = {}, int jobs = 0);
TimingMap timing_sweep_serial(SweepKind kind, const Axis& x, const Axis& y, double power_mw,
                              std::pair<double, double> target, const DeviceFactory& factory,
                              const Floorplan& plan, const TimingModel& timing = {});

// Portable graymap (binary P5), one pixel per cell, row 0 at the top.
std::string grid_to_pgm(const GridMap& map);
std::string grid_to_text(const GridMap& map);
std::string timing_to_pgm(const TimingMap& map);
std::string timing_to_text(const TimingMap& map);

} // namespace maxsec::fault
