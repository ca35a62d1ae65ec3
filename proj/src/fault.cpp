#include "maxsec/fault.hpp"

#include "maxsec/errors.hpp"
#include "maxsec/scanner.hpp"
#include "text_util.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <random>

namespace maxsec::fault {

std::string_view glitch_kind_name(GlitchKind k)
{
    switch (k) {
    case GlitchKind::PowerGlitch: return "power";
    case GlitchKind::EmPulse: return "em";
    case GlitchKind::Laser: return "laser";
    }
    return "?";
}

std::optional<GlitchKind> parse_glitch_kind(std::string_view s)
{
    for (GlitchKind k : {GlitchKind::PowerGlitch, GlitchKind::EmPulse, GlitchKind::Laser})
        if (glitch_kind_name(k) == s)
            return k;
    return std::nullopt;
}

double glitch_depth(GlitchKind kind, double amplitude)
{
    return kind == GlitchKind::PowerGlitch ? -amplitude : amplitude;
}

namespace {

constexpr std::string_view kBuiltinCalibration = R"(# Corrupted reads observed per full-flash JTAG read.
# device <name> profile=<profile> supply=<single|dual> nominal_v=<V> reads_per_trial=<bytes>
# knee <device> <kind> <amplitude>: deepest amplitude before resets dominate
# point <device> <kind> <amplitude> <width> <errors>
# power: amplitude V, width us. em: amplitude V, width ns.

device 10M16SCE144 profile=10m16 supply=single nominal_v=3.0 reads_per_trial=567296
device 10M16DAF256 profile=10m16 supply=dual nominal_v=1.2 reads_per_trial=567296

knee 10M16SCE144 power 1.4
point 10M16SCE144 power 1.5 5 9
point 10M16SCE144 power 1.45 4 1706
point 10M16SCE144 power 1.4 4 1860
point 10M16SCE144 power 1.3 3.5 17

knee 10M16DAF256 power 0.3
point 10M16DAF256 power 0.6 1.2 241
point 10M16DAF256 power 0.4 0.7 650
point 10M16DAF256 power 0.3 0.5 13491
point 10M16DAF256 power 0.2 0.4 9954

knee 10M16SCE144 em 290
point 10M16SCE144 em 190 27 26
point 10M16SCE144 em 220 30 80
point 10M16SCE144 em 260 35 184
point 10M16SCE144 em 290 40 352

# The first two counts repeat the dual-supply power rows exactly.
knee 10M16DAF256 em 200
point 10M16DAF256 em 170 31 241
point 10M16DAF256 em 200 34 650
point 10M16DAF256 em 240 30 191
point 10M16DAF256 em 285 30 254
)";

double number(std::string_view s, std::size_t line)
{
    auto v = detail::parse_double(s);
    if (!v || !std::isfinite(*v))
        throw ParseError(line, "expected a number, got '" + std::string(s) + "'");
    return *v;
}

GlitchKind kind_field(std::string_view s, std::size_t line)
{
    auto k = parse_glitch_kind(s);
    if (!k)
        throw ParseError(line, "unknown glitch kind '" + std::string(s) + "'");
    return *k;
}

std::uint64_t readable_bytes(const DeviceProfile& p)
{
    std::uint64_t n = 0;
    for (const auto& r : p.regions.regions())
        if (r.access != AccessClass::SystemArea)
            n += r.size();
    return n;
}

std::string num(double v)
{
    return fmt::format("{}", v);
}

} // namespace

CalibrationTable CalibrationTable::parse(std::string_view text)
{
    CalibrationTable t;
    const auto lines = detail::split_lines(text);
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::size_t line_no = n + 1;
        std::string_view line = detail::trim(lines[n]);
        if (line.empty() || line.front() == '#')
            continue;
        const auto tok = detail::split_ws(line);
        if (tok[0] == "device") {
            if (tok.size() < 2)
                throw ParseError(line_no, "device needs a name");
            CalibratedDevice d;
            d.name = std::string(tok[1]);
            for (std::size_t i = 2; i < tok.size(); ++i) {
                const auto eq = tok[i].find('=');
                if (eq == std::string_view::npos)
                    throw ParseError(line_no, "expected key=value, got '" + std::string(tok[i]) + "'");
                const auto key = tok[i].substr(0, eq);
                const auto value = tok[i].substr(eq + 1);
                if (key == "profile") {
                    d.profile = std::string(value);
                } else if (key == "supply") {
                    if (value != "single" && value != "dual")
                        throw ParseError(line_no, "supply must be single or dual");
                    d.supply = std::string(value);
                } else if (key == "nominal_v") {
                    d.nominal_v = number(value, line_no);
                } else if (key == "reads_per_trial") {
                    auto v = detail::parse_uint(value);
                    if (!v || *v == 0)
                        throw ParseError(line_no, "reads_per_trial must be a positive integer");
                    d.reads_per_trial = *v;
                } else {
                    throw ParseError(line_no, "unknown device key '" + std::string(key) + "'");
                }
            }
            if (d.profile.empty())
                throw ParseError(line_no, "device " + d.name + " has no profile");
            if (d.reads_per_trial == 0) {
                auto p = builtin_profile(d.profile);
                if (!p)
                    throw ParseError(line_no, "reads_per_trial required for profile " + d.profile);
                d.reads_per_trial = readable_bytes(*p);
            }
            if (t.device(d.name))
                throw ParseError(line_no, "duplicate device " + d.name);
            t.devices_.push_back(std::move(d));
        } else if (tok[0] == "knee") {
            if (tok.size() != 4)
                throw ParseError(line_no, "knee <device> <kind> <amplitude>");
            t.knees_.push_back({std::string(tok[1]), kind_field(tok[2], line_no), number(tok[3], line_no)});
        } else if (tok[0] == "point") {
            if (tok.size() != 6)
                throw ParseError(line_no, "point <device> <kind> <amplitude> <width> <errors>");
            CalibrationRow r;
            r.device = std::string(tok[1]);
            r.kind = kind_field(tok[2], line_no);
            r.amplitude = number(tok[3], line_no);
            r.width = number(tok[4], line_no);
            auto e = detail::parse_uint(tok[5]);
            if (!e)
                throw ParseError(line_no, "error count must be a non-negative integer");
            r.errors = *e;
            if (r.amplitude <= 0 || r.width <= 0)
                throw ParseError(line_no, "amplitude and width must be positive");
            if (!t.device(r.device))
                throw ParseError(line_no, "point for undeclared device " + r.device);
            for (const auto& o : t.rows_)
                if (o.device == r.device && o.kind == r.kind && o.amplitude == r.amplitude)
                    throw ParseError(line_no, "duplicate amplitude for " + r.device);
            t.rows_.push_back(std::move(r));
        } else {
            throw ParseError(line_no, "unknown directive '" + std::string(tok[0]) + "'");
        }
    }
    for (const auto& k : t.knees_)
        if (t.rows_for(k.device, k.kind).empty())
            throw ParseError(lines.size(), "knee without points for " + k.device);
    return t;
}

std::string CalibrationTable::format() const
{
    std::string s;
    for (const auto& d : devices_)
        s += fmt::format("device {} profile={} supply={} nominal_v={} reads_per_trial={}\n", d.name, d.profile,
                         d.supply, num(d.nominal_v), d.reads_per_trial);
    for (const auto& d : devices_) {
        for (GlitchKind k : {GlitchKind::PowerGlitch, GlitchKind::EmPulse, GlitchKind::Laser}) {
            const auto rows = rows_for(d.name, k);
            if (rows.empty())
                continue;
            s += "\n";
            if (auto kn = knee(d.name, k))
                s += fmt::format("knee {} {} {}\n", d.name, glitch_kind_name(k), num(*kn));
            for (const auto& r : rows)
                s += fmt::format("point {} {} {} {} {}\n", r.device, glitch_kind_name(r.kind), num(r.amplitude),
                                 num(r.width), r.errors);
        }
    }
    return s;
}

const CalibrationTable& CalibrationTable::builtin()
{
    static const CalibrationTable table = parse(kBuiltinCalibration);
    return table;
}

const CalibratedDevice* CalibrationTable::device(std::string_view name) const
{
    for (const auto& d : devices_)
        if (d.name == name)
            return &d;
    return nullptr;
}

std::vector<CalibrationRow> CalibrationTable::rows_for(std::string_view device, GlitchKind kind) const
{
    std::vector<CalibrationRow> out;
    for (const auto& r : rows_)
        if (r.device == device && r.kind == kind)
            out.push_back(r);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return glitch_depth(a.kind, a.amplitude) < glitch_depth(b.kind, b.amplitude);
    });
    return out;
}

std::optional<double> CalibrationTable::knee(std::string_view device, GlitchKind kind) const
{
    for (const auto& k : knees_)
        if (k.device == device && k.kind == kind)
            return k.amplitude;
    return std::nullopt;
}

namespace {

double interpolate_rate(double ra, double rb, double t)
{
    if (t <= 0.0)
        return ra;
    if (t >= 1.0)
        return rb;
    if (ra <= 0.0 || rb <= 0.0)
        return ra + (rb - ra) * t;
    return std::exp(std::log(ra) + (std::log(rb) - std::log(ra)) * t);
}

} // namespace

Outcome CalibrationTable::response(std::string_view device_name, const GlitchParams& params) const
{
    const CalibratedDevice* dev = device(device_name);
    if (!dev)
        throw Error("no calibration for device '" + std::string(device_name) + "'");
    const auto rows = rows_for(device_name, params.kind);
    if (rows.empty())
        throw Error(fmt::format("no {} calibration for {}", glitch_kind_name(params.kind), device_name));
    if (!(params.amplitude > 0) || !(params.width > 0))
        throw Error("glitch amplitude and width must be positive");

    const double n = static_cast<double>(dev->reads_per_trial);
    auto rate = [n](const CalibrationRow& r) { return static_cast<double>(r.errors) / n; };
    const double d = glitch_depth(params.kind, params.amplitude);
    const double d_first = glitch_depth(params.kind, rows.front().amplitude);
    const double d_last = glitch_depth(params.kind, rows.back().amplitude);

    Outcome o;
    double w_cal = 0.0;
    if (d <= d_first) {
        o.p_corrupt = rate(rows.front());
        w_cal = rows.front().width;
    } else if (d >= d_last) {
        o.p_corrupt = rate(rows.back());
        w_cal = rows.back().width;
    } else {
        std::size_t i = 0;
        while (glitch_depth(params.kind, rows[i + 1].amplitude) < d)
            ++i;
        const auto& a = rows[i];
        const auto& b = rows[i + 1];
        const double da = glitch_depth(params.kind, a.amplitude);
        const double db = glitch_depth(params.kind, b.amplitude);
        const double t = (d - da) / (db - da);
        o.p_corrupt = interpolate_rate(rate(a), rate(b), t);
        w_cal = a.width + (b.width - a.width) * t;
    }
    // Pulses narrower than the calibrated width at this depth scale the rate down.
    o.p_corrupt *= std::min(1.0, params.width / w_cal);

    const double d_knee = glitch_depth(params.kind, knee(device_name, params.kind).value_or(rows.back().amplitude));
    if (d > d_knee) {
        double span = d_last - d_knee;
        if (span <= 0.0)
            span = (d_last - d_first) / 4.0;
        o.p_reset = span > 0.0 ? std::clamp((d - d_knee) / (2.0 * span), 0.0, 1.0) : 1.0;
        if (d > d_last)
            o.p_corrupt *= 1.0 - o.p_reset;
    }
    o.p_corrupt = std::min(o.p_corrupt, 1.0 - o.p_reset);
    return o;
}

// ---------------------------------------------------------------------------
// Campaigns

namespace {

double uniform01(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

class GlitchStimulus final : public device::ReadStimulus {
public:
    GlitchStimulus(const Outcome& o, std::uint64_t seed) : o_(o), rng_(seed) {}

    std::optional<device::FaultEffect> before_read(std::uint32_t) override
    {
        const double u = uniform01(rng_);
        if (u < o_.p_corrupt)
            return device::ReadCorrupt{static_cast<std::uint8_t>(1 + rng_() % 255)};
        if (u < o_.p_corrupt + o_.p_reset)
            return device::ResetFault{};
        return std::nullopt;
    }

private:
    Outcome o_;
    std::mt19937_64 rng_;
};

int thread_count(int jobs)
{
    return jobs > 0 ? jobs : omp_get_max_threads();
}

CampaignResult summarize(std::vector<TrialRecord> trials, const Outcome& o)
{
    CampaignResult r;
    r.outcome = o;
    for (const auto& t : trials) {
        r.corrupt_count += t.corrupt;
        r.reset_count += t.resets;
    }
    r.trials = std::move(trials);
    return r;
}

// Runs body(i) for i in [0, n) on `jobs` threads and rethrows the first exception.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& body)
{
    std::exception_ptr error;
    std::mutex m;
#pragma omp parallel for schedule(dynamic) num_threads(thread_count(jobs))
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            std::lock_guard lock(m);
            if (!error)
                error = std::current_exception();
        }
    }
    if (error)
        std::rethrow_exception(error);
}

} // namespace

TrialRecord run_trial(device::Device dev, const Outcome& outcome, std::uint64_t index, std::uint64_t seed)
{
    TrialRecord rec;
    rec.index = index;
    rec.seed = seed;
    GlitchStimulus stim(outcome, seed);
    const DeviceProfile profile = dev.profile();
    device::SimTransport sim(std::move(dev));
    sim.device().set_read_stimulus(&stim);
    const auto& stored = sim.device().flash().bytes;

    tap::reset(sim);
    scan::FlashPort port(sim, profile);
    constexpr std::size_t kWordsPerCall = 4096;
    for (const auto& region : profile.regions.regions()) {
        if (region.access == AccessClass::SystemArea)
            continue;
        const std::size_t words = region.size() / 4;
        for (std::size_t w = 0; w < words; w += kWordsPerCall) {
            const std::size_t n = std::min(kWordsPerCall, words - w);
            const std::uint32_t addr = region.start + static_cast<std::uint32_t>(w * 4);
            const auto got = port.read(addr, n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t b = 0; b < 4; ++b) {
                    const std::size_t a = addr + i * 4 + b;
                    const auto byte = static_cast<std::uint8_t>(got[i].data >> (8 * b));
                    if (!got[i].valid || byte != stored[a])
                        ++rec.corrupt;
                }
            }
            rec.reads += n * 4;
        }
    }
    sim.device().set_read_stimulus(nullptr);
    rec.resets = sim.device().reset_count();
    return rec;
}

CampaignResult run_campaign(const CampaignSpec& spec, const CalibrationTable& cal, const DeviceFactory& factory,
                            int jobs)
{
    if (spec.trials == 0)
        throw Error("campaign needs at least one trial");
    const Outcome o = cal.response(spec.device, spec.params);
    std::vector<TrialRecord> trials(spec.trials);
    parallel_for(trials.size(), jobs,
                 [&](std::size_t i) { trials[i] = run_trial(factory(i), o, i, spec.seed + i); });
    return summarize(std::move(trials), o);
}

CampaignResult run_campaign_serial(const CampaignSpec& spec, const CalibrationTable& cal,
                                   const DeviceFactory& factory)
{
    if (spec.trials == 0)
        throw Error("campaign needs at least one trial");
    const Outcome o = cal.response(spec.device, spec.params);
    std::vector<TrialRecord> trials;
    trials.reserve(spec.trials);
    for (std::uint64_t i = 0; i < spec.trials; ++i)
        trials.push_back(run_trial(factory(i), o, i, spec.seed + i));
    return summarize(std::move(trials), o);
}

// ---------------------------------------------------------------------------
// Laser

std::string_view fault_class_name(FaultClass c)
{
    switch (c) {
    case FaultClass::None: return "none";
    case FaultClass::JtagUpset: return "jtag-upset";
    case FaultClass::UfmCorrupt: return "ufm-corrupt";
    case FaultClass::FuseDisableVp: return "fuse-disable-vp";
    case FaultClass::FuseDisableJtagSecure: return "fuse-disable-jtag-secure";
    }
    return "?";
}

char fault_class_glyph(FaultClass c)
{
    switch (c) {
    case FaultClass::None: return '.';
    case FaultClass::JtagUpset: return 'J';
    case FaultClass::UfmCorrupt: return 'U';
    case FaultClass::FuseDisableVp: return 'V';
    case FaultClass::FuseDisableJtagSecure: return 'S';
    }
    return '?';
}

Floorplan Floorplan::default_max10()
{
    Floorplan p;
    p.rects.push_back({"jtag", 300, 3300, 1300, 4100, {FaultClass::JtagUpset}});
    p.rects.push_back({"ufm", 1700, 900, 2700, 1700, {FaultClass::UfmCorrupt}});
    p.rects.push_back(
        {"flash", 1800, 2000, 2800, 3000, {FaultClass::FuseDisableVp, FaultClass::FuseDisableJtagSecure}});
    return p;
}

std::vector<FaultClass> Floorplan::classes_at(double x, double y) const
{
    std::vector<FaultClass> out;
    for (const auto& r : rects)
        if (r.contains(x, y))
            for (FaultClass c : r.classes)
                if (std::find(out.begin(), out.end(), c) == out.end())
                    out.push_back(c);
    return out;
}

const FloorRect* Floorplan::find(std::string_view label) const
{
    for (const auto& r : rects)
        if (r.label == label)
            return &r;
    return nullptr;
}

bool TimingModel::effective(double start_us, double length_us) const
{
    if (!(length_us > 0) || start_us >= 0.0)
        return false;
    const double end = start_us + length_us;
    const double lit_before_edge = std::min(end, 0.0) - start_us;
    if (lit_before_edge < min_pulse_us)
        return false;
    return end >= 0.0 || -end < data_window_us;
}

namespace {

struct ProbeState {
    std::uint32_t idcode = 0;
    std::optional<std::uint32_t> ufm_word;
    bool cfm_readable = false;
};

bool contains(const std::vector<FaultClass>& v, FaultClass c)
{
    return std::find(v.begin(), v.end(), c) != v.end();
}

std::uint32_t read_idcode(device::SimTransport& sim, const DeviceProfile& p, bool upset)
{
    const Instruction* id = p.find_action(IrAction::Idcode);
    if (!id)
        throw UnsupportedProfile("profile " + p.name + " has no IDCODE instruction");
    tap::shift_ir(sim, BitVector::from_uint(id->opcode, p.ir_width));
    // Lands in the middle of the 32 shift clocks.
    if (upset)
        sim.schedule_fault(3 + 16, device::JtagUpset{});
    const auto v = static_cast<std::uint32_t>(tap::shift_dr(sim, BitVector(32)).to_uint());
    tap::reset(sim);
    return v;
}

ProbeState observe(device::SimTransport& sim, const DeviceProfile& p, bool jtag_upset, bool ufm_corrupt)
{
    ProbeState s;
    s.idcode = read_idcode(sim, p, jtag_upset);
    scan::FlashPort port(sim, p);
    if (const Region* ufm = p.regions.find(AccessClass::UserFlash)) {
        if (ufm_corrupt)
            sim.device().apply_fault(device::ReadCorrupt{0x5A});
        const auto w = port.read(ufm->start, 1);
        if (w[0].valid)
            s.ufm_word = w[0].data;
    }
    if (const Region* cfm = p.regions.find(AccessClass::ConfigFlash))
        s.cfm_readable = port.read(cfm->start, 1)[0].valid;
    tap::reset(sim);
    return s;
}

} // namespace

FaultClass laser_probe(device::Device dev, const Floorplan& plan, double x, double y, const LaserPulse& pulse,
                       const TimingModel& timing)
{
    if (!(pulse.power_mw > 0) || !timing.effective(pulse.start_us, pulse.length_us))
        return FaultClass::None;
    const auto classes = plan.classes_at(x, y);
    if (classes.empty())
        return FaultClass::None;

    const DeviceProfile profile = dev.profile();
    device::SimTransport sim(std::move(dev));
    tap::reset(sim);
    const ProbeState before = observe(sim, profile, false, false);
    const bool locked_before = sim.device().effective_fuses().jtag_secure;

    if (contains(classes, FaultClass::FuseDisableVp))
        sim.device().apply_fault(device::FuseFetchCorrupt{device::Fuse::VerifyProtect});
    if (contains(classes, FaultClass::FuseDisableJtagSecure))
        sim.device().apply_fault(device::FuseFetchCorrupt{device::Fuse::JtagSecure});
    const ProbeState after = observe(sim, profile, contains(classes, FaultClass::JtagUpset),
                                     contains(classes, FaultClass::UfmCorrupt));

    if (after.idcode != before.idcode)
        return FaultClass::JtagUpset;
    if (!before.cfm_readable && after.cfm_readable)
        return locked_before ? FaultClass::FuseDisableJtagSecure : FaultClass::FuseDisableVp;
    if (before.ufm_word && after.ufm_word && *before.ufm_word != *after.ufm_word)
        return FaultClass::UfmCorrupt;
    return FaultClass::None;
}

namespace {

GridMap empty_grid(const Grid& g, const Floorplan& plan)
{
    if (!(g.step > 0))
        throw Error("grid step must be positive");
    if (g.x1 < g.x0 || g.y1 < g.y0)
        throw Error("grid bounds are reversed");
    if (g.x0 < 0 || g.y0 < 0 || g.x1 > plan.width || g.y1 > plan.height)
        throw Error(fmt::format("grid exceeds the die ({} x {} um)", plan.width, plan.height));
    GridMap m;
    m.x0 = g.x0;
    m.y0 = g.y0;
    m.step = g.step;
    m.nx = static_cast<std::size_t>(std::floor((g.x1 - g.x0) / g.step + 1e-9)) + 1;
    m.ny = static_cast<std::size_t>(std::floor((g.y1 - g.y0) / g.step + 1e-9)) + 1;
    m.cells.assign(m.nx * m.ny, FaultClass::None);
    return m;
}

FaultClass grid_cell(const GridMap& m, std::size_t i, const LaserPulse& pulse, const DeviceFactory& factory,
                     const Floorplan& plan, const TimingModel& timing)
{
    const double x = m.x(i % m.nx);
    const double y = m.y(i / m.nx);
    if (!(pulse.power_mw > 0) || !timing.effective(pulse.start_us, pulse.length_us) || plan.classes_at(x, y).empty())
        return FaultClass::None;
    return laser_probe(factory(i), plan, x, y, pulse, timing);
}

TimingMap empty_timing(SweepKind kind, const Axis& x, const Axis& y)
{
    if (x.count && !(x.step > 0))
        throw Error("sweep x step must be positive");
    if (y.count && !(y.step > 0))
        throw Error("sweep y step must be positive");
    TimingMap m;
    m.kind = kind;
    m.x = x;
    m.y = y;
    m.effective.assign(x.count * y.count, false);
    return m;
}

bool timing_cell(const TimingMap& m, std::size_t i, double power_mw, std::pair<double, double> target,
                 const DeviceFactory& factory, const Floorplan& plan, const TimingModel& timing)
{
    const LaserPulse pulse = sweep_pulse(m.kind, m.x.at(i % m.x.count), m.y.at(i / m.x.count), power_mw);
    if (!(pulse.power_mw > 0) || !timing.effective(pulse.start_us, pulse.length_us))
        return false;
    return laser_probe(factory(i), plan, target.first, target.second, pulse, timing) != FaultClass::None;
}

} // namespace

GridMap laser_scan(const Grid& grid, const LaserPulse& pulse, const DeviceFactory& factory, const Floorplan& plan,
                   const TimingModel& timing, int jobs)
{
    GridMap m = empty_grid(grid, plan);
    parallel_for(m.cells.size(), jobs,
                 [&](std::size_t i) { m.cells[i] = grid_cell(m, i, pulse, factory, plan, timing); });
    return m;
}

GridMap laser_scan_serial(const Grid& grid, const LaserPulse& pulse, const DeviceFactory& factory,
                          const Floorplan& plan, const TimingModel& timing)
{
    GridMap m = empty_grid(grid, plan);
    for (std::size_t i = 0; i < m.cells.size(); ++i)
        m.cells[i] = grid_cell(m, i, pulse, factory, plan, timing);
    return m;
}

LaserPulse sweep_pulse(SweepKind kind, double xv, double yv, double power_mw)
{
    if (kind == SweepKind::Overshoot)
        return {power_mw, xv + yv, -yv};
    return {power_mw, yv, -(xv + yv)};
}

TimingMap timing_sweep(SweepKind kind, const Axis& x, const Axis& y, double power_mw,
                       std::pair<double, double> target, const DeviceFactory& factory, const Floorplan& plan,
                       const TimingModel& timing, int jobs)
{
    TimingMap m = empty_timing(kind, x, y);
    // vector<bool> packs bits, so each thread writes its own byte.
    std::vector<std::uint8_t> cells(m.effective.size());
    parallel_for(cells.size(), jobs, [&](std::size_t i) {
        cells[i] = timing_cell(m, i, power_mw, target, factory, plan, timing) ? 1 : 0;
    });
    for (std::size_t i = 0; i < cells.size(); ++i)
        m.effective[i] = cells[i] != 0;
    return m;
}

TimingMap timing_sweep_serial(SweepKind kind, const Axis& x, const Axis& y, double power_mw,
                              std::pair<double, double> target, const DeviceFactory& factory,
                              const Floorplan& plan, const TimingModel& timing)
{
    TimingMap m = empty_timing(kind, x, y);
    for (std::size_t i = 0; i < m.effective.size(); ++i)
        m.effective[i] = timing_cell(m, i, power_mw, target, factory, plan, timing);
    return m;
}

namespace {

std::uint8_t gray(FaultClass c)
{
    switch (c) {
    case FaultClass::None: return 0;
    case FaultClass::JtagUpset: return 64;
    case FaultClass::UfmCorrupt: return 128;
    case FaultClass::FuseDisableVp: return 192;
    case FaultClass::FuseDisableJtagSecure: return 255;
    }
    return 0;
}

std::string pgm_header(std::size_t w, std::size_t h)
{
    return fmt::format("P5\n{} {}\n255\n", w, h);
}

} // namespace

std::string grid_to_pgm(const GridMap& map)
{
    std::string s = pgm_header(map.nx, map.ny);
    for (FaultClass c : map.cells)
        s += static_cast<char>(gray(c));
    return s;
}

std::string grid_to_text(const GridMap& map)
{
    std::string s = fmt::format("# x0={} y0={} step={} nx={} ny={}\n", map.x0, map.y0, map.step, map.nx, map.ny);
    s += "# . none  J jtag-upset  U ufm-corrupt  V fuse-disable-vp  S fuse-disable-jtag-secure\n";
    for (std::size_t iy = 0; iy < map.ny; ++iy) {
        for (std::size_t ix = 0; ix < map.nx; ++ix)
            s += fault_class_glyph(map.at(ix, iy));
        s += '\n';
    }
    return s;
}

std::string timing_to_pgm(const TimingMap& map)
{
    std::string s = pgm_header(map.x.count, map.y.count);
    for (bool e : map.effective)
        s += static_cast<char>(e ? 255 : 0);
    return s;
}

std::string timing_to_text(const TimingMap& map)
{
    const bool over = map.kind == SweepKind::Overshoot;
    std::string s = fmt::format("# {} x={} from {} step {} ({}) y={} from {} step {} ({})\n",
                                over ? "overshoot" : "undershoot", over ? "after-edge-us" : "gap-us", map.x.start,
                                map.x.step, map.x.count, over ? "before-edge-us" : "length-us", map.y.start,
                                map.y.step, map.y.count);
    for (std::size_t iy = 0; iy < map.y.count; ++iy) {
        for (std::size_t ix = 0; ix < map.x.count; ++ix)
            s += map.at(ix, iy) ? '#' : '.';
        s += '\n';
    }
    return s;
}

} // namespace maxsec::fault
