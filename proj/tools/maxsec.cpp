#include "maxsec/bitstream.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/fault.hpp"
#include "maxsec/forensics.hpp"
#include "maxsec/pof.hpp"
#include "maxsec/remote.hpp"
#include "maxsec/report.hpp"
#include "maxsec/scanner.hpp"
#include "maxsec/stapl.hpp"
#include "maxsec/target.hpp"
#include "maxsec/trace.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>

using namespace maxsec;
using report::Json;

namespace {

constexpr int kExitFindings = 1;
constexpr int kExitUsage = 2;
constexpr int kExitFailure = 3;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Common {
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string format;

    std::string fmt() const
    {
        if (!format.empty())
            return format;
        if (out.ends_with(".json"))
            return "json";
        if (out.ends_with(".csv"))
            return "csv";
        return "text";
    }

    // Randomized commands: machine formats need --seed; text mode draws one and echoes it.
    std::uint64_t require_seed(std::string& header) const
    {
        if (seed)
            return *seed;
        if (fmt() != "text")
            throw UsageError("--seed is required with --format " + fmt());
        std::random_device rd;
        const std::uint64_t s = (std::uint64_t{rd()} << 32) | rd();
        header = fmt::format("# seed {}\n", s);
        return s;
    }

    void write(const std::string& data) const
    {
        if (out.empty() || out == "-") {
            std::cout << data;
            std::cout.flush();
            return;
        }
        std::ofstream f(out, std::ios::binary);
        if (!f)
            throw Error("cannot write " + out);
        f << data;
    }
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--seed", c.seed, "Seed for randomized steps");
    app->add_option("--out", c.out, "Output file (default stdout)");
    app->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"json", "text", "csv"}));
}

std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot read " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::string& path)
{
    auto b = read_file(path);
    return {b.begin(), b.end()};
}

TargetSpec target_of(const std::string& text)
{
    try {
        return TargetSpec::parse(text);
    } catch (const FormatError& e) {
        throw UsageError(std::string("bad --target: ") + e.what());
    }
}

std::uint64_t parse_number(const std::string& s, const char* what)
{
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(s, &pos, 0);
        if (pos != s.size())
            throw std::invalid_argument(s);
        return v;
    } catch (const std::logic_error&) {
        throw UsageError(fmt::format("bad {} '{}'", what, s));
    }
}

std::string csv_row(std::initializer_list<std::string> cells)
{
    std::string s;
    for (const auto& c : cells)
        s += (s.empty() ? "" : ",") + c;
    return s + "\n";
}

std::string null_or(const Json& j)
{
    return j.is_null() ? "" : (j.is_string() ? j.get<std::string>() : j.dump());
}

// ---------------------------------------------------------------------------
// scan

struct ScanArgs {
    Common c;
    std::string target = "sim:10m08";
    std::string remote_profile = "10m08";
};

void add_target(CLI::App* app, ScanArgs& a)
{
    add_common(app, a.c);
    app->add_option("--target", a.target, "sim:<profile>[?...] or remote:<host:port>");
    app->add_option("--profile", a.remote_profile, "Profile assumed for remote targets");
}

int scan_ir(const ScanArgs& a, const std::string& known_path, const std::string& opcodes, std::size_t max_bits)
{
    OpenTarget t = open_target(target_of(a.target), a.remote_profile);
    std::vector<KnownCommand> known;
    if (!known_path.empty())
        known = parse_known_commands(read_text(known_path));
    else
        known = parse_known_commands(format_known_commands(t.profile));
    scan::SurveyOptions opt;
    opt.max_dr_bits = max_bits;
    if (!opcodes.empty()) {
        std::stringstream ss(opcodes);
        for (std::string tok; std::getline(ss, tok, ',');)
            opt.opcodes.push_back(static_cast<std::uint32_t>(parse_number(tok, "opcode")));
    }
    const auto entries = scan::enumerate_ir(*t.transport, t.profile.ir_width, known, opt);
    const Json j = report::survey(entries, t.profile.ir_width);
    const std::string f = a.c.fmt();
    if (f == "json") {
        a.c.write(report::dump(j));
    } else if (f == "csv") {
        std::string s = csv_row({"opcode", "dr_length", "class", "name"});
        for (const auto& e : j["entries"])
            s += csv_row({e["opcode"].get<std::string>(), null_or(e["dr_length"]), e["class"].get<std::string>(),
                          e["name"].get<std::string>()});
        a.c.write(s);
    } else {
        std::string s;
        for (const auto& e : j["entries"])
            if (e["class"] != "bypass_like")
                s += fmt::format("{}  {:>5}  {:<12}  {}\n", e["opcode"].get<std::string>(),
                                 e["dr_length"].is_null() ? std::string("?") : e["dr_length"].dump(),
                                 e["class"].get<std::string>(), e["name"].get<std::string>());
        s += fmt::format("{} undocumented:", j["undocumented"].size());
        for (const auto& o : j["undocumented"])
            s += " " + o.get<std::string>();
        a.c.write(s + "\n");
    }
    return 0;
}

int scan_dr(const ScanArgs& a, const std::string& opcode, std::size_t max_bits)
{
    OpenTarget t = open_target(target_of(a.target), a.remote_profile);
    const auto op = static_cast<std::uint32_t>(parse_number(opcode, "opcode"));
    tap::reset(*t.transport);
    const auto len = scan::measure_dr_length(*t.transport, t.profile.ir_width, op, max_bits);
    const int digits = static_cast<int>((t.profile.ir_width + 3) / 4);
    const Json j = {{"opcode", report::hex(op, digits)}, {"dr_length", len ? Json(*len) : Json(nullptr)}};
    const std::string f = a.c.fmt();
    if (f == "json")
        a.c.write(report::dump(j));
    else if (f == "csv")
        a.c.write(csv_row({"opcode", "dr_length"}) + csv_row({j["opcode"], null_or(j["dr_length"])}));
    else
        a.c.write(fmt::format("{} dr_length {}\n", j["opcode"].get<std::string>(),
                              len ? std::to_string(*len) : std::string("unmeasurable")));
    return 0;
}

int scan_memory(const ScanArgs& a, const scan::MapOptions& opt)
{
    OpenTarget t = open_target(target_of(a.target), a.remote_profile);
    const auto rs = scan::map_memory(*t.transport, t.profile, opt);
    const Json j = report::regions(rs);
    const std::string f = a.c.fmt();
    if (f == "json") {
        a.c.write(report::dump(j));
    } else {
        std::string s = f == "csv" ? csv_row({"start", "end", "class", "sector"}) : "";
        for (const auto& r : j["regions"])
            s += f == "csv" ? csv_row({r["start"], r["end"], r["class"], r["sector"].dump()})
                            : fmt::format("{}-{}  {:<16}  sector {}\n", r["start"].get<std::string>(),
                                          r["end"].get<std::string>(), r["class"].get<std::string>(),
                                          r["sector"].get<int>());
        a.c.write(s);
    }
    return 0;
}

int scan_fuses(const ScanArgs& a)
{
    OpenTarget t = open_target(target_of(a.target), a.remote_profile);
    const auto inf = scan::infer_fuses(*t.transport, t.profile);
    const Json j = report::fuse_inference(inf);
    const std::string f = a.c.fmt();
    if (f == "json") {
        a.c.write(report::dump(j));
    } else if (f == "csv") {
        std::string s = csv_row({"verify_protect", "encrypted_pof_only", "jtag_secure"});
        for (const auto& c : j["candidates"])
            s += csv_row({c["verify_protect"].dump(), c["encrypted_pof_only"].dump(), c["jtag_secure"].dump()});
        a.c.write(s);
    } else {
        std::string s;
        for (const auto& e : inf.evidence)
            s += "# " + e + "\n";
        for (const auto& c : inf.candidates)
            s += c.describe() + "\n";
        a.c.write(s);
    }
    return 0;
}

int scan_remanence(const ScanArgs& a, double at, const std::string& reference_path)
{
    OpenTarget t = open_target(target_of(a.target), a.remote_profile);
    std::optional<device::FlashImage> reference;
    if (!reference_path.empty())
        reference = device::FlashImage::load(reference_path, t.profile.flash_size());
    const auto r = scan::recover_remanent(*t.transport, t.profile, at, reference ? &*reference : nullptr);
    Json j = report::remanence(r);
    j["terminate_at"] = at;
    const std::string f = a.c.fmt();
    if (f == "json")
        a.c.write(report::dump(j));
    else if (f == "csv")
        a.c.write(csv_row({"terminate_at", "programmed_bits", "recovered_bits", "fraction"})
                  + csv_row({j["terminate_at"].dump(), j["programmed_bits"].dump(), j["recovered_bits"].dump(),
                             j["fraction"].dump()}));
    else
        a.c.write(fmt::format("erase stopped at {}: recovered {} of {} programmed CFM bits ({:.4f})\n", at,
                              r.recovered_bits, r.programmed_bits, r.fraction));
    return 0;
}

// ---------------------------------------------------------------------------
// pof / sof / map

int pof_detect(const Common& c, const std::string& path, std::uint32_t cfm_base)
{
    const auto img = read_file(path);
    const auto r = forensics::detect_fuses(img, cfm_base);
    const Json j = report::fuse_report(r);
    const std::string f = c.fmt();
    if (f == "json") {
        c.write(report::dump(j));
    } else if (f == "csv") {
        std::string s = csv_row({"name", "marker_offset", "ctrl_offset", "tail_offset"});
        for (const auto& d : j["fuses"])
            s += csv_row({d["name"], d["marker_offset"], d["ctrl_offset"], d["tail_offset"]});
        c.write(s);
    } else {
        std::string s;
        for (const auto& d : r.fuses)
            s += fmt::format("{} @ {}\n", d.name, report::hex(d.marker_offset, 4));
        for (const auto& an : r.anomalies)
            s += fmt::format("anomaly {} @ {}: {}\n", an.name, report::hex(an.offset, 6), an.detail);
        if (r.key)
            s += "key " + key_hex(*r.key) + "\n";
        if (r.fuses.empty())
            s += "no fuse signatures\n";
        c.write(s);
    }
    return 0;
}

int pof_diff(const Common& c, const std::string& pa, const std::string& pb, const std::string& profile)
{
    const auto a = read_file(pa);
    const auto b = read_file(pb);
    std::optional<DeviceProfile> p;
    if (!profile.empty())
        p = load_profile(profile);
    const auto diffs = forensics::diff_images(a, b, p ? &p->regions : nullptr);
    const Json j = report::byte_diffs(diffs);
    const std::string f = c.fmt();
    if (f == "json") {
        c.write(report::dump(j));
    } else {
        std::string s = f == "csv" ? csv_row({"offset", "a", "b", "region"}) : "";
        for (const auto& d : j["diffs"])
            s += f == "csv" ? csv_row({d["offset"], d["a"], d["b"], null_or(d["region"])})
                            : fmt::format("{}  {} -> {}  {}\n", d["offset"].get<std::string>(),
                                          d["a"].get<std::string>(), d["b"].get<std::string>(), null_or(d["region"]));
        if (f == "text")
            s += fmt::format("{} differing bytes\n", diffs.size());
        c.write(s);
    }
    return diffs.empty() ? 0 : kExitFindings;
}

int pof_key(const Common& c, const std::string& path)
{
    const auto img = read_file(path);
    if (img.size() < 16)
        throw ImageTooShort(img.size(), 16);
    const crypto::AesKey field = [&] {
        crypto::AesKey k{};
        std::copy_n(img.begin() + forensics::kKeyOffset, 16, k.begin());
        return k;
    }();
    const crypto::AesKey key = forensics::unscramble_key(field);
    const Json j = {{"key_field", key_hex(field)}, {"key", key_hex(key)}, {"key_model", report::kKeyModel}};
    const std::string f = c.fmt();
    if (f == "json")
        c.write(report::dump(j));
    else if (f == "csv")
        c.write(csv_row({"key_field", "key"}) + csv_row({key_hex(field), key_hex(key)}));
    else
        c.write(fmt::format("field {}\nkey   {}\n# {}\n", key_hex(field), key_hex(key), report::kKeyModel));
    return 0;
}

int pof_synth(const Common& c, const std::string& profile_name, const std::string& fuses, const std::string& key)
{
    if (c.out.empty())
        throw UsageError("pof synth needs --out");
    const DeviceProfile p = load_profile(profile_name);
    device::FuseSet f;
    try {
        f = parse_fuse_list(fuses);
        if (!key.empty())
            f.aes_key = parse_key(key);
    } catch (const FormatError& e) {
        throw UsageError(e.what());
    }
    const auto img = device::build_image(p, f, c.seed.value_or(1));
    c.write(std::string(img.bytes.begin(), img.bytes.end()));
    return 0;
}

int sof_analyze(const Common& c, const std::string& path, const std::string& other)
{
    const auto a = read_file(path);
    Json j = report::sof(forensics::analyze_sof(a));
    std::optional<forensics::SofComparison> cmp;
    if (!other.empty()) {
        cmp = forensics::compare_sof(a, read_file(other));
        j["comparison"] = report::sof_comparison(*cmp);
    }
    const std::string f = c.fmt();
    if (f == "json") {
        c.write(report::dump(j));
    } else if (f == "csv") {
        c.write(csv_row({"unique_id", "checksum_field", "computed_checksum", "checksum_matches", "trailing_crc"})
                + csv_row({j["unique_id"], j["checksum_field"], j["computed_checksum"],
                           j["checksum_matches"].dump(), j["trailing_crc"]}));
    } else {
        std::string s = fmt::format("unique id      {}\nchecksum       {} (computed {}, {})\ntrailing crc   {}\n",
                                    j["unique_id"].get<std::string>(), j["checksum_field"].get<std::string>(),
                                    j["computed_checksum"].get<std::string>(),
                                    j["checksum_matches"].get<bool>() ? "match" : "MISMATCH",
                                    j["trailing_crc"].get<std::string>());
        if (cmp)
            s += fmt::format("compare: id {}, checksum {}, crc {}, {} body bits, {} metadata bytes\n",
                             cmp->unique_id_differs ? "differs" : "same", cmp->checksum_differs ? "differs" : "same",
                             cmp->crc_differs ? "differs" : "same", cmp->body_bit_diffs, cmp->metadata_byte_diffs);
        c.write(s);
    }
    return j["checksum_matches"].get<bool>() ? 0 : kExitFindings;
}

int map_parse(const Common& c, const std::string& path)
{
    const auto m = forensics::parse_mapping(read_text(path));
    const Json j = report::mapping(m);
    const std::string f = c.fmt();
    if (f == "json") {
        c.write(report::dump(j));
    } else {
        std::string s = f == "csv" ? csv_row({"name", "start", "end", "used_end"}) : "";
        for (const auto& r : m.ranges)
            s += f == "csv" ? csv_row({r.name, report::hex(r.start, 8), report::hex(r.end, 8),
                                       r.used_end ? report::hex(*r.used_end, 8) : ""})
                            : fmt::format("{:<8} {} {}{}\n", r.name, report::hex(r.start, 8), report::hex(r.end, 8),
                                          r.used_end ? " (" + report::hex(*r.used_end, 8) + ")" : "");
        c.write(s);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// stapl

int stapl_run(const ScanArgs& a, const std::string& path, const std::string& action, bool trace, bool optional)
{
    const auto program = stapl::parse(read_text(path));
    OpenTarget t = open_target(target_of(a.target), a.remote_profile);
    stapl::RunOptions opt;
    opt.action = action;
    opt.trace = trace;
    opt.run_optional = optional;
    const auto r = stapl::run(program, *t.transport, opt);
    const std::string f = a.c.fmt();
    if (f == "json") {
        Json lines = Json::array();
        for (const auto& l : r.trace)
            lines.push_back({{"proc", l.proc}, {"command", l.ir ? "IR" : "DR"}, {"bits", l.bits}, {"hex", l.hex}});
        Json exports = Json::object();
        for (const auto& [k, v] : r.exports)
            exports[k] = v;
        Json j = {{"exit_code", r.exit_code}, {"trace", lines}, {"printed", r.printed}, {"exports", exports},
                  {"elapsed_us", r.elapsed_us}};
        j["exit_line"] = r.exit_line ? Json(*r.exit_line) : Json(nullptr);
        a.c.write(report::dump(j));
    } else if (f == "csv") {
        std::string s = csv_row({"proc", "command", "bits", "hex"});
        for (const auto& l : r.trace)
            s += csv_row({l.proc, l.ir ? "IR" : "DR", std::to_string(l.bits), l.hex});
        a.c.write(s);
    } else {
        std::string s;
        for (const auto& l : r.trace)
            s += stapl::format_trace_line(l) + "\n";
        for (const auto& p : r.printed)
            s += p + "\n";
        s += fmt::format("exit {}\n", r.exit_code);
        a.c.write(s);
    }
    return r.exit_code == 0 ? 0 : kExitFindings;
}

int stapl_gen(const ScanArgs& a, bool plain, bool no_ufm)
{
    const TargetSpec spec = target_of(a.target);
    if (spec.kind != TargetSpec::Kind::Sim)
        throw UsageError("stapl gen needs a sim: target to take the image from");
    const device::Device dev = make_device(spec);
    stapl::JamOptions opt;
    opt.obfuscate = !plain;
    opt.include_ufm = !no_ufm;
    a.c.write(stapl::generate_jam(dev.profile(), dev.flash(), opt));
    return 0;
}

// ---------------------------------------------------------------------------
// campaign / laser / timing

fault::DeviceFactory factory_for(device::Device proto)
{
    auto shared = std::make_shared<const device::Device>(std::move(proto));
    return [shared](std::uint64_t) { return *shared; };
}

int campaign_run(const Common& c, const std::string& device_name, const std::string& kind, double amplitude,
                 double width, std::uint64_t trials, int jobs, const std::string& cal_path)
{
    std::string header;
    const std::uint64_t seed = c.require_seed(header);
    const fault::CalibrationTable cal =
        cal_path.empty() ? fault::CalibrationTable::builtin() : fault::CalibrationTable::parse(read_text(cal_path));
    const fault::CalibratedDevice* d = cal.device(device_name);
    if (!d)
        throw UsageError("unknown calibrated device '" + device_name + "'");
    auto k = fault::parse_glitch_kind(kind);
    if (!k)
        throw UsageError("unknown glitch kind '" + kind + "'");
    if (trials == 0)
        throw UsageError("--trials must be positive");
    fault::CampaignSpec spec;
    spec.device = device_name;
    spec.params = {*k, amplitude, width, std::nullopt, 0.0};
    spec.trials = trials;
    spec.seed = seed;
    const DeviceProfile p = load_profile(d->profile);
    device::Device proto(p, device::build_image(p, {}, seed));
    const auto r = fault::run_campaign(spec, cal, factory_for(std::move(proto)), jobs);
    Json j = report::campaign(r);
    j["device"] = device_name;
    j["kind"] = kind;
    j["amplitude"] = amplitude;
    j["width"] = width;
    j["seed"] = seed;
    j["reads_per_trial"] = d->reads_per_trial;
    const std::string f = c.fmt();
    if (f == "json") {
        c.write(report::dump(j));
    } else if (f == "csv") {
        std::string s = csv_row({"index", "seed", "reads", "corrupt", "resets"});
        for (const auto& t : r.trials)
            s += csv_row({std::to_string(t.index), std::to_string(t.seed), std::to_string(t.reads),
                          std::to_string(t.corrupt), std::to_string(t.resets)});
        c.write(s);
    } else {
        c.write(header
                + fmt::format("{} {} {} x {}: {} trials, {} corrupt reads, {} resets (p_corrupt {:.3g}, p_reset {:.3g})\n",
                              device_name, kind, amplitude, width, trials, r.corrupt_count, r.reset_count,
                              r.outcome.p_corrupt, r.outcome.p_reset));
    }
    return 0;
}

struct LaserArgs {
    double power = 50.0;
    double length = 20.0;
    double start = -20.0;
    std::string pgm;
    int jobs = 0;
};

void add_laser(CLI::App* app, LaserArgs& l)
{
    app->add_option("--power", l.power, "Laser power, mW");
    app->add_option("--length", l.length, "Pulse length, us");
    app->add_option("--start", l.start, "Pulse start relative to the TCK rising edge, us");
    app->add_option("--pgm", l.pgm, "Also write the map as a binary PGM");
    app->add_option("--jobs", l.jobs, "Worker threads (0: all)");
}

void write_file(const std::string& path, const std::string& data)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw Error("cannot write " + path);
    f << data;
}

int laser_scan(const ScanArgs& a, const LaserArgs& l, const fault::Grid& g)
{
    const TargetSpec spec = target_of(a.target);
    if (spec.kind != TargetSpec::Kind::Sim)
        throw UsageError("laser scan needs a sim: target");
    const fault::Floorplan plan = fault::Floorplan::default_max10();
    const fault::LaserPulse pulse{l.power, l.length, l.start};
    fault::GridMap map;
    try {
        map = fault::laser_scan(g, pulse, factory_for(make_device(spec)), plan, {}, l.jobs);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (!l.pgm.empty())
        write_file(l.pgm, fault::grid_to_pgm(map));
    const std::string f = a.c.fmt();
    if (f == "json") {
        Json rows = Json::array();
        for (std::size_t iy = 0; iy < map.ny; ++iy) {
            std::string row;
            for (std::size_t ix = 0; ix < map.nx; ++ix)
                row += fault::fault_class_glyph(map.at(ix, iy));
            rows.push_back(row);
        }
        std::map<std::string, std::size_t> counts;
        for (auto cl : map.cells)
            ++counts[std::string(fault::fault_class_name(cl))];
        a.c.write(report::dump({{"x0", map.x0}, {"y0", map.y0}, {"step", map.step}, {"nx", map.nx},
                                {"ny", map.ny}, {"rows", rows}, {"counts", counts}}));
    } else if (f == "csv") {
        std::string s = csv_row({"x", "y", "class"});
        for (std::size_t iy = 0; iy < map.ny; ++iy)
            for (std::size_t ix = 0; ix < map.nx; ++ix)
                s += csv_row({fmt::format("{}", map.x(ix)), fmt::format("{}", map.y(iy)),
                              std::string(fault::fault_class_name(map.at(ix, iy)))});
        a.c.write(s);
    } else {
        a.c.write(fault::grid_to_text(map));
    }
    return 0;
}

int timing_sweep(const ScanArgs& a, const LaserArgs& l, const std::string& kind, const fault::Axis& x,
                 const fault::Axis& y, double tx, double ty)
{
    const TargetSpec spec = target_of(a.target);
    if (spec.kind != TargetSpec::Kind::Sim)
        throw UsageError("timing sweep needs a sim: target");
    if (kind != "overshoot" && kind != "undershoot")
        throw UsageError("--kind must be overshoot or undershoot");
    const auto k = kind == "overshoot" ? fault::SweepKind::Overshoot : fault::SweepKind::Undershoot;
    fault::TimingMap map;
    try {
        map = fault::timing_sweep(k, x, y, l.power, {tx, ty}, factory_for(make_device(spec)),
                                  fault::Floorplan::default_max10(), {}, l.jobs);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (!l.pgm.empty())
        write_file(l.pgm, fault::timing_to_pgm(map));
    const std::string f = a.c.fmt();
    if (f == "json") {
        Json rows = Json::array();
        for (std::size_t iy = 0; iy < y.count; ++iy) {
            std::string row;
            for (std::size_t ix = 0; ix < x.count; ++ix)
                row += map.at(ix, iy) ? '#' : '.';
            rows.push_back(row);
        }
        a.c.write(report::dump({{"kind", kind},
                                {"x", {{"start", x.start}, {"step", x.step}, {"count", x.count}}},
                                {"y", {{"start", y.start}, {"step", y.step}, {"count", y.count}}},
                                {"rows", rows}}));
    } else if (f == "csv") {
        std::string s = csv_row({"x", "y", "effective"});
        for (std::size_t iy = 0; iy < y.count; ++iy)
            for (std::size_t ix = 0; ix < x.count; ++ix)
                s += csv_row({fmt::format("{}", x.at(ix)), fmt::format("{}", y.at(iy)), map.at(ix, iy) ? "1" : "0"});
        a.c.write(s);
    } else {
        a.c.write(fault::timing_to_text(map));
    }
    return 0;
}

// ---------------------------------------------------------------------------
// trace

trace::PowerTrace load_trace(const std::string& path)
{
    const auto bytes = read_file(path);
    if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "MXPT"))
        return trace::from_binary(bytes);
    return trace::from_csv(std::string(bytes.begin(), bytes.end()));
}

int trace_synth(const ScanArgs& a)
{
    std::string header;
    const std::uint64_t seed = a.c.require_seed(header);
    const TargetSpec spec = target_of(a.target);
    if (spec.kind != TargetSpec::Kind::Sim)
        throw UsageError("trace synth needs a sim: target");
    const auto t = trace::synthesize_boot_trace(make_device(spec), seed);
    const std::string f = a.c.fmt();
    if (f == "csv") {
        a.c.write(trace::to_csv(t));
    } else if (f == "json") {
        Json j = report::segments(t.annotations);
        j["sample_rate"] = t.sample_rate;
        j["samples"] = t.samples;
        j["seed"] = seed;
        a.c.write(report::dump(j));
    } else {
        if (a.c.out.empty())
            throw UsageError("binary trace output needs --out (or --format csv/json)");
        const auto b = trace::to_binary(t);
        a.c.write(std::string(b.begin(), b.end()));
        std::cerr << header;
    }
    return 0;
}

int trace_diff(const Common& c, const std::string& pa, const std::string& pb, double threshold)
{
    const auto d = trace::diff_traces(load_trace(pa), load_trace(pb), threshold);
    const Json j = report::trace_diff(d);
    const std::string f = c.fmt();
    if (f == "json") {
        c.write(report::dump(j));
    } else {
        std::string s = f == "csv" ? csv_row({"start", "end", "peak"}) : "";
        for (const auto& w : d.windows)
            s += f == "csv" ? csv_row({std::to_string(w.start), std::to_string(w.end), fmt::format("{:.4f}", w.peak)})
                            : fmt::format("window {}..{} peak {:.4f}\n", w.start, w.end, w.peak);
        if (f == "text")
            s += fmt::format("{} windows over {} samples\n", d.windows.size(), d.diff.size());
        c.write(s);
    }
    return d.windows.empty() ? 0 : kExitFindings;
}

int trace_segment(const Common& c, const std::string& path)
{
    const auto segs = trace::segment_boot(load_trace(path));
    const std::string f = c.fmt();
    if (f == "json") {
        c.write(report::dump(report::segments(segs)));
    } else {
        std::string s = f == "csv" ? csv_row({"phase", "start", "end"}) : "";
        for (const auto& g : segs)
            s += f == "csv" ? csv_row({std::string(trace::phase_name(g.phase)), std::to_string(g.start),
                                       std::to_string(g.end)})
                            : fmt::format("{:<10} {:>9} {:>9}\n", trace::phase_name(g.phase), g.start, g.end);
        c.write(s);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// serve

remote::TcpServer* g_server = nullptr;

extern "C" void stop_server(int)
{
    if (g_server)
        g_server->stop();
}

int serve(const ScanArgs& a, std::uint16_t port, std::size_t max_connections)
{
    const TargetSpec spec = target_of(a.target);
    if (spec.kind != TargetSpec::Kind::Sim)
        throw UsageError("serve needs a sim: target");
    device::SimTransport sim(make_device(spec));
    remote::TcpServer server(sim, port);
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    std::cout << "listening on 127.0.0.1:" << server.port() << std::endl;
    server.run(max_connections);
    g_server = nullptr;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"MAX 10 JTAG security analysis toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "maxsec 1.0");
    int rc = 0;

    // scan
    auto* scan_cmd = app.add_subcommand("scan", "JTAG scans against a target");
    scan_cmd->require_subcommand(1);

    ScanArgs ir_args;
    std::string known, opcodes;
    std::size_t max_bits = scan::kMaxDrBits;
    auto* ir = scan_cmd->add_subcommand("ir", "Enumerate the instruction register");
    add_target(ir, ir_args);
    ir->add_option("--known", known, "Known-command list");
    ir->add_option("--opcodes", opcodes, "Comma-separated opcodes to visit (default: all)");
    ir->add_option("--max-dr", max_bits, "Longest DR to measure");
    ir->callback([&] { rc = scan_ir(ir_args, known, opcodes, max_bits); });

    ScanArgs dr_args;
    std::string dr_opcode;
    auto* dr = scan_cmd->add_subcommand("dr", "Measure the DR length behind one opcode");
    add_target(dr, dr_args);
    dr->add_option("--opcode", dr_opcode, "Opcode (hex with 0x)")->required();
    dr->add_option("--max-dr", max_bits, "Longest DR to measure");
    dr->callback([&] { rc = scan_dr(dr_args, dr_opcode, max_bits); });

    ScanArgs mem_args;
    scan::MapOptions map_opt;
    auto* mem = scan_cmd->add_subcommand("memory", "Map flash regions and access classes");
    add_target(mem, mem_args);
    mem->add_option("--step", map_opt.coarse_step, "Coarse probe step in bytes");
    mem->add_flag("--user-path", map_opt.use_user_path, "Also try the USER1 read path");
    mem->add_flag("--destructive", map_opt.allow_destructive, "Allow a sacrificial bit-clear per unreadable run");
    mem->callback([&] { rc = scan_memory(mem_args, map_opt); });

    ScanArgs fuse_args;
    auto* fuses = scan_cmd->add_subcommand("fuses", "Infer security fuse state");
    add_target(fuses, fuse_args);
    fuses->callback([&] { rc = scan_fuses(fuse_args); });

    ScanArgs rem_args;
    double rem_at = 0.35;
    std::string rem_reference;
    auto* rem = scan_cmd->add_subcommand("remanence", "Stop an erase early and read what is left");
    add_target(rem, rem_args);
    rem->add_option("--at", rem_at, "Erase progress at which to stop (0..1)")->check(CLI::Range(0.0, 1.0));
    rem->add_option("--reference", rem_reference, "Raw flash image to measure against (default: read CFM before erasing)");
    rem->callback([&] { rc = scan_remanence(rem_args, rem_at, rem_reference); });

    // pof
    auto* pof_cmd = app.add_subcommand("pof", "Programming file forensics");
    pof_cmd->require_subcommand(1);

    Common detect_c;
    std::string detect_file;
    std::string cfm_base = "0x01D000";
    auto* detect = pof_cmd->add_subcommand("detect", "Find security fuse signatures");
    add_common(detect, detect_c);
    detect->add_option("file", detect_file, "Flash image")->required();
    detect->add_option("--cfm-base", cfm_base, "CFM start address");
    detect->callback([&] {
        rc = pof_detect(detect_c, detect_file, static_cast<std::uint32_t>(parse_number(cfm_base, "address")));
    });

    Common diff_c;
    std::string diff_a, diff_b, diff_profile;
    auto* pdiff = pof_cmd->add_subcommand("diff", "Byte-level image diff (exit 1 when they differ)");
    add_common(pdiff, diff_c);
    pdiff->add_option("a", diff_a)->required();
    pdiff->add_option("b", diff_b)->required();
    pdiff->add_option("--profile", diff_profile, "Label offsets with this profile's regions");
    pdiff->callback([&] { rc = pof_diff(diff_c, diff_a, diff_b, diff_profile); });

    Common key_c;
    std::string key_file;
    auto* pkey = pof_cmd->add_subcommand("key", "Unscramble the key field");
    add_common(pkey, key_c);
    pkey->add_option("file", key_file)->required();
    pkey->callback([&] { rc = pof_key(key_c, key_file); });

    Common synth_c;
    std::string synth_profile = "10m08", synth_fuses, synth_key;
    auto* psynth = pof_cmd->add_subcommand("synth", "Write a synthesized flash image");
    add_common(psynth, synth_c);
    psynth->add_option("--profile", synth_profile);
    psynth->add_option("--fuses", synth_fuses, "vp,epof,jtagsec");
    psynth->add_option("--key", synth_key, "AES key, 32 hex digits");
    psynth->callback([&] { rc = pof_synth(synth_c, synth_profile, synth_fuses, synth_key); });

    // sof
    auto* sof_cmd = app.add_subcommand("sof", "SRAM object files");
    sof_cmd->require_subcommand(1);
    Common sof_c;
    std::string sof_file, sof_other;
    auto* sof = sof_cmd->add_subcommand("analyze", "Decode header fields (exit 1 on checksum mismatch)");
    add_common(sof, sof_c);
    sof->add_option("file", sof_file)->required();
    sof->add_option("--compare", sof_other, "Second SOF to compare against");
    sof->callback([&] { rc = sof_analyze(sof_c, sof_file, sof_other); });

    // map
    auto* map_cmd = app.add_subcommand("map", "Conversion mapping files");
    map_cmd->require_subcommand(1);
    Common map_c;
    std::string map_file;
    auto* mparse = map_cmd->add_subcommand("parse", "Parse a mapping listing");
    add_common(mparse, map_c);
    mparse->add_option("file", map_file)->required();
    mparse->callback([&] { rc = map_parse(map_c, map_file); });

    // stapl
    auto* stapl_cmd = app.add_subcommand("stapl", "STAPL/Jam programs");
    stapl_cmd->require_subcommand(1);
    ScanArgs run_args;
    std::string stapl_file, stapl_action = "PROGRAM";
    bool stapl_trace = false, stapl_optional = false;
    auto* srun = stapl_cmd->add_subcommand("run", "Execute an action (exit 1 when the script exits nonzero)");
    add_target(srun, run_args);
    srun->add_option("file", stapl_file)->required();
    srun->add_option("--action", stapl_action);
    srun->add_flag("--trace", stapl_trace, "Log every scan");
    srun->add_flag("--optional", stapl_optional, "Also run optional procedures");
    srun->callback([&] { rc = stapl_run(run_args, stapl_file, stapl_action, stapl_trace, stapl_optional); });

    ScanArgs gen_args;
    bool gen_plain = false, gen_no_ufm = false;
    auto* sgen = stapl_cmd->add_subcommand("gen", "Generate a program/verify script for a sim target's image");
    add_target(sgen, gen_args);
    sgen->add_flag("--plain-names", gen_plain, "Readable procedure and variable names");
    sgen->add_flag("--no-ufm", gen_no_ufm, "Leave UFM out of the script");
    sgen->callback([&] { rc = stapl_gen(gen_args, gen_plain, gen_no_ufm); });

    // campaign
    auto* camp_cmd = app.add_subcommand("campaign", "Glitch campaigns");
    camp_cmd->require_subcommand(1);
    Common camp_c;
    std::string camp_device = "10M16SCE144", camp_kind = "power", camp_cal;
    double camp_amp = 1.4, camp_width = 4.0;
    std::uint64_t camp_trials = 1;
    int camp_jobs = 0;
    auto* crun = camp_cmd->add_subcommand("run", "Run a seeded campaign");
    add_common(crun, camp_c);
    crun->add_option("--device", camp_device, "Calibrated device");
    crun->add_option("--kind", camp_kind, "power or em");
    crun->add_option("--amplitude", camp_amp, "Glitch amplitude, V");
    crun->add_option("--width", camp_width, "Width: us for power, ns for em");
    crun->add_option("--trials", camp_trials);
    crun->add_option("--jobs", camp_jobs, "Worker threads (0: all); output does not depend on it");
    crun->add_option("--calibration", camp_cal, "Calibration file (default: built-in tables)");
    crun->callback([&] {
        rc = campaign_run(camp_c, camp_device, camp_kind, camp_amp, camp_width, camp_trials, camp_jobs, camp_cal);
    });

    // laser
    auto* laser_cmd = app.add_subcommand("laser", "Laser fault injection");
    laser_cmd->require_subcommand(1);
    ScanArgs laser_args;
    laser_args.target = "sim:10m08?fuses=vp";
    LaserArgs laser;
    fault::Grid grid{0, 0, 4300, 4400, 100};
    auto* lscan = laser_cmd->add_subcommand("scan", "Raster the die and classify observed faults");
    add_target(lscan, laser_args);
    add_laser(lscan, laser);
    lscan->add_option("--x0", grid.x0);
    lscan->add_option("--y0", grid.y0);
    lscan->add_option("--x1", grid.x1);
    lscan->add_option("--y1", grid.y1);
    lscan->add_option("--step", grid.step, "Grid step, um");
    lscan->callback([&] { rc = laser_scan(laser_args, laser, grid); });

    // timing
    auto* timing_cmd = app.add_subcommand("timing", "Laser pulse timing");
    timing_cmd->require_subcommand(1);
    ScanArgs timing_args;
    timing_args.target = "sim:10m08?fuses=jtagsec";
    LaserArgs timing_laser;
    std::string sweep_kind = "overshoot";
    fault::Axis ax{0.0, 1.0, 30}, ay{0.0, 1.0, 30};
    double tx = 2300, ty = 2500;
    auto* sweep = timing_cmd->add_subcommand("sweep", "Map pulse timing against fault effectiveness");
    add_target(sweep, timing_args);
    add_laser(sweep, timing_laser);
    sweep->add_option("--kind", sweep_kind, "overshoot or undershoot");
    sweep->add_option("--x-start", ax.start);
    sweep->add_option("--x-step", ax.step);
    sweep->add_option("--x-count", ax.count);
    sweep->add_option("--y-start", ay.start);
    sweep->add_option("--y-step", ay.step);
    sweep->add_option("--y-count", ay.count);
    sweep->add_option("--at-x", tx, "Spot x, um");
    sweep->add_option("--at-y", ty, "Spot y, um");
    sweep->callback([&] { rc = timing_sweep(timing_args, timing_laser, sweep_kind, ax, ay, tx, ty); });

    // trace
    auto* trace_cmd = app.add_subcommand("trace", "Synthetic boot power traces");
    trace_cmd->require_subcommand(1);
    ScanArgs tsynth_args;
    auto* tsynth = trace_cmd->add_subcommand("synth", "Render a boot trace (MXPT binary unless csv/json)");
    add_target(tsynth, tsynth_args);
    tsynth->callback([&] { rc = trace_synth(tsynth_args); });

    Common tdiff_c;
    std::string tdiff_a, tdiff_b;
    double threshold = 0.5;
    auto* tdiff = trace_cmd->add_subcommand("diff", "Difference windows (exit 1 when any)");
    add_common(tdiff, tdiff_c);
    tdiff->add_option("a", tdiff_a)->required();
    tdiff->add_option("b", tdiff_b)->required();
    tdiff->add_option("--threshold", threshold);
    tdiff->callback([&] { rc = trace_diff(tdiff_c, tdiff_a, tdiff_b, threshold); });

    Common tseg_c;
    std::string tseg_file;
    auto* tseg = trace_cmd->add_subcommand("segment", "Recover boot phases");
    add_common(tseg, tseg_c);
    tseg->add_option("file", tseg_file)->required();
    tseg->callback([&] { rc = trace_segment(tseg_c, tseg_file); });

    // serve
    ScanArgs serve_args;
    std::uint16_t serve_port = 0;
    std::size_t serve_max = 0;
    auto* srv = app.add_subcommand("serve", "Serve a simulated target over the wire protocol");
    add_target(srv, serve_args);
    srv->add_option("--port", serve_port, "TCP port (0: pick one)");
    srv->add_option("--max-connections", serve_max, "Exit after this many connections (0: never)");
    srv->callback([&] { rc = serve(serve_args, serve_port, serve_max); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return rc;
}
