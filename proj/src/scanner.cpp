#include "maxsec/scanner.hpp"

#include "maxsec/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <unordered_map>

namespace maxsec::scan {

namespace {

// Smallest register lengths L such that TDO shows `marker` at L followed by zeros only.
std::vector<std::size_t> marker_positions(const BitVector& tdo, std::uint8_t marker, std::size_t max_bits)
{
    std::vector<std::size_t> out;
    // Index of the last set bit, so "zeros after" is a single comparison.
    std::size_t last_one = 0;
    bool any = false;
    for (std::size_t i = tdo.size(); i-- > 0;)
        if (tdo.get(i)) {
            last_one = i;
            any = true;
            break;
        }
    if (!any)
        return out;
    for (std::size_t len = 1; len <= max_bits && len + 8 <= tdo.size(); ++len) {
        bool match = true;
        for (std::size_t b = 0; b < 8 && match; ++b)
            match = tdo.get(len + b) == static_cast<bool>((marker >> b) & 1u);
        if (match && last_one < len + 8)
            out.push_back(len);
    }
    return out;
}

std::vector<std::size_t> probe_with(tap::Transport& t, std::uint32_t ir_width, std::uint32_t opcode,
                                    std::uint8_t marker, std::size_t max_bits)
{
    tap::shift_ir(t, BitVector::from_uint(opcode, ir_width));
    BitVector tdi(max_bits + 8);
    for (std::size_t b = 0; b < 8; ++b)
        tdi.set(b, (marker >> b) & 1u);
    return marker_positions(tap::shift_dr(t, tdi), marker, max_bits);
}

std::uint32_t require_opcode(const DeviceProfile& p, IrAction a)
{
    const Instruction* ins = p.find_action(a);
    if (!ins)
        throw UnsupportedProfile("profile " + p.name + " has no " + std::string(ir_action_name(a))
                                 + " instruction");
    return ins->opcode;
}

std::optional<std::uint32_t> optional_opcode(const DeviceProfile& p, IrAction a)
{
    if (const Instruction* ins = p.find_action(a))
        return ins->opcode;
    return std::nullopt;
}

} // namespace

std::optional<std::size_t> measure_dr_length(tap::Transport& t, std::uint32_t ir_width,
                                             std::uint32_t opcode, std::size_t max_bits)
{
    auto first = probe_with(t, ir_width, opcode, kDrMarker, max_bits);
    if (first.size() == 1)
        return first.front();
    if (first.empty())
        return std::nullopt;
    // The captured value imitated the marker; the complement cannot collide at the same spot.
    auto second = probe_with(t, ir_width, opcode, static_cast<std::uint8_t>(~kDrMarker), max_bits);
    for (std::size_t len : first)
        if (std::find(second.begin(), second.end(), len) != second.end())
            return len;
    return std::nullopt;
}

std::string_view ir_class_name(IrClass c)
{
    switch (c) {
    case IrClass::Documented: return "documented";
    case IrClass::Undocumented: return "undocumented";
    case IrClass::BypassLike: return "bypass_like";
    }
    return "?";
}

std::vector<IrSurveyEntry> enumerate_ir(tap::Transport& t, std::uint32_t ir_width,
                                        std::span<const KnownCommand> known, const SurveyOptions& options)
{
    std::unordered_map<std::uint32_t, std::string> names;
    for (const auto& k : known)
        names.emplace(k.opcode, k.name);

    std::vector<std::uint32_t> opcodes = options.opcodes;
    if (opcodes.empty()) {
        opcodes.resize(std::size_t{1} << ir_width);
        for (std::uint32_t i = 0; i < opcodes.size(); ++i)
            opcodes[i] = i;
    }

    tap::reset(t);
    std::vector<IrSurveyEntry> entries;
    entries.reserve(opcodes.size());
    for (std::uint32_t op : opcodes) {
        if (options.cancel && options.cancel->load())
            break;
        IrSurveyEntry e;
        e.opcode = op;
        e.dr_length = measure_dr_length(t, ir_width, op, options.max_dr_bits);
        auto it = names.find(op);
        if (it != names.end())
            e.name = it->second;
        if (e.dr_length == std::size_t{1})
            e.classification = IrClass::BypassLike;
        else if (it != names.end())
            e.classification = IrClass::Documented;
        else
            e.classification = IrClass::Undocumented;
        entries.push_back(std::move(e));
    }
    tap::reset(t);
    std::sort(entries.begin(), entries.end(),
              [](const IrSurveyEntry& a, const IrSurveyEntry& b) { return a.opcode < b.opcode; });
    return entries;
}

FlashPort::FlashPort(tap::Transport& t, const DeviceProfile& profile)
    : t_(t),
      ir_width_(profile.ir_width),
      address_shift_(require_opcode(profile, IrAction::AddressShift)),
      flash_read_(require_opcode(profile, IrAction::FlashRead)),
      flash_program_(require_opcode(profile, IrAction::FlashProgram)),
      flash_erase_(optional_opcode(profile, IrAction::FlashErase)),
      user_read_(optional_opcode(profile, IrAction::UserRead))
{
}

void FlashPort::load_ir(std::uint32_t opcode)
{
    tap::shift_ir(t_, BitVector::from_uint(opcode, ir_width_));
}

void FlashPort::set_address(std::uint32_t addr)
{
    load_ir(address_shift_);
    tap::shift_dr(t_, BitVector::from_uint(addr, kAddressBits));
}

std::vector<FlashPort::Word> FlashPort::read(std::uint32_t addr, std::size_t count, bool user_path)
{
    if (user_path && !user_read_)
        throw UnsupportedProfile("profile has no user-mode read instruction");
    set_address(addr);
    load_ir(user_path ? *user_read_ : flash_read_);

    // Consecutive DR scans are batched into one transport call per chunk.
    constexpr std::size_t kChunk = 512;
    const BitVector zeros(kFlashReadBits);
    const tap::ScanFrame frame = tap::build_scan(false, zeros);
    const std::size_t frame_len = frame.tms.size();

    std::vector<Word> words;
    words.reserve(count);
    while (words.size() < count) {
        const std::size_t n = std::min(kChunk, count - words.size());
        BitVector tms, tdi;
        for (std::size_t i = 0; i < n; ++i) {
            tms.append(frame.tms);
            tdi.append(frame.tdi);
        }
        const BitVector tdo = t_.shift(tms, tdi);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = i * frame_len + frame.shift_offset;
            Word w;
            w.valid = tdo.get(base);
            w.sector = static_cast<std::uint8_t>(tdo.to_uint(base + 1, 2));
            w.data = static_cast<std::uint32_t>(tdo.to_uint(base + 3, 32));
            words.push_back(w);
        }
    }
    return words;
}

bool FlashPort::program(std::uint32_t addr, std::uint32_t value)
{
    set_address(addr);
    load_ir(flash_program_);
    BitVector dr = BitVector::from_uint(value, kFlashProgramBits);
    dr.set(32, true);
    tap::shift_dr(t_, dr);
    // A scan without the commit bit captures the status of the program above.
    return tap::shift_dr(t_, BitVector(kFlashProgramBits)).get(0);
}

void FlashPort::erase(std::uint64_t idle_cycles)
{
    if (!flash_erase_)
        throw UnsupportedProfile("profile has no erase instruction");
    load_ir(*flash_erase_);
    tap::idle(t_, idle_cycles);
    // Leaving Run-Test/Idle ends the erase.
    tap::shift_ir(t_, BitVector::from_uint((1u << ir_width_) - 1, ir_width_));
}

std::string_view observed_class_name(ObservedClass c)
{
    switch (c) {
    case ObservedClass::NotReadable: return "not_readable";
    case ObservedClass::ReadWrite: return "read_write";
    case ObservedClass::ReadProtectable: return "read_protectable";
    case ObservedClass::ReadOnly: return "read_only";
    }
    return "?";
}

namespace {

struct ProbeKey {
    ObservedClass observed;
    std::uint8_t sector;
    bool operator==(const ProbeKey&) const = default;
};

class Prober {
public:
    Prober(FlashPort& port, const MapOptions& options) : port_(port), options_(options) {}

    ProbeKey at(std::uint32_t addr)
    {
        auto it = cache_.find(addr);
        if (it != cache_.end())
            return it->second;
        ProbeKey k = probe(addr);
        cache_.emplace(addr, k);
        return k;
    }

private:
    ProbeKey probe(std::uint32_t addr)
    {
        const FlashPort::Word w = port_.read(addr, 1).front();
        if (w.valid) {
            // Writing back the value just read is a no-op under AND programming.
            bool writable = port_.program(addr, w.data);
            return {writable ? ObservedClass::ReadWrite : ObservedClass::ReadOnly, w.sector};
        }
        if (options_.use_user_path && port_.has_user_path() && port_.read(addr, 1, true).front().valid)
            return {ObservedClass::ReadProtectable, w.sector};
        if (options_.allow_destructive && port_.program(addr, 0xFFFFFFFEu))
            return {ObservedClass::ReadProtectable, w.sector};
        return {ObservedClass::NotReadable, w.sector};
    }

    FlashPort& port_;
    const MapOptions& options_;
    std::map<std::uint32_t, ProbeKey> cache_;
};

} // namespace

std::vector<ProbedRegion> map_memory(tap::Transport& t, const DeviceProfile& profile, const MapOptions& options)
{
    FlashPort port(t, profile);
    const std::uint32_t size = profile.flash_size();
    if (size < 4)
        throw UnsupportedProfile("profile has no flash");
    const std::uint32_t step = std::max<std::uint32_t>(4, options.coarse_step & ~3u);

    tap::reset(t);
    Prober probe(port, options);
    std::vector<std::uint32_t> coarse;
    for (std::uint32_t a = 0; a < size; a += step)
        coarse.push_back(a);
    if (coarse.back() != size - 4)
        coarse.push_back(size - 4);

    // Word addresses where the observed key changes.
    std::vector<std::uint32_t> starts = {0};
    for (std::size_t i = 0; i + 1 < coarse.size(); ++i) {
        std::uint32_t lo = coarse[i];
        std::uint32_t hi = coarse[i + 1];
        const ProbeKey left = probe.at(lo);
        if (probe.at(hi) == left)
            continue;
        // Invariant: key(lo) == left, key(hi) != left.
        while (hi - lo > 4) {
            std::uint32_t mid = lo + ((hi - lo) / 8) * 4;
            if (probe.at(mid) == left)
                lo = mid;
            else
                hi = mid;
        }
        starts.push_back(hi);
    }

    std::vector<ProbedRegion> regions;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const std::uint32_t end = i + 1 < starts.size() ? starts[i + 1] - 1 : size - 1;
        const ProbeKey k = probe.at(starts[i]);
        regions.push_back({starts[i], end, k.observed, k.sector});
    }
    tap::reset(t);
    return regions;
}

FuseInference infer_fuses(tap::Transport& t, const DeviceProfile& profile)
{
    FuseInference out;
    tap::reset(t);
    const std::uint32_t read_op = require_opcode(profile, IrAction::FlashRead);
    const auto read_len = measure_dr_length(t, profile.ir_width, read_op);

    auto candidates = [&](std::optional<bool> vp, std::optional<bool> epof, bool js) {
        for (unsigned bits = 0; bits < 8; ++bits) {
            device::FuseSet f = device::FuseSet::from_bits(bits);
            if (f.jtag_secure != js)
                continue;
            if (vp && f.verify_protect != *vp)
                continue;
            if (epof && f.encrypted_pof_only != *epof)
                continue;
            out.candidates.push_back(f);
        }
    };

    if (read_len != std::size_t{kFlashReadBits}) {
        out.evidence.push_back("flash read instruction answers as a " + std::to_string(read_len.value_or(0))
                               + "-bit register: JTAG security active");
        candidates(std::nullopt, std::nullopt, true);
        tap::reset(t);
        return out;
    }
    out.evidence.push_back("flash read instruction has its full register: JTAG security inactive");

    const Region* cfm = profile.regions.find(AccessClass::ConfigFlash);
    if (!cfm)
        throw UnsupportedProfile("profile has no configuration flash region");
    FlashPort port(t, profile);
    if (port.read(cfm->start, 1).front().valid) {
        out.evidence.push_back("configuration flash readable over JTAG: verify protect inactive");
        candidates(false, std::nullopt, false);
    } else if (port.has_user_path()
               && measure_dr_length(t, profile.ir_width, profile.find_action(IrAction::UserRead)->opcode)
                      == std::size_t{kFlashReadBits}) {
        bool user_ok = port.read(cfm->start, 1, true).front().valid;
        out.evidence.push_back(user_ok ? "configuration flash denied over JTAG, readable through the user design"
                                       : "configuration flash denied on both read paths");
        candidates(true, !user_ok, false);
    } else {
        out.evidence.push_back("configuration flash denied over JTAG; no user-mode path to separate "
                               "verify protect from verify protect + encrypted POF only");
        candidates(true, std::nullopt, false);
    }
    tap::reset(t);
    return out;
}

RemanenceResult recover_remanent(tap::Transport& t, const DeviceProfile& profile, double terminate_at,
                                 const device::FlashImage* reference)
{
    const Region* cfm = profile.regions.find(AccessClass::ConfigFlash);
    if (!cfm)
        throw UnsupportedProfile("profile has no configuration flash region");
    FlashPort port(t, profile);
    tap::reset(t);

    // Reference CFM words; nullopt where the pre-erase read was denied.
    const std::size_t cfm_words = cfm->size() / 4;
    std::vector<std::optional<std::uint32_t>> before(cfm_words);
    if (reference) {
        if (reference->size() != profile.flash_size())
            throw LengthMismatch("reference image does not match the profile size");
        for (std::size_t i = 0; i < cfm_words; ++i) {
            std::uint32_t w = 0;
            for (std::uint32_t b = 0; b < 4; ++b)
                w |= std::uint32_t{reference->bytes[cfm->start + 4 * i + b]} << (8 * b);
            before[i] = w;
        }
    } else {
        auto words = port.read(cfm->start, cfm_words);
        for (std::size_t i = 0; i < cfm_words; ++i)
            if (words[i].valid)
                before[i] = words[i].data;
    }

    const double clamped = std::clamp(terminate_at, 0.0, 1.0);
    port.erase(static_cast<std::uint64_t>(std::llround(clamped * static_cast<double>(profile.erase_cycles))));

    RemanenceResult r;
    r.recovered.assign(profile.flash_size(), 0xFF);
    std::vector<std::optional<std::uint32_t>> after(cfm_words);
    for (const Region& region : profile.regions.regions()) {
        if (region.access == AccessClass::SystemArea)
            continue;
        auto words = port.read(region.start, region.size() / 4);
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (!words[i].valid)
                continue;
            const std::uint32_t addr = region.start + static_cast<std::uint32_t>(4 * i);
            for (std::uint32_t b = 0; b < 4; ++b)
                r.recovered[addr + b] = static_cast<std::uint8_t>(words[i].data >> (8 * b));
            if (cfm->contains(addr))
                after[(addr - cfm->start) / 4] = words[i].data;
        }
    }

    for (std::size_t i = 0; i < cfm_words; ++i) {
        if (!before[i])
            continue;
        const std::uint32_t programmed = ~*before[i];
        r.programmed_bits += static_cast<std::uint64_t>(std::popcount(programmed));
        if (after[i])
            r.recovered_bits += static_cast<std::uint64_t>(std::popcount(programmed & ~*after[i]));
    }
    r.fraction = r.programmed_bits == 0
                     ? 1.0
                     : static_cast<double>(r.recovered_bits) / static_cast<double>(r.programmed_bits);
    tap::reset(t);
    return r;
}

} // namespace maxsec::scan
