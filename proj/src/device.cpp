#include "maxsec/device.hpp"

#include "maxsec/errors.hpp"
#include "maxsec/pof.hpp"
#include "maxsec/scramble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace maxsec::device {

namespace {

bool marker_at(const std::vector<std::uint8_t>& flash, std::uint32_t offset)
{
    if (flash.size() < offset + 4)
        return false;
    return std::equal(forensics::kFuseMarker.begin(), forensics::kFuseMarker.end(),
                      flash.begin() + offset);
}

std::uint32_t idle_instruction(const DeviceProfile& p)
{
    if (const auto* id = p.find_action(IrAction::Idcode))
        return id->opcode;
    return p.bypass_opcode();
}

} // namespace

std::string_view fuse_name(Fuse f)
{
    switch (f) {
    case Fuse::VerifyProtect: return "verify_protect";
    case Fuse::EncryptedPofOnly: return "encrypted_pof_only";
    case Fuse::JtagSecure: return "jtag_secure";
    }
    return "?";
}

std::uint32_t fuse_slot(Fuse f)
{
    switch (f) {
    case Fuse::VerifyProtect: return kVerifyProtectSlot;
    case Fuse::EncryptedPofOnly: return kEncryptedPofOnlySlot;
    case Fuse::JtagSecure: return kJtagSecureSlot;
    }
    return kVerifyProtectSlot;
}

bool FuseSet::get(Fuse f) const
{
    switch (f) {
    case Fuse::VerifyProtect: return verify_protect;
    case Fuse::EncryptedPofOnly: return encrypted_pof_only;
    case Fuse::JtagSecure: return jtag_secure;
    }
    return false;
}

void FuseSet::set(Fuse f, bool on)
{
    switch (f) {
    case Fuse::VerifyProtect: verify_protect = on; break;
    case Fuse::EncryptedPofOnly: encrypted_pof_only = on; break;
    case Fuse::JtagSecure: jtag_secure = on; break;
    }
}

FuseSet FuseSet::from_bits(unsigned bits)
{
    FuseSet f;
    f.verify_protect = bits & 1u;
    f.encrypted_pof_only = bits & 2u;
    f.jtag_secure = bits & 4u;
    return f;
}

unsigned FuseSet::bits() const
{
    return (verify_protect ? 1u : 0u) | (encrypted_pof_only ? 2u : 0u) | (jtag_secure ? 4u : 0u);
}

std::string FuseSet::describe() const
{
    std::string s;
    auto add = [&](std::string_view n) {
        if (!s.empty())
            s += ",";
        s += n;
    };
    if (verify_protect)
        add("vp");
    if (encrypted_pof_only)
        add("epof");
    if (jtag_secure)
        add("jtagsec");
    if (aes_key)
        add("aes");
    return s.empty() ? "none" : s;
}

FlashImage FlashImage::load(const std::string& path, std::size_t expected_size)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open image " + path);
    FlashImage img{std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {})};
    if (img.bytes.size() != expected_size)
        throw LengthMismatch("image " + path + " is " + std::to_string(img.bytes.size())
                             + " bytes, profile expects " + std::to_string(expected_size));
    return img;
}

void FlashImage::save(const std::string& path) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error("cannot write image " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::string_view read_status_name(ReadStatus s)
{
    switch (s) {
    case ReadStatus::Ok: return "ok";
    case ReadStatus::SecurityDenied: return "security_denied";
    case ReadStatus::NotReadable: return "not_readable";
    case ReadStatus::AddressOutOfRange: return "address_out_of_range";
    }
    return "?";
}

std::string_view write_status_name(WriteStatus s)
{
    switch (s) {
    case WriteStatus::Ok: return "ok";
    case WriteStatus::SecurityDenied: return "security_denied";
    case WriteStatus::WriteProtected: return "write_protected";
    case WriteStatus::AddressOutOfRange: return "address_out_of_range";
    }
    return "?";
}

std::string_view boot_phase_name(BootPhase p)
{
    switch (p) {
    case BootPhase::Por: return "POR";
    case BootPhase::FlashFetch: return "FlashFetch";
    case BootPhase::AesDecrypt: return "AesDecrypt";
    case BootPhase::CrcCheck: return "CrcCheck";
    case BootPhase::Configure: return "Configure";
    case BootPhase::Fail: return "Fail";
    }
    return "?";
}

Device::Device(DeviceProfile profile, FlashImage image)
    : profile_(std::move(profile)), flash_(std::move(image))
{
    if (flash_.size() != profile_.flash_size())
        throw LengthMismatch("flash image is " + std::to_string(flash_.size())
                             + " bytes, profile expects " + std::to_string(profile_.flash_size()));
    power_cycle();
}

void Device::load_image(FlashImage image)
{
    if (image.size() != profile_.flash_size())
        throw LengthMismatch("flash image size does not match profile");
    flash_ = std::move(image);
    power_cycle();
}

FuseSet Device::stored_fuses() const
{
    FuseSet f;
    f.verify_protect = marker_at(flash_.bytes, kVerifyProtectSlot);
    f.encrypted_pof_only = marker_at(flash_.bytes, kEncryptedPofOnlySlot);
    f.jtag_secure = marker_at(flash_.bytes, kJtagSecureSlot);
    if (marker_at(flash_.bytes, kEncryptionSlot)) {
        AesKey field{};
        std::copy_n(flash_.bytes.begin() + kKeySlot, 16, field.begin());
        f.aes_key = forensics::ScrambleMap::observed().unscramble(field);
    }
    return f;
}

FuseSet Device::effective_fuses() const
{
    FuseSet f = stored_fuses();
    for (Fuse fuse : kAllFuses)
        if (overrides_[static_cast<std::size_t>(fuse)])
            f.set(fuse, false);
    return f;
}

ReadResult Device::read_flash(std::uint32_t addr, AccessPath path)
{
    const Region* region = profile_.regions.find(addr);
    if (!region)
        return {ReadStatus::AddressOutOfRange, 0};
    if (stimulus_)
        if (auto effect = stimulus_->before_read(addr))
            apply_fault(*effect);

    const FuseSet f = effective_fuses();
    switch (region->access) {
    case AccessClass::SystemArea:
        return {ReadStatus::NotReadable, 0};
    case AccessClass::UserFlash:
    case AccessClass::Shadow:
        if (f.jtag_secure)
            return {ReadStatus::SecurityDenied, 0};
        break;
    case AccessClass::ConfigFlash:
        if ((f.verify_protect && path == AccessPath::DirectJtag)
            || (f.verify_protect && f.encrypted_pof_only) || f.jtag_secure)
            return {ReadStatus::SecurityDenied, 0};
        break;
    }
    std::uint8_t value = flash_.bytes[addr];
    if (pending_read_corrupt_) {
        value ^= *pending_read_corrupt_;
        pending_read_corrupt_.reset();
    }
    return {ReadStatus::Ok, value};
}

WriteStatus Device::write_flash(std::uint32_t addr, std::uint8_t value)
{
    const Region* region = profile_.regions.find(addr);
    if (!region)
        return WriteStatus::AddressOutOfRange;
    if (effective_fuses().jtag_secure)
        return WriteStatus::SecurityDenied;
    switch (region->access) {
    case AccessClass::Shadow:
        return WriteStatus::WriteProtected;
    case AccessClass::SystemArea:
        if (!system_write_armed_)
            return WriteStatus::WriteProtected;
        system_write_armed_ = false;
        break;
    case AccessClass::UserFlash:
    case AccessClass::ConfigFlash:
        break;
    }
    flash_.bytes[addr] &= value;
    return WriteStatus::Ok;
}

WriteStatus Device::program_word(std::uint32_t addr, std::uint32_t value)
{
    const Region* region = profile_.regions.find(addr);
    if (!region || !region->contains(addr + 3))
        return WriteStatus::AddressOutOfRange;
    if (effective_fuses().jtag_secure)
        return WriteStatus::SecurityDenied;
    switch (region->access) {
    case AccessClass::Shadow:
        return WriteStatus::WriteProtected;
    case AccessClass::SystemArea:
        if (!system_write_armed_)
            return WriteStatus::WriteProtected;
        system_write_armed_ = false;
        break;
    case AccessClass::UserFlash:
    case AccessClass::ConfigFlash:
        break;
    }
    for (std::uint32_t i = 0; i < 4; ++i)
        flash_.bytes[addr + i] &= static_cast<std::uint8_t>(value >> (8 * i));
    return WriteStatus::Ok;
}

void Device::chip_erase(double terminate_at)
{
    if (!(terminate_at > 0.0))
        return;
    if (terminate_at >= 1.0) {
        std::fill(flash_.bytes.begin(), flash_.bytes.end(), 0xFF);
        system_write_armed_ = true;
        return;
    }
    const Region* system = profile_.regions.find(AccessClass::SystemArea);
    if (system && terminate_at >= profile_.system_erase_point) {
        std::fill(flash_.bytes.begin() + system->start, flash_.bytes.begin() + system->end + 1, 0xFF);
        system_write_armed_ = true;
    }
    // Each programmed bit completes its erase once the erasure curve passes the bit's
    // phase, a fixed pseudo-random value in [0, 1) per (seed, address, bit).
    const double erased = profile_.erasure_curve(terminate_at);
    const auto threshold = static_cast<std::uint64_t>(std::ldexp(erased, 64));
    const std::uint64_t seed = crypto::mix64(profile_.remanence_seed);
    for (std::uint32_t addr = 0; addr < flash_.size(); ++addr) {
        if (system && system->contains(addr))
            continue;
        std::uint8_t b = flash_.bytes[addr];
        if (b == 0xFF)
            continue;
        for (unsigned bit = 0; bit < 8; ++bit) {
            if (b & (1u << bit))
                continue;
            std::uint64_t phase = crypto::mix64(seed ^ (std::uint64_t{addr} * 8 + bit));
            if (phase < threshold)
                b |= static_cast<std::uint8_t>(1u << bit);
        }
        flash_.bytes[addr] = b;
    }
}

IrBehavior Device::handle_ir(std::uint32_t opcode) const
{
    IrBehavior b;
    b.opcode = opcode;
    const Instruction* ins = profile_.find_opcode(opcode);
    if (!ins) {
        b.action = IrAction::Bypass;
        b.name = "UNKNOWN";
        b.dr_length = 1;
        return b;
    }
    b.action = ins->action;
    b.name = ins->name;
    if (jtag_locked() && !is_boundary_scan(ins->action)) {
        b.action = IrAction::Bypass;
        b.secured = true;
    }
    b.dr_length = dr_length_for(b);
    if (ins->action == IrAction::Private && !b.secured)
        b.dr_length = ins->dr_length;
    return b;
}

std::uint32_t Device::dr_length_for(const IrBehavior& b) const
{
    switch (b.action) {
    case IrAction::Idcode:
    case IrAction::Usercode:
        return 32;
    case IrAction::Sample:
    case IrAction::Extest:
        return profile_.bsr_length;
    case IrAction::AddressShift:
        return kAddressBits;
    case IrAction::FlashRead:
        return kFlashReadBits;
    case IrAction::UserRead:
        return user_design_loaded_ ? kFlashReadBits : 1;
    case IrAction::FlashProgram:
        return kFlashProgramBits;
    case IrAction::Private:
        return 1;
    default:
        return 1;
    }
}

void Device::apply_fault(const FaultEffect& effect)
{
    std::visit(
        [this](const auto& e) {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, FuseFetchCorrupt>) {
                overrides_[static_cast<std::size_t>(e.fuse)] = true;
            } else if constexpr (std::is_same_v<T, ReadCorrupt>) {
                pending_read_corrupt_ = static_cast<std::uint8_t>(pending_read_corrupt_.value_or(0) ^ e.mask);
            } else if constexpr (std::is_same_v<T, ResetFault>) {
                // Core reset: re-runs the boot sequence and fuse fetch. The dedicated JTAG
                // pins keep their TAP state.
                ++reset_count_;
                overrides_ = {};
                pending_read_corrupt_.reset();
            } else {
                if (erase_running_)
                    finish_erase();
                tap_ = tap::TapState::TestLogicReset;
                latched_ir_ = idle_instruction(profile_);
            }
        },
        effect);
}

void Device::power_cycle()
{
    if (erase_running_)
        finish_erase();
    overrides_ = {};
    pending_read_corrupt_.reset();
    tap_ = tap::TapState::TestLogicReset;
    latched_ir_ = idle_instruction(profile_);
    current_ = handle_ir(latched_ir_);
    ir_shift_ = 0;
    address_ = 0;
    last_program_ok_ = false;
}

void Device::finish_erase()
{
    erase_running_ = false;
    chip_erase(erase_progress_);
}

void Device::load_dr(std::uint64_t value, std::size_t length)
{
    dr_.assign(length, 0);
    for (std::size_t i = 0; i < length && i < 64; ++i)
        dr_[i] = static_cast<std::uint8_t>((value >> i) & 1u);
    dr_head_ = 0;
}

bool Device::dr_bit(std::size_t logical) const
{
    return dr_[(dr_head_ + logical) % dr_.size()] != 0;
}

void Device::capture_dr()
{
    current_ = handle_ir(latched_ir_);
    const std::size_t len = current_.dr_length;
    switch (current_.action) {
    case IrAction::Idcode:
        load_dr(profile_.idcode, len);
        break;
    case IrAction::Usercode:
        load_dr(profile_.usercode, len);
        break;
    case IrAction::AddressShift:
        load_dr(address_, len);
        break;
    case IrAction::FlashProgram:
        load_dr(last_program_ok_ ? 1 : 0, len);
        break;
    case IrAction::FlashRead:
    case IrAction::UserRead: {
        if (len == 1) {
            load_dr(0, 1);
            break;
        }
        const AccessPath path = current_.action == IrAction::FlashRead ? AccessPath::DirectJtag
                                                                       : AccessPath::UserModeSramPreload;
        bool valid = true;
        std::uint32_t word = 0;
        for (std::uint32_t i = 0; i < 4; ++i) {
            ReadResult r = read_flash(address_ + i, path);
            valid = valid && r.ok();
            word |= std::uint32_t{r.value} << (8 * i);
        }
        if (!valid)
            word = 0;
        std::uint64_t sector = 0;
        const auto& regions = profile_.regions.regions();
        for (std::size_t i = 0; i < regions.size(); ++i)
            if (regions[i].contains(address_))
                sector = i & 3u;
        load_dr((valid ? 1u : 0u) | (sector << 1) | (std::uint64_t{word} << 3), len);
        address_ += 4;
        break;
    }
    default:
        load_dr(0, len);
        break;
    }
}

void Device::update_dr()
{
    switch (current_.action) {
    case IrAction::AddressShift: {
        std::uint32_t v = 0;
        for (std::size_t i = 0; i < 32; ++i)
            v |= static_cast<std::uint32_t>(dr_bit(i)) << i;
        address_ = v & ~3u;
        break;
    }
    case IrAction::FlashProgram: {
        if (!dr_bit(32))
            break;
        std::uint32_t v = 0;
        for (std::size_t i = 0; i < 32; ++i)
            v |= static_cast<std::uint32_t>(dr_bit(i)) << i;
        last_program_ok_ = program_word(address_, v) == WriteStatus::Ok;
        address_ += 4;
        break;
    }
    default:
        break;
    }
}

void Device::update_ir()
{
    latched_ir_ = ir_shift_ & ((profile_.ir_width >= 32) ? 0xFFFFFFFFu : ((1u << profile_.ir_width) - 1));
    current_ = handle_ir(latched_ir_);
    if (current_.action == IrAction::FlashErase) {
        erase_running_ = true;
        erase_cycles_done_ = 0;
        erase_progress_ = 0.0;
    }
}

bool Device::clock(bool tms, bool tdi)
{
    using S = tap::TapState;
    bool tdo = true;
    switch (tap_) {
    case S::CaptureDR:
        capture_dr();
        break;
    case S::ShiftDR:
        if (dr_.empty())
            load_dr(0, 1);
        tdo = dr_[dr_head_] != 0;
        dr_[dr_head_] = tdi;
        dr_head_ = (dr_head_ + 1) % dr_.size();
        break;
    case S::UpdateDR:
        update_dr();
        break;
    case S::CaptureIR:
        ir_shift_ = profile_.ir_capture;
        break;
    case S::ShiftIR:
        tdo = ir_shift_ & 1u;
        ir_shift_ = (ir_shift_ >> 1) | (static_cast<std::uint32_t>(tdi) << (profile_.ir_width - 1));
        break;
    case S::UpdateIR:
        update_ir();
        break;
    case S::RunTestIdle:
        if (erase_running_) {
            if (tms) {
                finish_erase();
            } else {
                ++erase_cycles_done_;
                erase_progress_ = static_cast<double>(erase_cycles_done_)
                                  / static_cast<double>(profile_.erase_cycles);
                if (erase_cycles_done_ >= profile_.erase_cycles) {
                    erase_progress_ = 1.0;
                    finish_erase();
                }
            }
        }
        break;
    default:
        break;
    }
    tap_ = tap::step(tap_, tms);
    if (tap_ == S::TestLogicReset) {
        if (erase_running_)
            finish_erase();
        latched_ir_ = idle_instruction(profile_);
    }
    return tdo;
}

bool SimTransport::clock(bool tms, bool tdi)
{
    bool tdo = device_.clock(tms, tdi);
    ++cycles_;
    if (!scheduled_.empty())
        fire_due();
    return tdo;
}

BitVector SimTransport::shift(const BitVector& tms, const BitVector& tdi)
{
    if (tms.size() != tdi.size())
        throw LengthMismatch("shift: TMS and TDI lengths differ");
    BitVector tdo(tms.size());
    for (std::size_t i = 0; i < tms.size(); ++i) {
        bool out = device_.clock(tms.get(i), tdi.get(i));
        if (out)
            tdo.set(i, true);
        ++cycles_;
        if (!scheduled_.empty())
            fire_due();
    }
    return tdo;
}

void SimTransport::schedule_fault(std::uint64_t after_cycles, FaultEffect effect)
{
    scheduled_.push_back({cycles_ + after_cycles, effect});
    if (after_cycles == 0)
        fire_due();
}

void SimTransport::fire_due()
{
    for (auto it = scheduled_.begin(); it != scheduled_.end();) {
        if (it->at <= cycles_) {
            device_.apply_fault(it->effect);
            it = scheduled_.erase(it);
        } else {
            ++it;
        }
    }
}

} // namespace maxsec::device
