#pragma once

#include "maxsec/crypto.hpp"
#include "maxsec/profile.hpp"
#include "maxsec/tap.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace maxsec::device {

using crypto::AesKey;

enum class Fuse : std::uint8_t { VerifyProtect, EncryptedPofOnly, JtagSecure };

inline constexpr std::array<Fuse, 3> kAllFuses = {Fuse::VerifyProtect, Fuse::EncryptedPofOnly,
                                                  Fuse::JtagSecure};

std::string_view fuse_name(Fuse f);

// System-area slots holding the 32-bit activation value (same offsets as in POF images).
inline constexpr std::uint32_t kKeySlot = 0x0000;
inline constexpr std::uint32_t kEncryptedPofOnlySlot = 0x0014;
inline constexpr std::uint32_t kJtagSecureSlot = 0x001C;
inline constexpr std::uint32_t kEncryptionSlot = 0x0028;
inline constexpr std::uint32_t kVerifyProtectSlot = 0x0030;

std::uint32_t fuse_slot(Fuse f);

struct FuseSet {
    bool verify_protect = false;
    bool encrypted_pof_only = false;
    bool jtag_secure = false;
    std::optional<AesKey> aes_key;

    bool get(Fuse f) const;
    void set(Fuse f, bool on);

    // Bit 0 VP, bit 1 EPOF, bit 2 JTAG secure.
    static FuseSet from_bits(unsigned bits);
    unsigned bits() const;
    std::string describe() const;

    bool operator==(const FuseSet&) const = default;
};

struct FlashImage {
    std::vector<std::uint8_t> bytes;

    static FlashImage erased(std::size_t size) { return {std::vector<std::uint8_t>(size, 0xFF)}; }
    // Raw binary of exactly `expected_size` bytes.
    static FlashImage load(const std::string& path, std::size_t expected_size);
    void save(const std::string& path) const;

    std::size_t size() const { return bytes.size(); }
};

enum class AccessPath : std::uint8_t { DirectJtag, UserModeSramPreload };

enum class ReadStatus : std::uint8_t { Ok, SecurityDenied, NotReadable, AddressOutOfRange };
enum class WriteStatus : std::uint8_t { Ok, SecurityDenied, WriteProtected, AddressOutOfRange };

std::string_view read_status_name(ReadStatus s);
std::string_view write_status_name(WriteStatus s);

struct ReadResult {
    ReadStatus status = ReadStatus::Ok;
    std::uint8_t value = 0;
    bool ok() const { return status == ReadStatus::Ok; }
};

struct FuseFetchCorrupt {
    Fuse fuse;
};
struct ReadCorrupt {
    std::uint8_t mask;
};
struct ResetFault {};
struct JtagUpset {};
using FaultEffect = std::variant<FuseFetchCorrupt, ReadCorrupt, ResetFault, JtagUpset>;

enum class BootPhase : std::uint8_t { Por, FlashFetch, AesDecrypt, CrcCheck, Configure, Fail };
std::string_view boot_phase_name(BootPhase p);

struct BootEvent {
    BootPhase phase;
    std::uint32_t address = 0; // flash address of the fetched word / decrypted block / frame
    bool operator==(const BootEvent&) const = default;
};

struct BootResult {
    bool success = false;
    std::vector<BootEvent> events;
    std::optional<std::size_t> failed_frame;
    bool encrypted = false;
};

struct IrBehavior {
    std::uint32_t opcode = 0;
    IrAction action = IrAction::Bypass;
    std::uint32_t dr_length = 1;
    std::string name;
    bool secured = false; // forced to BYPASS by JTAG security
};

// Hook consulted before every flash byte read; used by fault campaigns.
class ReadStimulus {
public:
    virtual ~ReadStimulus() = default;
    virtual std::optional<FaultEffect> before_read(std::uint32_t addr) = 0;
};

// Bit-accurate simulated MAX 10 target. Single owner; not thread-safe.
class Device {
public:
    Device(DeviceProfile profile, FlashImage image);

    const DeviceProfile& profile() const { return profile_; }
    const FlashImage& flash() const { return flash_; }
    const RegionMap& regions() const { return profile_.regions; }

    // Replaces the flash content (programmer fixture) and power cycles.
    void load_image(FlashImage image);

    // Fuse state as stored in the system area.
    FuseSet stored_fuses() const;
    // Stored state with session overrides applied.
    FuseSet effective_fuses() const;
    bool fuse_overridden(Fuse f) const { return overrides_[static_cast<std::size_t>(f)]; }

    bool user_design_loaded() const { return user_design_loaded_; }
    void set_user_design_loaded(bool on) { user_design_loaded_ = on; }

    ReadResult read_flash(std::uint32_t addr, AccessPath path);
    WriteStatus write_flash(std::uint32_t addr, std::uint8_t value);
    // Word program (4 bytes LE). Counts as one operation for the system-area write-once rule.
    WriteStatus program_word(std::uint32_t addr, std::uint32_t value);
    void chip_erase(double terminate_at);
    bool system_write_armed() const { return system_write_armed_; }

    BootResult boot() const;
    IrBehavior handle_ir(std::uint32_t opcode) const;
    void apply_fault(const FaultEffect& effect);
    void power_cycle();

    void set_read_stimulus(ReadStimulus* stimulus) { stimulus_ = stimulus; }
    std::uint64_t reset_count() const { return reset_count_; }

    // One TCK rising edge. Returns TDO.
    bool clock(bool tms, bool tdi);
    tap::TapState tap_state() const { return tap_; }
    std::uint32_t latched_ir() const { return latched_ir_; }
    std::uint32_t address_register() const { return address_; }
    double erase_progress() const { return erase_progress_; }
    bool erase_running() const { return erase_running_; }

private:
    bool jtag_locked() const { return effective_fuses().jtag_secure; }
    std::uint32_t dr_length_for(const IrBehavior& b) const;
    void capture_dr();
    void update_dr();
    void update_ir();
    void finish_erase();
    void load_dr(std::uint64_t value, std::size_t length);
    bool dr_bit(std::size_t logical) const;

    DeviceProfile profile_;
    FlashImage flash_;
    std::array<bool, 3> overrides_{};
    bool system_write_armed_ = false;
    bool user_design_loaded_ = false;
    std::optional<std::uint8_t> pending_read_corrupt_;
    ReadStimulus* stimulus_ = nullptr;
    std::uint64_t reset_count_ = 0;

    tap::TapState tap_ = tap::TapState::TestLogicReset;
    std::uint32_t ir_shift_ = 0;
    std::uint32_t latched_ir_ = 0;
    IrBehavior current_{};
    std::vector<std::uint8_t> dr_; // ring buffer, one bit per element
    std::size_t dr_head_ = 0;
    std::uint32_t address_ = 0;
    bool last_program_ok_ = false;

    bool erase_running_ = false;
    std::uint64_t erase_cycles_done_ = 0;
    double erase_progress_ = 0.0;
};

// The Transport that drives a simulated device directly.
class SimTransport final : public tap::Transport {
public:
    explicit SimTransport(Device device) : device_(std::move(device)) {}

    bool clock(bool tms, bool tdi) override;
    BitVector shift(const BitVector& tms, const BitVector& tdi) override;
    std::uint64_t cycles() const override { return cycles_; }

    Device& device() { return device_; }
    const Device& device() const { return device_; }

    // Applies `effect` to the device after `after_cycles` further clocks.
    void schedule_fault(std::uint64_t after_cycles, FaultEffect effect);

private:
    void fire_due();

    Device device_;
    std::uint64_t cycles_ = 0;
    struct Scheduled {
        std::uint64_t at;
        FaultEffect effect;
    };
    std::vector<Scheduled> scheduled_;
};

} // namespace maxsec::device
