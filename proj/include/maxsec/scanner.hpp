#pragma once

#include "maxsec/device.hpp"
#include "maxsec/profile.hpp"
#include "maxsec/tap.hpp"

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace maxsec::scan {

inline constexpr std::size_t kMaxDrBits = 4096;
inline constexpr std::uint8_t kDrMarker = 0xA5;

// Latches `opcode` and shifts a marker followed by zeros through DR. Returns the number of
// clocks until the marker re-emerges, or nullopt when it does not within `max_bits`.
std::optional<std::size_t> measure_dr_length(tap::Transport& t, std::uint32_t ir_width,
                                             std::uint32_t opcode, std::size_t max_bits = kMaxDrBits);

enum class IrClass : std::uint8_t { Documented, Undocumented, BypassLike };
std::string_view ir_class_name(IrClass c);

struct IrSurveyEntry {
    std::uint32_t opcode = 0;
    std::optional<std::size_t> dr_length; // nullopt: unmeasurable
    IrClass classification = IrClass::BypassLike;
    std::string name; // from the known list, empty otherwise
    bool operator==(const IrSurveyEntry&) const = default;
};

struct SurveyOptions {
    // Opcodes to visit, in this order. Empty: all 2^ir_width opcodes ascending.
    std::vector<std::uint32_t> opcodes;
    std::size_t max_dr_bits = kMaxDrBits;
    // Checked between opcodes; when set the survey returns what it has so far.
    const std::atomic<bool>* cancel = nullptr;
};

// Entries are sorted by opcode regardless of visit order.
std::vector<IrSurveyEntry> enumerate_ir(tap::Transport& t, std::uint32_t ir_width,
                                        std::span<const KnownCommand> known,
                                        const SurveyOptions& options = {});

// Flash access through the profile's ISC instructions.
class FlashPort {
public:
    struct Word {
        bool valid = false;
        std::uint8_t sector = 0;
        std::uint32_t data = 0;
    };

    // Throws UnsupportedProfile when the profile lacks the address/read/program opcodes.
    FlashPort(tap::Transport& t, const DeviceProfile& profile);

    tap::Transport& transport() { return t_; }
    bool has_user_path() const { return user_read_.has_value(); }

    void set_address(std::uint32_t addr);
    // Reads `count` consecutive words from `addr` (word aligned).
    std::vector<Word> read(std::uint32_t addr, std::size_t count, bool user_path = false);
    // Programs one word (AND semantics on the target). Returns the target's status bit.
    bool program(std::uint32_t addr, std::uint32_t value);
    // Starts an erase and stops it after `idle_cycles` clocks in Run-Test/Idle.
    void erase(std::uint64_t idle_cycles);

private:
    void load_ir(std::uint32_t opcode);

    tap::Transport& t_;
    std::uint32_t ir_width_;
    std::uint32_t address_shift_;
    std::uint32_t flash_read_;
    std::uint32_t flash_program_;
    std::optional<std::uint32_t> flash_erase_;
    std::optional<std::uint32_t> user_read_;
};

enum class ObservedClass : std::uint8_t { NotReadable, ReadWrite, ReadProtectable, ReadOnly };
std::string_view observed_class_name(ObservedClass c);

struct ProbedRegion {
    std::uint32_t start = 0;
    std::uint32_t end = 0; // inclusive
    ObservedClass observed = ObservedClass::NotReadable;
    std::uint8_t sector = 0; // sector index reported by the read register
    bool operator==(const ProbedRegion&) const = default;
};

struct MapOptions {
    std::uint32_t coarse_step = 0x100;
    // Also try the user-mode read path (USER1) when the target exposes it.
    bool use_user_path = false;
    // Allows one sacrificial bit-clear per unreadable run to test writability.
    bool allow_destructive = false;
};

std::vector<ProbedRegion> map_memory(tap::Transport& t, const DeviceProfile& profile,
                                     const MapOptions& options = {});

struct FuseInference {
    // Every fuse assignment consistent with the observations (keys are not inferred).
    std::vector<device::FuseSet> candidates;
    std::vector<std::string> evidence;
};

FuseInference infer_fuses(tap::Transport& t, const DeviceProfile& profile);

struct RemanenceResult {
    std::vector<std::uint8_t> recovered; // flash-sized, unreadable bytes left at 0xFF
    std::uint64_t programmed_bits = 0;   // zero bits in the reference CFM
    std::uint64_t recovered_bits = 0;    // of those, still zero after the erase
    double fraction = 0.0;
};

// Stops a JTAG erase after round(terminate_at * erase_cycles) idle clocks, then reads all
// readable flash. The recovered fraction is measured over CFM against `reference`, or
// against a JTAG read taken before the erase when no reference is given.
RemanenceResult recover_remanent(tap::Transport& t, const DeviceProfile& profile, double terminate_at,
                                 const device::FlashImage* reference = nullptr);

} // namespace maxsec::scan
