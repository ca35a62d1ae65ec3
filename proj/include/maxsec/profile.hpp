#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace maxsec {

enum class AccessClass : std::uint8_t { SystemArea, UserFlash, ConfigFlash, Shadow };

std::string_view access_class_name(AccessClass c);

struct Region {
    std::string name;
    std::uint32_t start = 0;
    std::uint32_t end = 0; // inclusive
    AccessClass access = AccessClass::UserFlash;

    std::uint32_t size() const { return end - start + 1; }
    bool contains(std::uint32_t addr) const { return addr >= start && addr <= end; }
};

// Ordered, contiguous from address 0, non-overlapping.
class RegionMap {
public:
    RegionMap() = default;
    explicit RegionMap(std::vector<Region> regions);

    const std::vector<Region>& regions() const { return regions_; }
    std::uint32_t flash_size() const { return regions_.empty() ? 0 : regions_.back().end + 1; }
    const Region* find(std::uint32_t addr) const;
    const Region* find(AccessClass c) const;

private:
    std::vector<Region> regions_;
};

// What the device does with a latched instruction.
enum class IrAction : std::uint8_t {
    Bypass,
    Idcode,
    Usercode,
    Sample,   // boundary-scan register
    Extest,   // boundary-scan register
    Clamp,    // bypass register, boundary related
    Highz,    // bypass register, boundary related
    IscEnable,
    IscDisable,
    IscNoop,
    AddressShift,
    FlashRead,
    FlashProgram,
    FlashErase,
    UserRead,
    Private,  // register of profile-configured length, no side effects
};

std::string_view ir_action_name(IrAction a);
std::optional<IrAction> parse_ir_action(std::string_view name);
bool is_boundary_scan(IrAction a);

struct Instruction {
    std::string name;
    std::uint32_t opcode = 0;
    IrAction action = IrAction::Bypass;
    std::uint32_t dr_length = 1; // only meaningful for Private
};

// Flash DR layouts used by the simulated target.
//   FlashRead/UserRead : bit 0 valid, bits 1-2 sector index, bits 3-34 data word (LE bytes)
//   FlashProgram       : bits 0-31 data word, bit 32 commit; captures bit 0 = last program accepted
//   AddressShift       : 32-bit byte address (word aligned)
inline constexpr std::uint32_t kFlashReadBits = 35;
inline constexpr std::uint32_t kFlashProgramBits = 33;
inline constexpr std::uint32_t kAddressBits = 32;

struct DeviceProfile {
    std::string name;
    std::uint32_t idcode = 0;
    std::uint32_t usercode = 0xFFFFFFFF;
    std::uint32_t ir_width = 10;
    std::uint32_t ir_capture = 0x155;
    std::uint32_t bsr_length = 1;
    RegionMap regions;
    std::vector<Instruction> instructions;

    // Boot bitstream layout: CFM starts with a 16-byte plaintext header, then frames of
    // this many bytes (last 16 bytes of each frame are the CRC trailer).
    std::uint32_t cfm_frame_bytes = 2048;

    // Erase physics.
    std::uint64_t erase_cycles = 65536;
    double erase_exponent = 4.0;
    double system_erase_point = 0.05;
    double remanence_point = 0.35;
    std::uint64_t remanence_seed = 0x4D415831;

    std::uint32_t flash_size() const { return regions.flash_size(); }
    const Instruction* find_opcode(std::uint32_t opcode) const;
    const Instruction* find_action(IrAction action) const;
    const Instruction* find_name(std::string_view name) const;
    std::uint32_t bypass_opcode() const { return (1u << ir_width) - 1; }

    // Fraction of programmed bits erased when the erase is stopped at `t`.
    double erasure_curve(double t) const;
};

DeviceProfile parse_profile(std::string_view text);
std::string format_profile(const DeviceProfile& p);

// Built-in profiles: "10m04", "10m08", "10m16".
std::optional<DeviceProfile> builtin_profile(std::string_view name);
std::vector<std::string> builtin_profile_names();

// Resolves a profile by file path, then $MAXSEC_PROFILE_DIR/<name>.profile, then built-ins.
DeviceProfile load_profile(const std::string& name_or_path);

// Known-command list: one "<hex opcode> <name>" per line, '#' comments.
struct KnownCommand {
    std::uint32_t opcode;
    std::string name;
};
std::vector<KnownCommand> parse_known_commands(std::string_view text);
std::string format_known_commands(const DeviceProfile& p);

} // namespace maxsec
