#include "maxsec/profile.hpp"

#include "maxsec/errors.hpp"
#include "text_util.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace maxsec {

using detail::parse_double;
using detail::parse_uint;
using detail::split_ws;
using detail::trim;

namespace {

constexpr std::array<std::pair<AccessClass, std::string_view>, 4> kAccessNames = {{
    {AccessClass::SystemArea, "SystemArea"},
    {AccessClass::UserFlash, "UserFlash"},
    {AccessClass::ConfigFlash, "ConfigFlash"},
    {AccessClass::Shadow, "Shadow"},
}};

constexpr std::array<std::pair<IrAction, std::string_view>, 16> kActionNames = {{
    {IrAction::Bypass, "bypass"},
    {IrAction::Idcode, "idcode"},
    {IrAction::Usercode, "usercode"},
    {IrAction::Sample, "sample"},
    {IrAction::Extest, "extest"},
    {IrAction::Clamp, "clamp"},
    {IrAction::Highz, "highz"},
    {IrAction::IscEnable, "isc_enable"},
    {IrAction::IscDisable, "isc_disable"},
    {IrAction::IscNoop, "isc_noop"},
    {IrAction::AddressShift, "address_shift"},
    {IrAction::FlashRead, "flash_read"},
    {IrAction::FlashProgram, "flash_program"},
    {IrAction::FlashErase, "flash_erase"},
    {IrAction::UserRead, "user_read"},
    {IrAction::Private, "private"},
}};

std::optional<AccessClass> parse_access(std::string_view s)
{
    if (s == "system")
        return AccessClass::SystemArea;
    if (s == "user")
        return AccessClass::UserFlash;
    if (s == "config")
        return AccessClass::ConfigFlash;
    if (s == "shadow")
        return AccessClass::Shadow;
    for (auto [c, n] : kAccessNames)
        if (n == s)
            return c;
    return std::nullopt;
}

std::string_view access_keyword(AccessClass c)
{
    switch (c) {
    case AccessClass::SystemArea: return "system";
    case AccessClass::UserFlash: return "user";
    case AccessClass::ConfigFlash: return "config";
    case AccessClass::Shadow: return "shadow";
    }
    return "user";
}

// Instruction set shared by the modeled MAX 10 parts.
constexpr std::string_view kInstructionSet = R"(instruction = PULSE_NCONFIG 0x001 isc_noop
instruction = SAMPLE_PRELOAD 0x005 sample
instruction = IDCODE 0x006 idcode
instruction = USERCODE 0x007 usercode
instruction = CLAMP 0x00A clamp
instruction = HIGHZ 0x00B highz
instruction = USER0 0x00C isc_noop
instruction = CONFIG_IO 0x00D isc_noop
instruction = USER1 0x00E user_read
instruction = EXTEST 0x00F extest
instruction = ISC_DISABLE 0x201 isc_disable
instruction = ISC_ADDRESS_SHIFT 0x203 address_shift
instruction = ISC_READ 0x205 flash_read
instruction = ISC_NOOP 0x210 isc_noop
instruction = ISC_ENABLE 0x2CC isc_enable
instruction = ISC_ERASE 0x2F2 flash_erase
instruction = ISC_PROGRAM 0x2F4 flash_program
instruction = DSM_VERIFY 0x307 isc_noop
instruction = DSM_CLEAR 0x3F2 isc_noop
instruction = BYPASS 0x3FF bypass
private = 0x008 24
private = 0x015 8
private = 0x090 48
private = 0x091 40
private = 0x1EE 96
private = 0x206 12
private = 0x207 20
private = 0x2B0 64
private = 0x2D0 128
private = 0x303 17
private = 0x3F5 2
)";

constexpr std::string_view kErasePhysics = R"(cfm_frame_bytes = 2048
erase_cycles = 65536
erase_exponent = 4
system_erase_point = 0.05
remanence_point = 0.35
remanence_seed = 0x4D415831
)";

const std::string& profile_10m08()
{
    static const std::string text = std::string(R"(# Intel MAX 10 10M08 (single supply, E144)
name = 10m08
idcode = 0x031820DD
usercode = 0xFFFFFFFF
ir_width = 10
ir_capture = 0x155
bsr_length = 432
region = system 0x00000 0x007FF system
region = ufm 0x00800 0x1CFFF user
region = cfm 0x1D000 0x4E7FF config
region = shadow 0x4E800 0x4EFFF shadow
)") + std::string(kErasePhysics) + std::string(kInstructionSet);
    return text;
}

const std::string& profile_10m04()
{
    static const std::string text = std::string(R"(# Intel MAX 10 10M04 (single supply, E144); same flash layout as 10M08
name = 10m04
idcode = 0x031810DD
usercode = 0xFFFFFFFF
ir_width = 10
ir_capture = 0x155
bsr_length = 432
region = system 0x00000 0x007FF system
region = ufm 0x00800 0x1CFFF user
region = cfm 0x1D000 0x4E7FF config
region = shadow 0x4E800 0x4EFFF shadow
)") + std::string(kErasePhysics) + std::string(kInstructionSet);
    return text;
}

const std::string& profile_10m16()
{
    static const std::string text = std::string(R"(# Intel MAX 10 10M16 (E144 single supply / F256 dual supply)
name = 10m16
idcode = 0x031830DD
usercode = 0xFFFFFFFF
ir_width = 10
ir_capture = 0x155
bsr_length = 1020
region = system 0x00000 0x007FF system
region = ufm 0x00800 0x1FFFF user
region = cfm 0x20000 0x8A7FF config
region = shadow 0x8A800 0x8AFFF shadow
)") + std::string(kErasePhysics) + std::string(kInstructionSet);
    return text;
}

} // namespace

std::string_view access_class_name(AccessClass c)
{
    for (auto [k, n] : kAccessNames)
        if (k == c)
            return n;
    return "?";
}

std::string_view ir_action_name(IrAction a)
{
    for (auto [k, n] : kActionNames)
        if (k == a)
            return n;
    return "?";
}

std::optional<IrAction> parse_ir_action(std::string_view name)
{
    for (auto [k, n] : kActionNames)
        if (n == name)
            return k;
    return std::nullopt;
}

bool is_boundary_scan(IrAction a)
{
    switch (a) {
    case IrAction::Bypass:
    case IrAction::Idcode:
    case IrAction::Usercode:
    case IrAction::Sample:
    case IrAction::Extest:
    case IrAction::Clamp:
    case IrAction::Highz:
        return true;
    default:
        return false;
    }
}

RegionMap::RegionMap(std::vector<Region> regions) : regions_(std::move(regions))
{
    std::uint32_t expect = 0;
    for (const auto& r : regions_) {
        if (r.start != expect)
            throw Error("region '" + r.name + "' does not start where the previous region ended");
        if (r.end < r.start)
            throw Error("region '" + r.name + "' ends before it starts");
        expect = r.end + 1;
    }
}

const Region* RegionMap::find(std::uint32_t addr) const
{
    auto it = std::upper_bound(regions_.begin(), regions_.end(), addr,
                               [](std::uint32_t a, const Region& r) { return a < r.start; });
    if (it == regions_.begin())
        return nullptr;
    --it;
    return it->contains(addr) ? &*it : nullptr;
}

const Region* RegionMap::find(AccessClass c) const
{
    for (const auto& r : regions_)
        if (r.access == c)
            return &r;
    return nullptr;
}

const Instruction* DeviceProfile::find_opcode(std::uint32_t opcode) const
{
    for (const auto& i : instructions)
        if (i.opcode == opcode)
            return &i;
    return nullptr;
}

const Instruction* DeviceProfile::find_action(IrAction action) const
{
    for (const auto& i : instructions)
        if (i.action == action)
            return &i;
    return nullptr;
}

const Instruction* DeviceProfile::find_name(std::string_view name) const
{
    for (const auto& i : instructions)
        if (i.name == name)
            return &i;
    return nullptr;
}

double DeviceProfile::erasure_curve(double t) const
{
    if (t <= 0.0)
        return 0.0;
    if (t >= 1.0)
        return 1.0;
    return std::pow(t, erase_exponent);
}

DeviceProfile parse_profile(std::string_view text)
{
    DeviceProfile p;
    std::vector<Region> regions;
    std::size_t lineno = 0;
    for (auto raw : detail::split_lines(text)) {
        ++lineno;
        auto line = trim(raw);
        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = trim(line.substr(0, hash));
        if (line.empty())
            continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ParseError(lineno, "expected 'key = value'");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        auto fields = split_ws(value);

        auto need_uint = [&](std::string_view s) {
            auto v = parse_uint(s);
            if (!v)
                throw ParseError(lineno, "bad number '" + std::string(s) + "'");
            return *v;
        };
        auto need_double = [&](std::string_view s) {
            auto v = parse_double(s);
            if (!v)
                throw ParseError(lineno, "bad number '" + std::string(s) + "'");
            return *v;
        };

        if (key == "name") {
            p.name = std::string(value);
        } else if (key == "idcode") {
            p.idcode = static_cast<std::uint32_t>(need_uint(value));
        } else if (key == "usercode") {
            p.usercode = static_cast<std::uint32_t>(need_uint(value));
        } else if (key == "ir_width") {
            p.ir_width = static_cast<std::uint32_t>(need_uint(value));
            if (p.ir_width < 2 || p.ir_width > 32)
                throw ParseError(lineno, "ir_width must be in [2, 32]");
        } else if (key == "ir_capture") {
            p.ir_capture = static_cast<std::uint32_t>(need_uint(value));
        } else if (key == "bsr_length") {
            p.bsr_length = static_cast<std::uint32_t>(need_uint(value));
        } else if (key == "region") {
            if (fields.size() != 4)
                throw ParseError(lineno, "region expects <name> <start> <end> <class>");
            auto cls = parse_access(fields[3]);
            if (!cls)
                throw ParseError(lineno, "unknown access class '" + std::string(fields[3]) + "'");
            regions.push_back({std::string(fields[0]), static_cast<std::uint32_t>(need_uint(fields[1])),
                               static_cast<std::uint32_t>(need_uint(fields[2])), *cls});
        } else if (key == "instruction") {
            if (fields.size() != 3 && fields.size() != 4)
                throw ParseError(lineno, "instruction expects <name> <opcode> <action> [dr_length]");
            auto action = parse_ir_action(fields[2]);
            if (!action)
                throw ParseError(lineno, "unknown action '" + std::string(fields[2]) + "'");
            Instruction ins{std::string(fields[0]), static_cast<std::uint32_t>(need_uint(fields[1])),
                            *action, 1};
            if (fields.size() == 4)
                ins.dr_length = static_cast<std::uint32_t>(need_uint(fields[3]));
            p.instructions.push_back(std::move(ins));
        } else if (key == "private") {
            if (fields.size() != 2)
                throw ParseError(lineno, "private expects <opcode> <dr_length>");
            auto opcode = static_cast<std::uint32_t>(need_uint(fields[0]));
            auto len = static_cast<std::uint32_t>(need_uint(fields[1]));
            if (len == 0)
                throw ParseError(lineno, "private register length must be positive");
            p.instructions.push_back({"PRIVATE_" + detail::hex(opcode, 3).substr(2), opcode,
                                      IrAction::Private, len});
        } else if (key == "cfm_frame_bytes") {
            p.cfm_frame_bytes = static_cast<std::uint32_t>(need_uint(value));
            if (p.cfm_frame_bytes < 32 || p.cfm_frame_bytes % 16 != 0)
                throw ParseError(lineno, "cfm_frame_bytes must be a multiple of 16, at least 32");
        } else if (key == "erase_cycles") {
            p.erase_cycles = need_uint(value);
            if (p.erase_cycles == 0)
                throw ParseError(lineno, "erase_cycles must be positive");
        } else if (key == "erase_exponent") {
            p.erase_exponent = need_double(value);
        } else if (key == "system_erase_point") {
            p.system_erase_point = need_double(value);
        } else if (key == "remanence_point") {
            p.remanence_point = need_double(value);
        } else if (key == "remanence_seed") {
            p.remanence_seed = need_uint(value);
        } else {
            throw ParseError(lineno, "unknown key '" + std::string(key) + "'");
        }
    }
    if (p.name.empty())
        throw ParseError(lineno, "profile has no name");
    if (regions.empty())
        throw ParseError(lineno, "profile has no regions");
    try {
        p.regions = RegionMap(std::move(regions));
    } catch (const Error& e) {
        throw ParseError(lineno, e.what());
    }
    std::map<std::uint32_t, std::string> seen;
    for (const auto& ins : p.instructions) {
        if (ins.opcode >= (1u << p.ir_width))
            throw ParseError(lineno, "opcode of " + ins.name + " exceeds IR width");
        if (!seen.emplace(ins.opcode, ins.name).second)
            throw ParseError(lineno, "duplicate opcode for " + ins.name);
    }
    return p;
}

std::string format_profile(const DeviceProfile& p)
{
    std::ostringstream os;
    os << "name = " << p.name << '\n'
       << "idcode = " << detail::hex(p.idcode, 8) << '\n'
       << "usercode = " << detail::hex(p.usercode, 8) << '\n'
       << "ir_width = " << p.ir_width << '\n'
       << "ir_capture = " << detail::hex(p.ir_capture, 3) << '\n'
       << "bsr_length = " << p.bsr_length << '\n';
    for (const auto& r : p.regions.regions())
        os << "region = " << r.name << ' ' << detail::hex(r.start, 5) << ' ' << detail::hex(r.end, 5)
           << ' ' << access_keyword(r.access) << '\n';
    os << "cfm_frame_bytes = " << p.cfm_frame_bytes << '\n'
       << "erase_cycles = " << p.erase_cycles << '\n'
       << "erase_exponent = " << p.erase_exponent << '\n'
       << "system_erase_point = " << p.system_erase_point << '\n'
       << "remanence_point = " << p.remanence_point << '\n'
       << "remanence_seed = " << detail::hex(p.remanence_seed, 8) << '\n';
    for (const auto& ins : p.instructions) {
        if (ins.action == IrAction::Private)
            os << "private = " << detail::hex(ins.opcode, 3) << ' ' << ins.dr_length << '\n';
        else
            os << "instruction = " << ins.name << ' ' << detail::hex(ins.opcode, 3) << ' '
               << ir_action_name(ins.action) << '\n';
    }
    return os.str();
}

std::optional<DeviceProfile> builtin_profile(std::string_view name)
{
    if (name == "10m08")
        return parse_profile(profile_10m08());
    if (name == "10m04")
        return parse_profile(profile_10m04());
    if (name == "10m16")
        return parse_profile(profile_10m16());
    return std::nullopt;
}

std::vector<std::string> builtin_profile_names()
{
    return {"10m04", "10m08", "10m16"};
}

DeviceProfile load_profile(const std::string& name_or_path)
{
    auto read_file = [](const std::string& path) -> std::optional<std::string> {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            return std::nullopt;
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    if (name_or_path.find('/') != std::string::npos || name_or_path.ends_with(".profile")) {
        auto text = read_file(name_or_path);
        if (!text)
            throw Error("cannot read profile " + name_or_path);
        return parse_profile(*text);
    }
    if (const char* dir = std::getenv("MAXSEC_PROFILE_DIR")) {
        if (auto text = read_file(std::string(dir) + "/" + name_or_path + ".profile"))
            return parse_profile(*text);
    }
    if (auto p = builtin_profile(name_or_path))
        return *p;
    throw Error("unknown device profile '" + name_or_path + "'");
}

std::vector<KnownCommand> parse_known_commands(std::string_view text)
{
    std::vector<KnownCommand> out;
    std::size_t lineno = 0;
    for (auto raw : detail::split_lines(text)) {
        ++lineno;
        auto line = trim(raw);
        if (auto hash = line.find('#'); hash != std::string_view::npos)
            line = trim(line.substr(0, hash));
        if (line.empty())
            continue;
        auto fields = split_ws(line);
        auto op = detail::parse_hex(fields[0]);
        if (!op)
            throw ParseError(lineno, "bad opcode '" + std::string(fields[0]) + "'");
        std::string name = fields.size() > 1 ? std::string(fields[1]) : std::string();
        out.push_back({static_cast<std::uint32_t>(*op), std::move(name)});
    }
    return out;
}

std::string format_known_commands(const DeviceProfile& p)
{
    std::vector<const Instruction*> docs;
    for (const auto& ins : p.instructions)
        if (ins.action != IrAction::Private)
            docs.push_back(&ins);
    std::sort(docs.begin(), docs.end(),
              [](const Instruction* a, const Instruction* b) { return a->opcode < b->opcode; });
    std::ostringstream os;
    os << "# opcode name\n";
    for (const auto* ins : docs)
        os << detail::hex(ins->opcode, 3).substr(2) << ' ' << ins->name << '\n';
    return os.str();
}

} // namespace maxsec
