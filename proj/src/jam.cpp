#include "maxsec/stapl.hpp"

#include "maxsec/errors.hpp"

#include <fmt/format.h>

namespace maxsec::stapl {

namespace {

struct Names {
    std::string check, erase, program, verify, data;
    std::string image_cfm, image_ufm, counter, word, expect, mask, ok, id;
};

Names make_names(bool obfuscate)
{
    if (obfuscate)
        return {"L107", "L1259", "L1377", "L2011", "A12", "V185", "V186", "V3", "V4", "V5", "V6", "V7", "V11"};
    return {"CHECK_ID", "DO_ERASE", "DO_PROGRAM", "DO_VERIFY", "IMAGE", "CFM_DATA", "UFM_DATA",
            "I", "WORD", "EXPECT", "MASK", "OK", "ID_OK"};
}

std::uint32_t opcode_of(const DeviceProfile& p, IrAction a)
{
    const Instruction* ins = p.find_action(a);
    if (!ins)
        throw UnsupportedProfile("profile " + p.name + " has no " + std::string(ir_action_name(a)) + " instruction");
    return ins->opcode;
}

std::string ir_literal(const DeviceProfile& p, std::uint32_t opcode)
{
    return hex_literal(BitVector::from_uint(opcode, p.ir_width));
}

// Array literal wrapped at 64 digits per line.
std::string wrapped_literal(const BitVector& v)
{
    const std::string lit = hex_literal(v);
    std::string out = "$";
    for (std::size_t i = 1; i < lit.size(); i += 64) {
        if (i > 1)
            out += "\n    ";
        out += lit.substr(i, 64);
    }
    return out;
}

} // namespace

std::string generate_jam(const DeviceProfile& profile, const device::FlashImage& image, const JamOptions& options)
{
    if (image.size() != profile.flash_size())
        throw LengthMismatch("image does not match the profile size");
    const Names n = make_names(options.obfuscate);

    struct Block {
        const Region* region;
        std::string array;
    };
    std::vector<Block> blocks;
    if (options.include_ufm)
        if (const Region* ufm = profile.regions.find(AccessClass::UserFlash))
            blocks.push_back({ufm, n.image_ufm});
    const Region* cfm = profile.regions.find(AccessClass::ConfigFlash);
    if (!cfm)
        throw UnsupportedProfile("profile has no configuration flash region");
    blocks.push_back({cfm, n.image_cfm});

    const std::uint32_t idcode = opcode_of(profile, IrAction::Idcode);
    const std::uint32_t address = opcode_of(profile, IrAction::AddressShift);
    const std::uint32_t read = opcode_of(profile, IrAction::FlashRead);
    const std::uint32_t program = opcode_of(profile, IrAction::FlashProgram);
    const std::uint32_t erase = opcode_of(profile, IrAction::FlashErase);

    std::string s;
    s += "NOTE \"CREATOR\" \"maxsec jam generator\";\n";
    s += fmt::format("NOTE \"DEVICE\" \"{}\";\n", profile.name);
    s += fmt::format("NOTE \"IDCODE\" \"{:08X}\";\n", profile.idcode);
    s += fmt::format("ACTION PROGRAM \"Program and verify\" = {}, {}, {}, {};\n", n.check, n.erase, n.program, n.verify);
    s += fmt::format("ACTION VERIFY \"Verify\" = {}, {};\n", n.check, n.verify);
    s += fmt::format("ACTION ERASE \"Erase\" = {}, {};\n\n", n.check, n.erase);

    s += fmt::format("DATA {};\n", n.data);
    for (const auto& b : blocks) {
        const std::uint32_t bytes = b.region->size();
        BitVector v = BitVector::from_bytes(image.bytes.data() + b.region->start, bytes, std::size_t{bytes} * 8);
        s += fmt::format("BOOLEAN {}[{}] = {};\n", b.array, std::size_t{bytes} * 8, wrapped_literal(v));
    }
    s += "ENDDATA;\n\n";

    s += fmt::format("PROCEDURE {};\n", n.check);
    s += fmt::format("    BOOLEAN {};\n", n.id);
    s += fmt::format("    IRSCAN {}, {};\n", profile.ir_width, ir_literal(profile, idcode));
    s += fmt::format("    DRSCAN 32, $00000000, COMPARE ${:08X}, $FFFFFFFF, {};\n", profile.idcode, n.id);
    s += fmt::format("    IF !{} THEN EXIT 6;\n", n.id);
    s += "ENDPROC;\n\n";

    s += fmt::format("PROCEDURE {};\n", n.erase);
    s += fmt::format("    IRSCAN {}, {};\n", profile.ir_width, ir_literal(profile, erase));
    s += fmt::format("    WAIT IDLE, {} CYCLES, 350000 USEC;\n", profile.erase_cycles);
    s += fmt::format("    IRSCAN {}, {};\n", profile.ir_width, ir_literal(profile, profile.bypass_opcode()));
    s += "ENDPROC;\n\n";

    s += fmt::format("PROCEDURE {} USES {};\n", n.program, n.data);
    s += fmt::format("    INTEGER {};\n", n.counter);
    s += fmt::format("    BOOLEAN {}[33];\n", n.word);
    s += fmt::format("    {}[32] = 1;\n", n.word);
    for (const auto& b : blocks) {
        const std::uint32_t words = b.region->size() / 4;
        s += fmt::format("    IRSCAN {}, {};\n", profile.ir_width, ir_literal(profile, address));
        s += fmt::format("    DRSCAN 32, ${:08X};\n", b.region->start);
        s += fmt::format("    IRSCAN {}, {};\n", profile.ir_width, ir_literal(profile, program));
        s += fmt::format("    FOR {} = 0 TO {};\n", n.counter, words - 1);
        s += fmt::format("        {}[0..31] = {}[{} * 32 .. {} * 32 + 31];\n", n.word, b.array, n.counter, n.counter);
        s += fmt::format("        DRSCAN 33, {};\n", n.word);
        s += fmt::format("    NEXT {};\n", n.counter);
    }
    s += "ENDPROC;\n\n";

    // Read register: bit 0 valid, bits 1-2 sector (ignored), bits 3-34 data.
    s += fmt::format("PROCEDURE {} USES {};\n", n.verify, n.data);
    s += fmt::format("    INTEGER {};\n", n.counter);
    s += fmt::format("    BOOLEAN {}[35];\n", n.expect);
    s += fmt::format("    BOOLEAN {}[35] = $7FFFFFFF9;\n", n.mask);
    s += fmt::format("    BOOLEAN {};\n", n.ok);
    s += fmt::format("    {}[0] = 1;\n", n.expect);
    for (const auto& b : blocks) {
        const std::uint32_t words = b.region->size() / 4;
        s += fmt::format("    IRSCAN {}, {};\n", profile.ir_width, ir_literal(profile, address));
        s += fmt::format("    DRSCAN 32, ${:08X};\n", b.region->start);
        s += fmt::format("    IRSCAN {}, {};\n", profile.ir_width, ir_literal(profile, read));
        s += fmt::format("    FOR {} = 0 TO {};\n", n.counter, words - 1);
        s += fmt::format("        {}[3..34] = {}[{} * 32 .. {} * 32 + 31];\n", n.expect, b.array, n.counter, n.counter);
        s += fmt::format("        DRSCAN 35, $000000000, COMPARE {}, {}, {};\n", n.expect, n.mask, n.ok);
        s += fmt::format("        IF !{} THEN EXIT {};\n", n.ok, kExitVerifyFailure);
        s += fmt::format("    NEXT {};\n", n.counter);
    }
    s += "ENDPROC;\n";
    return s;
}

} // namespace maxsec::stapl
