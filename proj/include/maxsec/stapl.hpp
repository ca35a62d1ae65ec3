#pragma once

#include "maxsec/bitvector.hpp"
#include "maxsec/device.hpp"
#include "maxsec/errors.hpp"
#include "maxsec/tap.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

// A subset of STAPL (JESD71): NOTE, ACTION, PROCEDURE/ENDPROC, DATA/ENDDATA, BOOLEAN and
// INTEGER scalars and arrays, assignment, FOR/NEXT, IF/THEN, GOTO, labels, CALL, IRSCAN,
// DRSCAN with CAPTURE/COMPARE, WAIT, STATE, PRINT, EXPORT, EXIT.
// Array literals: $hex and #binary, written most significant digit first (the rightmost
// digit holds bit 0). A range a[x..y] selects indices min(x,y)..max(x,y), element 0 first.
namespace maxsec::stapl {

class RuntimeError : public Error {
public:
    RuntimeError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    enum class Kind { Int, Bits, Var, Index, Range, Unary, Binary };
    Kind kind = Kind::Int;
    std::int64_t value = 0;
    BitVector bits;   // Bits literal
    std::string name; // Var/Index/Range, or operator for Unary/Binary
    ExprPtr a, b;     // operands; Index uses a, Range uses a..b
};

enum class DeclType { Boolean, Integer };

struct Decl {
    DeclType type = DeclType::Integer;
    std::string name;
    ExprPtr size;               // arrays only
    std::vector<ExprPtr> init;  // one expression, or an element list for arrays
};

struct Assign {
    ExprPtr target; // Var, Index or Range
    ExprPtr value;
};
struct ForLoop {
    std::string var;
    ExprPtr from, to, step;
    std::size_t next = 0; // index of the matching NEXT
};
struct NextLoop {
    std::string var;
    std::size_t loop = 0; // index of the matching FOR
};
struct Goto {
    std::string label;
};
struct Call {
    std::string proc;
};
struct Scan {
    bool ir = false;
    ExprPtr length, data;
    ExprPtr capture;             // lvalue
    ExprPtr compare, mask, result; // result is an lvalue
};
struct Wait {
    ExprPtr cycles, usec;
    std::optional<tap::TapState> state;
};
struct StateMove {
    std::vector<tap::TapState> path;
};
struct Print {
    std::vector<std::variant<std::string, ExprPtr>> items;
};
struct Export {
    std::string key;
    ExprPtr value;
};
struct Exit {
    ExprPtr code;
};
struct If;

using StatementBody = std::variant<Decl, Assign, ForLoop, NextLoop, Goto, Call, Scan, Wait, StateMove,
                                   Print, Export, Exit, std::shared_ptr<If>>;

struct Statement {
    std::size_t line = 0;
    StatementBody body;
};

struct If {
    ExprPtr cond;
    Statement then;
};

struct Procedure {
    std::string name;
    std::vector<std::string> uses;
    std::vector<Statement> body;
    std::map<std::string, std::size_t> labels;
    bool data_block = false;
};

struct ActionStep {
    std::string proc;
    bool optional = false;
    bool recommended = false;
};

struct Action {
    std::string name;
    std::string description;
    std::vector<ActionStep> steps;
};

struct Program {
    std::vector<std::pair<std::string, std::string>> notes;
    std::vector<Action> actions;
    std::vector<Procedure> procedures; // PROCEDURE and DATA blocks in declaration order

    const Procedure* find_procedure(std::string_view name) const;
    const Action* find_action(std::string_view name) const;
};

// Throws ParseError on syntax errors, unresolved GOTO/CALL targets, mismatched FOR/NEXT and
// unsupported features (ACA-compressed arrays, floating point).
Program parse(std::string_view text);

struct TraceLine {
    std::string proc;
    bool ir = false;
    std::size_t bits = 0;
    std::string hex; // wire hex of the scanned-in data
    bool operator==(const TraceLine&) const = default;
};

// "proc\tIR|DR\tbits\thex"
std::string format_trace_line(const TraceLine& line);

// "$" followed by hex digits, most significant first.
std::string hex_literal(const BitVector& v);

// Procedure names such as L107 or A12 (one capital letter followed by digits).
bool is_obfuscated_name(std::string_view name);

struct RunOptions {
    std::string action;
    bool trace = false;
    bool run_optional = false;
    // Upper bound on executed statements; guards runaway GOTO loops.
    std::uint64_t max_steps = 100'000'000;
};

struct RunResult {
    int exit_code = 0;
    std::vector<TraceLine> trace;
    std::vector<std::string> printed;
    std::vector<std::pair<std::string, std::int64_t>> exports;
    double elapsed_us = 0.0;         // simulated time from WAIT ... USEC
    std::optional<std::size_t> exit_line; // statement that ended the run with EXIT
};

// Executes `options.action` against the transport. Runtime faults (undefined variables,
// bounds) throw RuntimeError.
RunResult run(const Program& program, tap::Transport& t, const RunOptions& options);

// Conventional exit code for a verify mismatch.
inline constexpr int kExitVerifyFailure = 11;

struct JamOptions {
    bool obfuscate = true; // emit L###/V### style names like vendor tooling
    bool include_ufm = true;
};

// Program/verify script for `image` on `profile`. Actions: PROGRAM (erase, program,
// verify), VERIFY, ERASE.
std::string generate_jam(const DeviceProfile& profile, const device::FlashImage& image,
                         const JamOptions& options = {});

} // namespace maxsec::stapl
