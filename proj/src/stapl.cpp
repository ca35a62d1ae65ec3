#include "maxsec/stapl.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <unordered_map>

namespace maxsec::stapl {

// ---------------------------------------------------------------------------
// Lexer

namespace {

enum class Tok { Ident, Int, Bits, String, Punct, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    std::int64_t value = 0;
    BitVector bits;
    std::size_t line = 0;
};

std::string upper(std::string_view s)
{
    std::string out(s);
    for (auto& c : out)
        c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
}

// Digits most significant first; `bits_per_digit` is 4 for hex and 1 for binary.
BitVector bits_from_digits(const std::string& digits, unsigned bits_per_digit)
{
    BitVector v(digits.size() * bits_per_digit);
    for (std::size_t i = 0; i < digits.size(); ++i) {
        const char c = digits[digits.size() - 1 - i];
        unsigned d = std::isdigit(static_cast<unsigned char>(c))
                         ? static_cast<unsigned>(c - '0')
                         : static_cast<unsigned>(std::toupper(static_cast<unsigned char>(c)) - 'A' + 10);
        for (unsigned b = 0; b < bits_per_digit; ++b)
            v.set(i * bits_per_digit + b, (d >> b) & 1u);
    }
    return v;
}

std::vector<Token> tokenize(std::string_view src)
{
    std::vector<Token> out;
    std::size_t i = 0;
    std::size_t line = 1;
    auto peek = [&](std::size_t k = 0) { return i + k < src.size() ? src[i + k] : '\0'; };

    // Literal digits may be split across whitespace and line breaks.
    auto read_digits = [&](auto accept) {
        std::string digits;
        while (i < src.size()) {
            if (accept(src[i])) {
                digits += src[i++];
                continue;
            }
            std::size_t j = i;
            std::size_t extra_lines = 0;
            while (j < src.size() && is_space(src[j]))
                extra_lines += src[j++] == '\n';
            if (j > i && j < src.size() && accept(src[j]) && !digits.empty()) {
                // Only continue when the run after the gap is not a keyword or identifier.
                std::size_t k = j;
                while (k < src.size() && accept(src[k]))
                    ++k;
                if (k < src.size() && (std::isalnum(static_cast<unsigned char>(src[k])) || src[k] == '_'))
                    break;
                line += extra_lines;
                i = j;
                continue;
            }
            break;
        }
        return digits;
    };

    while (i < src.size()) {
        const char c = src[i];
        if (c == '\n') {
            ++line;
            ++i;
            continue;
        }
        if (is_space(c)) {
            ++i;
            continue;
        }
        if (c == '\'') {
            while (i < src.size() && src[i] != '\n')
                ++i;
            continue;
        }
        Token t;
        t.line = line;
        if (std::isdigit(static_cast<unsigned char>(c))) {
            std::size_t start = i;
            while (std::isdigit(static_cast<unsigned char>(peek())))
                ++i;
            if (peek() == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))
                throw ParseError(line, "unsupported feature: floating point literal");
            if (peek() == 'e' || peek() == 'E')
                throw ParseError(line, "unsupported feature: floating point literal");
            t.kind = Tok::Int;
            t.text = std::string(src.substr(start, i - start));
            t.value = std::stoll(t.text);
        } else if (c == '$') {
            ++i;
            std::string d = read_digits([](char ch) { return std::isxdigit(static_cast<unsigned char>(ch)) != 0; });
            if (d.empty())
                throw ParseError(line, "empty hexadecimal literal");
            t.kind = Tok::Bits;
            t.text = "$" + d;
            t.bits = bits_from_digits(d, 4);
        } else if (c == '#') {
            ++i;
            std::string d = read_digits([](char ch) { return ch == '0' || ch == '1'; });
            if (d.empty())
                throw ParseError(line, "empty binary literal");
            t.kind = Tok::Bits;
            t.text = "#" + d;
            t.bits = bits_from_digits(d, 1);
        } else if (c == '@') {
            throw ParseError(line, "unsupported feature: ACA-compressed array data");
        } else if (c == '"') {
            std::size_t start = ++i;
            while (i < src.size() && src[i] != '"' && src[i] != '\n')
                ++i;
            if (peek() != '"')
                throw ParseError(line, "unterminated string");
            t.kind = Tok::String;
            t.text = std::string(src.substr(start, i - start));
            ++i;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = i;
            while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')
                ++i;
            t.kind = Tok::Ident;
            t.text = std::string(src.substr(start, i - start));
        } else {
            static constexpr std::string_view two[] = {"..", "&&", "||", "==", "!=", "<=", ">=", "<<", ">>"};
            t.kind = Tok::Punct;
            for (auto op : two)
                if (src.substr(i, 2) == op) {
                    t.text = std::string(op);
                    break;
                }
            if (t.text.empty()) {
                static constexpr std::string_view one = ";,=()[]:+-*/%&|^~!<>";
                if (one.find(c) == std::string_view::npos)
                    throw ParseError(line, std::string("unexpected character '") + c + "'");
                t.text = std::string(1, c);
            }
            i += t.text.size();
        }
        out.push_back(std::move(t));
    }
    Token end;
    end.line = line;
    out.push_back(end);
    return out;
}

// ---------------------------------------------------------------------------
// Parser

class Parser {
public:
    explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

    Program parse_program()
    {
        Program p;
        while (cur().kind != Tok::End) {
            const std::string kw = keyword();
            if (kw == "NOTE") {
                next();
                std::string key = expect_string_or_ident();
                std::string value = expect_string_or_ident();
                expect(";");
                p.notes.emplace_back(std::move(key), std::move(value));
            } else if (kw == "ACTION") {
                p.actions.push_back(parse_action());
            } else if (kw == "PROCEDURE") {
                p.procedures.push_back(parse_procedure(false));
            } else if (kw == "DATA") {
                p.procedures.push_back(parse_procedure(true));
            } else if (kw == "CRC") {
                while (!is(";") && cur().kind != Tok::End)
                    next();
                expect(";");
            } else {
                throw ParseError(cur().line, "unexpected '" + cur().text + "' at top level");
            }
        }
        validate(p);
        return p;
    }

private:
    const Token& cur() const { return toks_[pos_]; }
    const Token& ahead(std::size_t k) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
    void next()
    {
        if (pos_ + 1 < toks_.size())
            ++pos_;
    }
    bool is(std::string_view punct) const { return cur().kind == Tok::Punct && cur().text == punct; }
    bool accept(std::string_view punct)
    {
        if (!is(punct))
            return false;
        next();
        return true;
    }
    void expect(std::string_view punct)
    {
        if (!accept(punct))
            throw ParseError(cur().line, "expected '" + std::string(punct) + "' before '" + cur().text + "'");
    }
    std::string keyword() const { return cur().kind == Tok::Ident ? upper(cur().text) : std::string(); }
    bool accept_keyword(std::string_view kw)
    {
        if (keyword() != kw)
            return false;
        next();
        return true;
    }
    std::string expect_ident()
    {
        if (cur().kind != Tok::Ident)
            throw ParseError(cur().line, "expected a name before '" + cur().text + "'");
        std::string s = cur().text;
        next();
        return s;
    }
    std::string expect_string_or_ident()
    {
        if (cur().kind != Tok::String && cur().kind != Tok::Ident)
            throw ParseError(cur().line, "expected a string");
        std::string s = cur().text;
        next();
        return s;
    }

    Action parse_action()
    {
        next();
        Action a;
        a.name = expect_ident();
        if (cur().kind == Tok::String) {
            a.description = cur().text;
            next();
        }
        expect("=");
        do {
            ActionStep s;
            s.proc = expect_ident();
            if (accept_keyword("OPTIONAL"))
                s.optional = true;
            else if (accept_keyword("RECOMMENDED"))
                s.recommended = true;
            a.steps.push_back(std::move(s));
        } while (accept(","));
        expect(";");
        return a;
    }

    Procedure parse_procedure(bool data)
    {
        const std::size_t line = cur().line;
        next();
        Procedure proc;
        proc.data_block = data;
        proc.name = expect_ident();
        if (accept_keyword("USES")) {
            do
                proc.uses.push_back(expect_ident());
            while (accept(","));
        }
        expect(";");
        const std::string end_kw = data ? "ENDDATA" : "ENDPROC";
        std::vector<std::size_t> loops;
        for (;;) {
            if (cur().kind == Tok::End)
                throw ParseError(line, proc.name + ": missing " + end_kw);
            if (accept_keyword(end_kw)) {
                expect(";");
                break;
            }
            if (cur().kind == Tok::Ident && ahead(1).kind == Tok::Punct && ahead(1).text == ":") {
                if (data)
                    throw ParseError(cur().line, "labels are not allowed in DATA blocks");
                if (!proc.labels.emplace(cur().text, proc.body.size()).second)
                    throw ParseError(cur().line, "duplicate label " + cur().text);
                next();
                next();
                continue;
            }
            Statement s = parse_statement();
            if (data && !std::holds_alternative<Decl>(s.body))
                throw ParseError(s.line, "only declarations are allowed in DATA blocks");
            if (auto* f = std::get_if<ForLoop>(&s.body)) {
                (void)f;
                loops.push_back(proc.body.size());
            } else if (auto* n = std::get_if<NextLoop>(&s.body)) {
                if (loops.empty())
                    throw ParseError(s.line, "NEXT without FOR");
                auto& f = std::get<ForLoop>(proc.body[loops.back()].body);
                if (upper(f.var) != upper(n->var))
                    throw ParseError(s.line, "NEXT " + n->var + " does not match FOR " + f.var);
                n->loop = loops.back();
                f.next = proc.body.size();
                loops.pop_back();
            }
            proc.body.push_back(std::move(s));
        }
        if (!loops.empty())
            throw ParseError(proc.body[loops.back()].line, "FOR without NEXT");
        return proc;
    }

    Statement parse_statement()
    {
        Statement s;
        s.line = cur().line;
        const std::string kw = keyword();
        if (kw == "BOOLEAN" || kw == "INTEGER") {
            next();
            s.body = parse_decl(kw == "BOOLEAN" ? DeclType::Boolean : DeclType::Integer);
        } else if (kw == "FOR") {
            next();
            ForLoop f;
            f.var = expect_ident();
            expect("=");
            f.from = parse_expr();
            if (!accept_keyword("TO"))
                throw ParseError(cur().line, "expected TO");
            f.to = parse_expr();
            if (accept_keyword("STEP"))
                f.step = parse_expr();
            expect(";");
            s.body = std::move(f);
        } else if (kw == "NEXT") {
            next();
            NextLoop n;
            n.var = expect_ident();
            expect(";");
            s.body = std::move(n);
        } else if (kw == "IF") {
            next();
            auto node = std::make_shared<If>();
            node->cond = parse_expr();
            if (!accept_keyword("THEN"))
                throw ParseError(cur().line, "expected THEN");
            node->then = parse_statement();
            if (std::holds_alternative<ForLoop>(node->then.body) || std::holds_alternative<NextLoop>(node->then.body)
                || std::holds_alternative<Decl>(node->then.body))
                throw ParseError(s.line, "FOR, NEXT and declarations cannot follow THEN");
            s.body = std::move(node);
            return s; // the nested statement consumed the ';'
        } else if (kw == "GOTO") {
            next();
            s.body = Goto{expect_ident()};
            expect(";");
        } else if (kw == "CALL") {
            next();
            s.body = Call{expect_ident()};
            expect(";");
        } else if (kw == "IRSCAN" || kw == "DRSCAN") {
            next();
            s.body = parse_scan(kw == "IRSCAN");
        } else if (kw == "WAIT") {
            next();
            s.body = parse_wait();
        } else if (kw == "STATE") {
            next();
            StateMove m;
            while (!is(";")) {
                auto st = tap::parse_state(expect_ident());
                if (!st)
                    throw ParseError(s.line, "unknown TAP state");
                m.path.push_back(*st);
            }
            if (m.path.empty())
                throw ParseError(s.line, "STATE needs at least one state");
            expect(";");
            s.body = std::move(m);
        } else if (kw == "PRINT") {
            next();
            Print p;
            do {
                if (cur().kind == Tok::String) {
                    p.items.emplace_back(cur().text);
                    next();
                } else {
                    p.items.emplace_back(parse_expr());
                }
            } while (accept(","));
            expect(";");
            s.body = std::move(p);
        } else if (kw == "EXPORT") {
            next();
            Export e;
            e.key = expect_string_or_ident();
            expect(",");
            e.value = parse_expr();
            expect(";");
            s.body = std::move(e);
        } else if (kw == "EXIT") {
            next();
            s.body = Exit{parse_expr()};
            expect(";");
        } else if (kw == "PUSH" || kw == "POP" || kw == "RETURN" || kw == "PREIR" || kw == "POSTIR"
                   || kw == "PREDR" || kw == "POSTDR" || kw == "FREQUENCY") {
            throw ParseError(s.line, "unsupported statement " + kw);
        } else if (cur().kind == Tok::Ident) {
            Assign a;
            a.target = parse_postfix();
            expect("=");
            a.value = parse_expr();
            expect(";");
            s.body = std::move(a);
        } else {
            throw ParseError(s.line, "unexpected '" + cur().text + "'");
        }
        return s;
    }

    Decl parse_decl(DeclType type)
    {
        Decl d;
        d.type = type;
        d.name = expect_ident();
        if (accept("[")) {
            d.size = parse_expr();
            expect("]");
        }
        if (accept("=")) {
            do
                d.init.push_back(parse_expr());
            while (accept(","));
            if (!d.size && d.init.size() > 1)
                throw ParseError(cur().line, "element list for a scalar");
        }
        expect(";");
        return d;
    }

    Scan parse_scan(bool ir)
    {
        Scan sc;
        sc.ir = ir;
        sc.length = parse_expr();
        expect(",");
        sc.data = parse_expr();
        while (accept(",")) {
            if (accept_keyword("CAPTURE")) {
                sc.capture = parse_lvalue();
            } else if (accept_keyword("COMPARE")) {
                sc.compare = parse_expr();
                expect(",");
                sc.mask = parse_expr();
                expect(",");
                sc.result = parse_lvalue();
            } else {
                throw ParseError(cur().line, "expected CAPTURE or COMPARE");
            }
        }
        expect(";");
        return sc;
    }

    Wait parse_wait()
    {
        Wait w;
        do {
            if (cur().kind == Tok::Ident && !(ahead(1).kind == Tok::Ident)) {
                if (auto st = tap::parse_state(cur().text); st && ahead(1).kind == Tok::Punct) {
                    w.state = st;
                    next();
                    continue;
                }
            }
            ExprPtr e = parse_expr();
            if (accept_keyword("CYCLES") || accept_keyword("CYCLE"))
                w.cycles = e;
            else if (accept_keyword("USEC"))
                w.usec = e;
            else
                throw ParseError(cur().line, "expected CYCLES or USEC");
        } while (accept(","));
        expect(";");
        if (!w.cycles && !w.usec && !w.state)
            throw ParseError(cur().line, "empty WAIT");
        return w;
    }

    ExprPtr parse_lvalue()
    {
        ExprPtr e = parse_postfix();
        if (e->kind != Expr::Kind::Var && e->kind != Expr::Kind::Index && e->kind != Expr::Kind::Range)
            throw ParseError(cur().line, "expected a variable");
        return e;
    }

    static ExprPtr binary(std::string op, ExprPtr a, ExprPtr b)
    {
        auto e = std::make_shared<Expr>();
        e->kind = Expr::Kind::Binary;
        e->name = std::move(op);
        e->a = std::move(a);
        e->b = std::move(b);
        return e;
    }

    ExprPtr parse_expr() { return parse_level(0); }

    ExprPtr parse_level(int level)
    {
        static const std::vector<std::vector<std::string_view>> kLevels = {
            {"||"}, {"&&"}, {"|"}, {"^"}, {"&"}, {"==", "!="}, {"<", ">", "<=", ">="}, {"<<", ">>"},
            {"+", "-"}, {"*", "/", "%"}};
        if (level == static_cast<int>(kLevels.size()))
            return parse_unary();
        ExprPtr lhs = parse_level(level + 1);
        for (;;) {
            bool matched = false;
            for (auto op : kLevels[static_cast<std::size_t>(level)])
                if (is(op)) {
                    next();
                    lhs = binary(std::string(op), lhs, parse_level(level + 1));
                    matched = true;
                    break;
                }
            if (!matched)
                return lhs;
        }
    }

    ExprPtr parse_unary()
    {
        for (std::string_view op : {"!", "~", "-"})
            if (is(op)) {
                next();
                auto e = std::make_shared<Expr>();
                e->kind = Expr::Kind::Unary;
                e->name = std::string(op);
                e->a = parse_unary();
                return e;
            }
        return parse_postfix();
    }

    ExprPtr parse_postfix()
    {
        const Token& t = cur();
        auto e = std::make_shared<Expr>();
        if (t.kind == Tok::Int) {
            e->kind = Expr::Kind::Int;
            e->value = t.value;
            next();
            return e;
        }
        if (t.kind == Tok::Bits) {
            e->kind = Expr::Kind::Bits;
            e->bits = t.bits;
            next();
            return e;
        }
        if (accept("(")) {
            ExprPtr inner = parse_expr();
            expect(")");
            return inner;
        }
        if (t.kind != Tok::Ident)
            throw ParseError(t.line, "unexpected '" + t.text + "' in expression");
        e->name = t.text;
        e->kind = Expr::Kind::Var;
        next();
        if (accept("[")) {
            e->a = parse_expr();
            if (accept("..")) {
                e->b = parse_expr();
                e->kind = Expr::Kind::Range;
            } else {
                e->kind = Expr::Kind::Index;
            }
            expect("]");
        }
        return e;
    }

    static void validate(const Program& p)
    {
        for (const auto& proc : p.procedures) {
            auto check = [&](const Statement& s, auto& self) -> void {
                if (auto* g = std::get_if<Goto>(&s.body)) {
                    if (!proc.labels.count(g->label))
                        throw ParseError(s.line, "GOTO target " + g->label + " not found in " + proc.name);
                } else if (auto* c = std::get_if<Call>(&s.body)) {
                    const Procedure* target = p.find_procedure(c->proc);
                    if (!target || target->data_block)
                        throw ParseError(s.line, "CALL target " + c->proc + " is not a procedure");
                } else if (auto* i = std::get_if<std::shared_ptr<If>>(&s.body)) {
                    self((*i)->then, self);
                }
            };
            for (const auto& s : proc.body)
                check(s, check);
            for (const auto& u : proc.uses)
                if (!p.find_procedure(u))
                    throw ParseError(0, proc.name + " uses unknown block " + u);
        }
        for (const auto& a : p.actions)
            for (const auto& s : a.steps) {
                const Procedure* target = p.find_procedure(s.proc);
                if (!target || target->data_block)
                    throw ParseError(0, "action " + a.name + " refers to unknown procedure " + s.proc);
            }
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

} // namespace

const Procedure* Program::find_procedure(std::string_view name) const
{
    for (const auto& p : procedures)
        if (p.name == name)
            return &p;
    return nullptr;
}

const Action* Program::find_action(std::string_view name) const
{
    for (const auto& a : actions)
        if (upper(a.name) == upper(name))
            return &a;
    return nullptr;
}

Program parse(std::string_view text)
{
    return Parser(tokenize(text)).parse_program();
}

std::string format_trace_line(const TraceLine& line)
{
    return line.proc + "\t" + (line.ir ? "IR" : "DR") + "\t" + std::to_string(line.bits) + "\t" + line.hex;
}

std::string hex_literal(const BitVector& v)
{
    static constexpr char digits[] = "0123456789ABCDEF";
    const std::size_t n = (v.size() + 3) / 4;
    std::string out(n, '0');
    for (std::size_t d = 0; d < n; ++d) {
        unsigned x = 0;
        for (unsigned b = 0; b < 4; ++b) {
            std::size_t i = d * 4 + b;
            if (i < v.size() && v.get(i))
                x |= 1u << b;
        }
        out[n - 1 - d] = digits[x];
    }
    return "$" + out;
}

bool is_obfuscated_name(std::string_view name)
{
    static const std::regex kPattern("^[A-Z][0-9]+$");
    return std::regex_match(name.begin(), name.end(), kPattern);
}

// ---------------------------------------------------------------------------
// Interpreter

namespace {

using Value = std::variant<std::int64_t, BitVector>;

struct Variable {
    DeclType type = DeclType::Integer;
    bool array = false;
    std::int64_t scalar = 0;
    BitVector bits;                 // BOOLEAN arrays
    std::vector<std::int64_t> ints; // INTEGER arrays
};

struct Flow {
    enum Kind { Next, Jump, Exit } kind = Next;
    std::size_t target = 0;
};

class Interpreter {
public:
    Interpreter(const Program& p, tap::Transport& t, const RunOptions& o) : prog_(p), t_(t), opt_(o)
    {
        std::size_t n = 0;
        for (const auto& proc : p.procedures) {
            ++n;
            if (is_obfuscated_name(proc.name))
                canonical_.emplace(proc.name, "proc_" + std::to_string(n));
        }
    }

    RunResult run()
    {
        const Action* action = prog_.find_action(opt_.action);
        if (!action)
            throw Error("no action named " + opt_.action);
        tap::reset(t_);
        state_ = tap::TapState::RunTestIdle;
        for (const auto& proc : prog_.procedures)
            if (proc.data_block && exec_proc(proc))
                return std::move(result_);
        for (const auto& step : action->steps) {
            if (step.optional && !opt_.run_optional)
                continue;
            if (exec_proc(*prog_.find_procedure(step.proc)))
                return std::move(result_);
        }
        return std::move(result_);
    }

private:
    // Returns true when the program exited.
    bool exec_proc(const Procedure& proc)
    {
        std::unordered_map<std::size_t, std::pair<std::int64_t, std::int64_t>> loops; // FOR index -> (to, step)
        std::size_t pc = 0;
        while (pc < proc.body.size()) {
            if (++steps_ > opt_.max_steps)
                throw RuntimeError(proc.body[pc].line, "step limit exceeded");
            const Statement& s = proc.body[pc];
            Flow f = exec(s, proc, pc, loops);
            if (f.kind == Flow::Exit)
                return true;
            pc = f.kind == Flow::Jump ? f.target : pc + 1;
        }
        return false;
    }

    Flow exec(const Statement& s, const Procedure& proc, std::size_t pc,
              std::unordered_map<std::size_t, std::pair<std::int64_t, std::int64_t>>& loops)
    {
        line_ = s.line;
        return std::visit(
            [&](const auto& st) -> Flow {
                using T = std::decay_t<decltype(st)>;
                if constexpr (std::is_same_v<T, Decl>) {
                    declare(st);
                } else if constexpr (std::is_same_v<T, Assign>) {
                    assign(*st.target, eval(*st.value));
                } else if constexpr (std::is_same_v<T, ForLoop>) {
                    const std::int64_t from = to_int(eval(*st.from));
                    const std::int64_t to = to_int(eval(*st.to));
                    const std::int64_t step = st.step ? to_int(eval(*st.step)) : 1;
                    if (step == 0)
                        throw RuntimeError(line_, "FOR with zero STEP");
                    set_scalar(st.var, from);
                    loops[pc] = {to, step};
                    if (step > 0 ? from > to : from < to)
                        return {Flow::Jump, st.next + 1};
                } else if constexpr (std::is_same_v<T, NextLoop>) {
                    auto it = loops.find(st.loop);
                    if (it == loops.end())
                        throw RuntimeError(line_, "NEXT reached without entering its FOR");
                    const auto [to, step] = it->second;
                    const std::int64_t v = get_scalar(st.var) + step;
                    set_scalar(st.var, v);
                    if (step > 0 ? v <= to : v >= to)
                        return {Flow::Jump, st.loop + 1};
                } else if constexpr (std::is_same_v<T, Goto>) {
                    return {Flow::Jump, proc.labels.at(st.label)};
                } else if constexpr (std::is_same_v<T, Call>) {
                    if (++depth_ > 64)
                        throw RuntimeError(line_, "CALL nesting too deep");
                    const bool exited = exec_proc(*prog_.find_procedure(st.proc));
                    --depth_;
                    if (exited)
                        return {Flow::Exit};
                } else if constexpr (std::is_same_v<T, Scan>) {
                    scan(st, proc);
                } else if constexpr (std::is_same_v<T, Wait>) {
                    wait(st);
                } else if constexpr (std::is_same_v<T, StateMove>) {
                    for (auto target : st.path)
                        move_to(target);
                } else if constexpr (std::is_same_v<T, Print>) {
                    std::string line;
                    for (const auto& item : st.items) {
                        if (const auto* str = std::get_if<std::string>(&item)) {
                            line += *str;
                        } else {
                            Value v = eval(*std::get<ExprPtr>(item));
                            if (const auto* i = std::get_if<std::int64_t>(&v))
                                line += std::to_string(*i);
                            else
                                line += hex_literal(std::get<BitVector>(v));
                        }
                    }
                    result_.printed.push_back(std::move(line));
                } else if constexpr (std::is_same_v<T, Export>) {
                    result_.exports.emplace_back(st.key, to_int(eval(*st.value)));
                } else if constexpr (std::is_same_v<T, Exit>) {
                    result_.exit_code = static_cast<int>(to_int(eval(*st.code)));
                    result_.exit_line = line_;
                    return {Flow::Exit};
                } else if constexpr (std::is_same_v<T, std::shared_ptr<If>>) {
                    if (to_int(eval(*st->cond)) != 0)
                        return exec(st->then, proc, pc, loops);
                    line_ = s.line;
                }
                return {Flow::Next};
            },
            s.body);
    }

    // --- variables -----------------------------------------------------------

    Variable& lookup(const std::string& name)
    {
        auto it = vars_.find(name);
        if (it == vars_.end())
            throw RuntimeError(line_, "undefined variable " + name);
        return it->second;
    }

    std::int64_t get_scalar(const std::string& name)
    {
        Variable& v = lookup(name);
        if (v.array)
            throw RuntimeError(line_, name + " is an array");
        return v.scalar;
    }

    void set_scalar(const std::string& name, std::int64_t value)
    {
        auto it = vars_.find(name);
        if (it == vars_.end()) {
            // Loop counters may be used without a declaration.
            Variable v;
            v.scalar = value;
            vars_.emplace(name, std::move(v));
            return;
        }
        if (it->second.array)
            throw RuntimeError(line_, name + " is an array");
        it->second.scalar = it->second.type == DeclType::Boolean ? (value != 0) : value;
    }

    void declare(const Decl& d)
    {
        Variable v;
        v.type = d.type;
        if (d.size) {
            const std::int64_t n = to_int(eval(*d.size));
            if (n < 0 || n > (std::int64_t{1} << 32))
                throw RuntimeError(line_, "bad array size for " + d.name);
            v.array = true;
            if (d.type == DeclType::Boolean)
                v.bits = BitVector(static_cast<std::size_t>(n));
            else
                v.ints.assign(static_cast<std::size_t>(n), 0);
            if (d.init.size() == 1 && d.type == DeclType::Boolean) {
                v.bits = to_bits(eval(*d.init[0]), static_cast<std::size_t>(n));
            } else if (!d.init.empty()) {
                if (d.init.size() != static_cast<std::size_t>(n))
                    throw RuntimeError(line_, "initializer count does not match size of " + d.name);
                for (std::size_t i = 0; i < d.init.size(); ++i) {
                    const std::int64_t x = to_int(eval(*d.init[i]));
                    if (d.type == DeclType::Boolean)
                        v.bits.set(i, x != 0);
                    else
                        v.ints[i] = x;
                }
            }
        } else if (!d.init.empty()) {
            const std::int64_t x = to_int(eval(*d.init[0]));
            v.scalar = d.type == DeclType::Boolean ? (x != 0) : x;
        }
        vars_[d.name] = std::move(v);
    }

    std::size_t index(Variable& v, const std::string& name, std::int64_t i)
    {
        const std::size_t n = v.type == DeclType::Boolean ? v.bits.size() : v.ints.size();
        if (i < 0 || static_cast<std::size_t>(i) >= n)
            throw RuntimeError(line_, "index " + std::to_string(i) + " out of bounds for " + name + "["
                                          + std::to_string(n) + "]");
        return static_cast<std::size_t>(i);
    }

    std::pair<std::size_t, std::size_t> range(Variable& v, const Expr& e)
    {
        if (!v.array || v.type != DeclType::Boolean)
            throw RuntimeError(line_, "range of non-BOOLEAN-array " + e.name);
        std::int64_t x = to_int(eval(*e.a));
        std::int64_t y = to_int(eval(*e.b));
        if (x > y)
            std::swap(x, y);
        const std::size_t lo = index(v, e.name, x);
        const std::size_t hi = index(v, e.name, y);
        return {lo, hi - lo + 1};
    }

    void assign(const Expr& target, const Value& value)
    {
        Variable& v = lookup(target.name);
        switch (target.kind) {
        case Expr::Kind::Var:
            if (!v.array) {
                set_scalar(target.name, to_int(value));
            } else if (v.type == DeclType::Boolean) {
                v.bits = to_bits(value, v.bits.size());
            } else {
                throw RuntimeError(line_, "cannot assign a whole INTEGER array");
            }
            break;
        case Expr::Kind::Index: {
            if (!v.array)
                throw RuntimeError(line_, target.name + " is not an array");
            const std::size_t i = index(v, target.name, to_int(eval(*target.a)));
            const std::int64_t x = to_int(value);
            if (v.type == DeclType::Boolean)
                v.bits.set(i, x != 0);
            else
                v.ints[i] = x;
            break;
        }
        case Expr::Kind::Range: {
            const auto [lo, n] = range(v, target);
            const BitVector bits = to_bits(value, n);
            for (std::size_t k = 0; k < n; ++k)
                v.bits.set(lo + k, bits.get(k));
            break;
        }
        default:
            throw RuntimeError(line_, "not assignable");
        }
    }

    // --- expressions ---------------------------------------------------------

    std::int64_t to_int(const Value& v)
    {
        if (const auto* i = std::get_if<std::int64_t>(&v))
            return *i;
        const BitVector& b = std::get<BitVector>(v);
        if (b.size() > 64)
            throw RuntimeError(line_, "BOOLEAN array too wide for an integer context");
        return static_cast<std::int64_t>(b.to_uint());
    }

    BitVector to_bits(const Value& v, std::size_t n)
    {
        if (const auto* i = std::get_if<std::int64_t>(&v)) {
            BitVector out(n);
            for (std::size_t k = 0; k < n && k < 64; ++k)
                out.set(k, (static_cast<std::uint64_t>(*i) >> k) & 1u);
            return out;
        }
        BitVector b = std::get<BitVector>(v);
        if (b.size() > n) {
            for (std::size_t k = n; k < b.size(); ++k)
                if (b.get(k))
                    throw RuntimeError(line_, "value has " + std::to_string(b.size()) + " bits, target holds "
                                                  + std::to_string(n));
        }
        b.resize(n);
        return b;
    }

    Value eval(const Expr& e)
    {
        switch (e.kind) {
        case Expr::Kind::Int:
            return e.value;
        case Expr::Kind::Bits:
            return e.bits;
        case Expr::Kind::Var: {
            Variable& v = lookup(e.name);
            if (!v.array)
                return v.scalar;
            if (v.type == DeclType::Boolean)
                return v.bits;
            throw RuntimeError(line_, "INTEGER array " + e.name + " used as a value");
        }
        case Expr::Kind::Index: {
            Variable& v = lookup(e.name);
            if (!v.array)
                throw RuntimeError(line_, e.name + " is not an array");
            const std::size_t i = index(v, e.name, to_int(eval(*e.a)));
            return v.type == DeclType::Boolean ? std::int64_t{v.bits.get(i)} : v.ints[i];
        }
        case Expr::Kind::Range: {
            Variable& v = lookup(e.name);
            const auto [lo, n] = range(v, e);
            return v.bits.slice(lo, n);
        }
        case Expr::Kind::Unary: {
            Value a = eval(*e.a);
            if (auto* b = std::get_if<BitVector>(&a)) {
                if (e.name == "-")
                    throw RuntimeError(line_, "negation of a BOOLEAN array");
                for (std::size_t k = 0; k < b->size(); ++k)
                    b->set(k, !b->get(k));
                return *b;
            }
            const std::int64_t x = std::get<std::int64_t>(a);
            if (e.name == "!")
                return std::int64_t{x == 0};
            if (e.name == "~")
                return ~x;
            return -x;
        }
        case Expr::Kind::Binary:
            return binary(e);
        }
        return std::int64_t{0};
    }

    Value binary(const Expr& e)
    {
        const std::string& op = e.name;
        if (op == "&&") {
            if (to_int(eval(*e.a)) == 0)
                return std::int64_t{0};
            return std::int64_t{to_int(eval(*e.b)) != 0};
        }
        if (op == "||") {
            if (to_int(eval(*e.a)) != 0)
                return std::int64_t{1};
            return std::int64_t{to_int(eval(*e.b)) != 0};
        }
        Value a = eval(*e.a);
        Value b = eval(*e.b);
        const auto* ba = std::get_if<BitVector>(&a);
        const auto* bb = std::get_if<BitVector>(&b);
        if (ba && bb && (op == "==" || op == "!=" || op == "&" || op == "|" || op == "^")) {
            if (ba->size() != bb->size())
                throw RuntimeError(line_, "BOOLEAN arrays of different lengths in '" + op + "'");
            if (op == "==")
                return std::int64_t{*ba == *bb};
            if (op == "!=")
                return std::int64_t{!(*ba == *bb)};
            BitVector r(ba->size());
            for (std::size_t k = 0; k < r.size(); ++k) {
                const bool x = ba->get(k), y = bb->get(k);
                r.set(k, op == "&" ? (x && y) : op == "|" ? (x || y) : (x != y));
            }
            return r;
        }
        const std::int64_t x = to_int(a);
        const std::int64_t y = to_int(b);
        if (op == "+") return x + y;
        if (op == "-") return x - y;
        if (op == "*") return x * y;
        if (op == "/" || op == "%") {
            if (y == 0)
                throw RuntimeError(line_, "division by zero");
            return op == "/" ? x / y : x % y;
        }
        if (op == "&") return x & y;
        if (op == "|") return x | y;
        if (op == "^") return x ^ y;
        if (op == "<<") return static_cast<std::int64_t>(static_cast<std::uint64_t>(x) << (y & 63));
        if (op == ">>") return x >> (y & 63);
        if (op == "==") return std::int64_t{x == y};
        if (op == "!=") return std::int64_t{x != y};
        if (op == "<") return std::int64_t{x < y};
        if (op == ">") return std::int64_t{x > y};
        if (op == "<=") return std::int64_t{x <= y};
        if (op == ">=") return std::int64_t{x >= y};
        throw RuntimeError(line_, "unknown operator " + op);
    }

    // --- JTAG ----------------------------------------------------------------

    void move_to(tap::TapState target)
    {
        if (state_ == target)
            return;
        const BitVector tms = tap::path(state_, target);
        t_.shift(tms, BitVector(tms.size()));
        state_ = target;
    }

    void scan(const Scan& sc, const Procedure& proc)
    {
        const std::int64_t len = to_int(eval(*sc.length));
        if (len < 0)
            throw RuntimeError(line_, "negative scan length");
        const auto n = static_cast<std::size_t>(len);
        const BitVector data = to_bits(eval(*sc.data), n);
        move_to(tap::TapState::RunTestIdle);
        const BitVector tdo = sc.ir ? tap::shift_ir(t_, data) : tap::shift_dr(t_, data);
        if (opt_.trace) {
            auto it = canonical_.find(proc.name);
            result_.trace.push_back({it == canonical_.end() ? proc.name : it->second, sc.ir, n, data.to_hex()});
        }
        if (sc.capture)
            assign(*sc.capture, tdo);
        if (sc.compare) {
            const BitVector expected = to_bits(eval(*sc.compare), n);
            const BitVector mask = to_bits(eval(*sc.mask), n);
            bool ok = true;
            for (std::size_t k = 0; k < n && ok; ++k)
                ok = !mask.get(k) || tdo.get(k) == expected.get(k);
            assign(*sc.result, std::int64_t{ok});
        }
    }

    void wait(const Wait& w)
    {
        const tap::TapState where = w.state.value_or(tap::TapState::RunTestIdle);
        move_to(where);
        if (w.cycles) {
            const std::int64_t n = to_int(eval(*w.cycles));
            if (n < 0)
                throw RuntimeError(line_, "negative cycle count");
            if (where == tap::TapState::RunTestIdle) {
                tap::idle(t_, static_cast<std::uint64_t>(n));
            } else {
                const bool hold = where == tap::TapState::TestLogicReset;
                auto count = static_cast<std::size_t>(n);
                t_.shift(BitVector(count, hold), BitVector(count));
            }
        }
        if (w.usec) {
            const std::int64_t us = to_int(eval(*w.usec));
            if (us < 0)
                throw RuntimeError(line_, "negative wait time");
            result_.elapsed_us += static_cast<double>(us);
        }
    }

    const Program& prog_;
    tap::Transport& t_;
    const RunOptions& opt_;
    std::unordered_map<std::string, Variable> vars_;
    std::unordered_map<std::string, std::string> canonical_;
    tap::TapState state_ = tap::TapState::TestLogicReset;
    RunResult result_;
    std::size_t line_ = 0;
    std::uint64_t steps_ = 0;
    int depth_ = 0;
};

} // namespace

RunResult run(const Program& program, tap::Transport& t, const RunOptions& options)
{
    return Interpreter(program, t, options).run();
}

} // namespace maxsec::stapl
