#include "finslerlab/dsl/expr.hpp"

#include "finslerlab/error.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numbers>

namespace finslerlab::dsl {

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

namespace {

struct Token {
    enum class Kind { Number, Ident, Op, LParen, RParen, Comma, End };
    Kind kind = Kind::End;
    std::string text;
    double number = 0.0;
    int line = 1;
    int column = 1;
};

class Lexer {
public:
    Lexer(std::string_view text, int line, int column) : text_(text), line_(line), column_(column) {}

    Token next() {
        skip_space();
        Token tok;
        tok.line = line_;
        tok.column = column_;
        if (pos_ >= text_.size()) return tok;
        const char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && pos_ + 1 < text_.size() &&
                                                             std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
            const std::string rest(text_.substr(pos_));
            char* end = nullptr;
            tok.number = std::strtod(rest.c_str(), &end);
            const std::size_t used = static_cast<std::size_t>(end - rest.c_str());
            tok.kind = Token::Kind::Number;
            tok.text = rest.substr(0, used);
            advance(used);
            return tok;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t end = pos_;
            while (end < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_'))
                ++end;
            tok.kind = Token::Kind::Ident;
            tok.text = std::string(text_.substr(pos_, end - pos_));
            advance(end - pos_);
            return tok;
        }
        advance(1);
        tok.text = std::string(1, c);
        switch (c) {
            case '+': case '-': case '*': case '/': case '^':
                tok.kind = Token::Kind::Op;
                return tok;
            case '(':
                tok.kind = Token::Kind::LParen;
                return tok;
            case ')':
                tok.kind = Token::Kind::RParen;
                return tok;
            case ',':
                tok.kind = Token::Kind::Comma;
                return tok;
            default:
                throw ParseError(std::string("unexpected character '") + c + "'", tok.line, tok.column);
        }
    }

private:
    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) advance(1);
    }
    void advance(std::size_t k) {
        for (std::size_t i = 0; i < k && pos_ < text_.size(); ++i, ++pos_) {
            if (text_[pos_] == '\n') {
                ++line_;
                column_ = 1;
            } else {
                ++column_;
            }
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_;
    int column_;
};

class Parser {
public:
    Parser(std::string_view text, int line, int column) : lex_(text, line, column) { tok_ = lex_.next(); }

    Node parse() {
        Node n = expr();
        if (tok_.kind != Token::Kind::End) fail("unexpected '" + tok_.text + "'");
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, tok_.line, tok_.column); }

    void take() { tok_ = lex_.next(); }

    bool is_op(char c) const { return tok_.kind == Token::Kind::Op && tok_.text[0] == c; }

    static Node binary(Node::Kind k, Node lhs, Node rhs, const Token& at) {
        Node n;
        n.kind = k;
        n.line = at.line;
        n.column = at.column;
        n.args.push_back(std::move(lhs));
        n.args.push_back(std::move(rhs));
        return n;
    }

    Node expr() {
        Node lhs = term();
        while (is_op('+') || is_op('-')) {
            const Token op = tok_;
            take();
            lhs = binary(op.text[0] == '+' ? Node::Kind::Add : Node::Kind::Sub, std::move(lhs), term(), op);
        }
        return lhs;
    }

    Node term() {
        Node lhs = unary();
        while (is_op('*') || is_op('/')) {
            const Token op = tok_;
            take();
            lhs = binary(op.text[0] == '*' ? Node::Kind::Mul : Node::Kind::Div, std::move(lhs), unary(), op);
        }
        return lhs;
    }

    Node unary() {
        if (is_op('-')) {
            const Token op = tok_;
            take();
            Node n;
            n.kind = Node::Kind::Neg;
            n.line = op.line;
            n.column = op.column;
            n.args.push_back(unary());
            return n;
        }
        return power();
    }

    Node power() {
        Node base = primary();
        if (is_op('^')) {
            const Token op = tok_;
            take();
            return binary(Node::Kind::Pow, std::move(base), unary(), op);
        }
        return base;
    }

    Node primary() {
        const Token t = tok_;
        switch (t.kind) {
            case Token::Kind::Number: {
                take();
                Node n;
                n.kind = Node::Kind::Number;
                n.value = t.number;
                n.line = t.line;
                n.column = t.column;
                return n;
            }
            case Token::Kind::Ident: {
                take();
                Node n;
                n.name = t.text;
                n.line = t.line;
                n.column = t.column;
                if (tok_.kind == Token::Kind::LParen) {
                    take();
                    n.kind = Node::Kind::Call;
                    if (tok_.kind != Token::Kind::RParen) {
                        n.args.push_back(expr());
                        while (tok_.kind == Token::Kind::Comma) {
                            take();
                            n.args.push_back(expr());
                        }
                    }
                    if (tok_.kind != Token::Kind::RParen) fail("expected ')'");
                    take();
                } else {
                    n.kind = Node::Kind::Symbol;
                }
                return n;
            }
            case Token::Kind::LParen: {
                take();
                Node n = expr();
                if (tok_.kind != Token::Kind::RParen) fail("expected ')'");
                take();
                return n;
            }
            case Token::Kind::End:
                fail("unexpected end of expression");
            default:
                fail("unexpected '" + t.text + "'");
        }
    }

    Lexer lex_;
    Token tok_;
};

}  // namespace

Node parse_ast(std::string_view text, int line, int column) { return Parser(text, line, column).parse(); }

bool structurally_equal(const Node& a, const Node& b) {
    if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
    if (a.kind == Node::Kind::Number && a.value != b.value) return false;
    if ((a.kind == Node::Kind::Symbol || a.kind == Node::Kind::Call) && a.name != b.name) return false;
    for (std::size_t i = 0; i < a.args.size(); ++i)
        if (!structurally_equal(a.args[i], b.args[i])) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Printer
// ---------------------------------------------------------------------------

namespace {

std::string format_number(double v) {
    char buf[64];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

int precedence(const Node& n) {
    switch (n.kind) {
        case Node::Kind::Add: case Node::Kind::Sub: return 1;
        case Node::Kind::Mul: case Node::Kind::Div: return 2;
        case Node::Kind::Neg: return 3;
        case Node::Kind::Pow: return 4;
        default: return 5;
    }
}

void print_into(const Node& n, std::string& out);

void print_child(const Node& child, int min_prec, std::string& out) {
    if (precedence(child) < min_prec) {
        out += '(';
        print_into(child, out);
        out += ')';
    } else {
        print_into(child, out);
    }
}

void print_into(const Node& n, std::string& out) {
    switch (n.kind) {
        case Node::Kind::Number:
            out += format_number(n.value);
            return;
        case Node::Kind::Symbol:
            out += n.name;
            return;
        case Node::Kind::Call:
            out += n.name;
            out += '(';
            for (std::size_t i = 0; i < n.args.size(); ++i) {
                if (i) out += ", ";
                print_into(n.args[i], out);
            }
            out += ')';
            return;
        case Node::Kind::Neg:
            out += '-';
            print_child(n.args[0], 3, out);
            return;
        case Node::Kind::Pow:
            print_child(n.args[0], 5, out);
            out += '^';
            print_child(n.args[1], 3, out);
            return;
        default: {
            const int p = precedence(n);
            const char* op = n.kind == Node::Kind::Add ? " + " : n.kind == Node::Kind::Sub ? " - "
                           : n.kind == Node::Kind::Mul ? "*" : "/";
            print_child(n.args[0], p, out);
            out += op;
            print_child(n.args[1], p + 1, out);
            return;
        }
    }
}

}  // namespace

std::string print(const Node& node) {
    std::string out;
    print_into(node, out);
    return out;
}

// ---------------------------------------------------------------------------
// Compiled tape
// ---------------------------------------------------------------------------

enum class Op : std::uint8_t {
    Const, X, V, Neg, Add, Sub, Mul, Div, PowInt, PowConst, Pow,
    Sin, Cos, Exp, Log, Sqrt, Abs, Max, Min,
    NormX, NormV, NormArgs, CallX, CallV, CallArgs,
};

struct Instr {
    Op op = Op::Const;
    int a = 0;  // symbol index, integer power, argument count
    int b = 0;  // sub-norm index
    double c = 0.0;
};

struct Tape {
    std::vector<Instr> code;
    std::vector<std::shared_ptr<const Tape>> subs;
    std::vector<int> sub_dims;
    int max_depth = 0;
    int v_dim = 0;
    bool dep_x = false;
    bool dep_v = false;
};

namespace {

template <class T>
T eval_tape(const Tape& tape, std::span<const T> x, std::span<const T> v, EvalFlags* flags);

template <class T>
T run(const Tape& tape, std::span<const T> x, std::span<const T> v, EvalFlags* flags, T* stack) {
    int sp = 0;
    bool kink = false;
    for (const Instr& in : tape.code) {
        switch (in.op) {
            case Op::Const: stack[sp++] = T(in.c); break;
            case Op::X: stack[sp++] = x[static_cast<std::size_t>(in.a)]; break;
            case Op::V: stack[sp++] = v[static_cast<std::size_t>(in.a)]; break;
            case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
            case Op::Add: --sp; stack[sp - 1] = stack[sp - 1] + stack[sp]; break;
            case Op::Sub: --sp; stack[sp - 1] = stack[sp - 1] - stack[sp]; break;
            case Op::Mul: --sp; stack[sp - 1] = stack[sp - 1] * stack[sp]; break;
            case Op::Div:
                --sp;
                if (value_of(stack[sp]) == 0.0) throw EvalError("division by zero");
                stack[sp - 1] = stack[sp - 1] / stack[sp];
                break;
            case Op::PowInt: stack[sp - 1] = d_pow_int(stack[sp - 1], in.a); break;
            case Op::PowConst: stack[sp - 1] = d_pow_const(stack[sp - 1], in.c); break;
            case Op::Pow:
                --sp;
                stack[sp - 1] = d_exp(stack[sp] * d_log(stack[sp - 1]));
                break;
            case Op::Sin: stack[sp - 1] = d_sin(stack[sp - 1]); break;
            case Op::Cos: stack[sp - 1] = d_cos(stack[sp - 1]); break;
            case Op::Exp: stack[sp - 1] = d_exp(stack[sp - 1]); break;
            case Op::Log: stack[sp - 1] = d_log(stack[sp - 1]); break;
            case Op::Sqrt: stack[sp - 1] = d_sqrt(stack[sp - 1]); break;
            case Op::Abs: stack[sp - 1] = d_abs(stack[sp - 1], kink); break;
            case Op::Max:
            case Op::Min: {
                const int k = in.a;
                const int base = sp - k;
                int best = base;
                for (int i = base + 1; i < sp; ++i) {
                    const double vi = value_of(stack[i]);
                    const double vb = value_of(stack[best]);
                    if (vi == vb) kink = true;
                    if (in.op == Op::Max ? vi > vb : vi < vb) best = i;
                }
                stack[base] = stack[best];
                sp = base + 1;
                break;
            }
            case Op::NormX:
            case Op::NormV: {
                const auto& src = in.op == Op::NormX ? x : v;
                T acc(0.0);
                for (const T& c : src) acc = acc + c * c;
                stack[sp++] = d_sqrt(acc);
                break;
            }
            case Op::NormArgs: {
                const int k = in.a;
                const int base = sp - k;
                T acc(0.0);
                for (int i = base; i < sp; ++i) acc = acc + stack[i] * stack[i];
                stack[base] = d_sqrt(acc);
                sp = base + 1;
                break;
            }
            case Op::CallX:
                stack[sp++] = eval_tape<T>(*tape.subs[static_cast<std::size_t>(in.b)], {}, x, flags);
                break;
            case Op::CallV:
                stack[sp++] = eval_tape<T>(*tape.subs[static_cast<std::size_t>(in.b)], {}, v, flags);
                break;
            case Op::CallArgs: {
                const int k = in.a;
                const int base = sp - k;
                const T r = eval_tape<T>(*tape.subs[static_cast<std::size_t>(in.b)], {},
                                         std::span<const T>(stack + base, static_cast<std::size_t>(k)), flags);
                stack[base] = r;
                sp = base + 1;
                break;
            }
        }
    }
    if (kink && flags) flags->nonsmooth = true;
    return stack[0];
}

template <class T>
T eval_tape(const Tape& tape, std::span<const T> x, std::span<const T> v, EvalFlags* flags) {
    if (tape.max_depth <= 32) {
        std::array<T, 32> stack;
        return run(tape, x, v, flags, stack.data());
    }
    std::vector<T> stack(static_cast<std::size_t>(tape.max_depth));
    return run(tape, x, v, flags, stack.data());
}

int depth_of(const std::vector<Instr>& code) {
    int sp = 0;
    int best = 0;
    for (const Instr& in : code) {
        switch (in.op) {
            case Op::Const: case Op::X: case Op::V: case Op::NormX: case Op::NormV:
            case Op::CallX: case Op::CallV:
                ++sp;
                break;
            case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: case Op::Pow:
                --sp;
                break;
            case Op::Max: case Op::Min: case Op::NormArgs: case Op::CallArgs:
                sp -= in.a - 1;
                break;
            default:
                break;
        }
        best = std::max(best, sp);
    }
    return best;
}

class Compiler {
public:
    Compiler(const SymbolContext& ctx, Tape& tape) : ctx_(ctx), tape_(tape) {}

    // Appends code for n; returns true when the subtree is constant (and has
    // then been folded to a single Const).
    bool emit(const Node& n) {
        const std::size_t start = tape_.code.size();
        const bool constant = emit_raw(n);
        if (constant && tape_.code.size() - start > 1) {
            Tape tmp;
            tmp.code.assign(tape_.code.begin() + static_cast<std::ptrdiff_t>(start), tape_.code.end());
            tmp.subs = tape_.subs;
            tmp.max_depth = depth_of(tmp.code);
            double value = 0.0;
            try {
                value = eval_tape<double>(tmp, {}, {}, nullptr);
            } catch (const EvalError& e) {
                throw ParseError(e.what(), n.line, n.column);
            }
            tape_.code.resize(start);
            tape_.code.push_back({Op::Const, 0, 0, value});
        }
        return constant;
    }

private:
    [[noreturn]] static void fail(const Node& n, const std::string& msg) { throw ParseError(msg, n.line, n.column); }

    void push(Op op, int a = 0, int b = 0, double c = 0.0) { tape_.code.push_back({op, a, b, c}); }

    // Index of an x or v component symbol, or -1.
    static int component(const std::string& name, char prefix) {
        if (name.size() < 2 || name[0] != prefix) return -1;
        for (std::size_t i = 1; i < name.size(); ++i)
            if (!std::isdigit(static_cast<unsigned char>(name[i]))) return -1;
        if (name[1] == '0') return -1;
        return std::stoi(name.substr(1)) - 1;
    }

    bool emit_symbol(const Node& n) {
        const std::string& s = n.name;
        if (s == "pi") {
            push(Op::Const, 0, 0, std::numbers::pi);
            return true;
        }
        if (auto it = ctx_.constants.find(s); it != ctx_.constants.end()) {
            push(Op::Const, 0, 0, it->second);
            return true;
        }
        if (s == "x" || s == "v") fail(n, "vector symbol '" + s + "' is only valid as a norm argument");
        if (int i = component(s, 'x'); i >= 0) {
            if (i >= ctx_.x_dim) fail(n, "unknown symbol '" + s + "' (dimension " + std::to_string(ctx_.x_dim) + ")");
            push(Op::X, i);
            tape_.dep_x = true;
            return false;
        }
        if (int i = component(s, 'v'); i >= 0) {
            if (i >= ctx_.v_dim) fail(n, "unknown symbol '" + s + "' (dimension " + std::to_string(ctx_.v_dim) + ")");
            push(Op::V, i);
            tape_.dep_v = true;
            return false;
        }
        if (ctx_.letter_aliases && s.size() == 1 && s[0] >= 'a' && s[0] <= 'f') {
            const int i = s[0] - 'a';
            if (i >= ctx_.v_dim) fail(n, "unknown symbol '" + s + "' (norm dimension " + std::to_string(ctx_.v_dim) + ")");
            push(Op::V, i);
            tape_.dep_v = true;
            return false;
        }
        fail(n, "unknown symbol '" + s + "'");
    }

    static bool is_vector_symbol(const Node& n) {
        return n.kind == Node::Kind::Symbol && (n.name == "x" || n.name == "v");
    }

    bool emit_call(const Node& n) {
        static const std::map<std::string, Op> unary = {
            {"sin", Op::Sin}, {"cos", Op::Cos}, {"exp", Op::Exp},
            {"log", Op::Log}, {"sqrt", Op::Sqrt}, {"abs", Op::Abs},
        };
        const std::string& f = n.name;
        const int argc = static_cast<int>(n.args.size());
        if (auto it = unary.find(f); it != unary.end()) {
            if (argc != 1) fail(n, f + "() takes 1 argument, got " + std::to_string(argc));
            const bool c = emit(n.args[0]);
            push(it->second);
            return c;
        }
        if (f == "max" || f == "min") {
            if (argc < 1) fail(n, f + "() needs at least 1 argument");
            bool c = true;
            for (const Node& a : n.args) c = emit(a) && c;
            push(f == "max" ? Op::Max : Op::Min, argc);
            return c;
        }
        const bool is_norm = f == "norm";
        auto sub = ctx_.norms.find(f);
        if (!is_norm && sub == ctx_.norms.end()) fail(n, "unknown function '" + f + "'");
        int sub_index = -1;
        int sub_dim = 0;
        if (!is_norm) {
            sub_index = static_cast<int>(tape_.subs.size());
            tape_.subs.push_back(sub->second->tape_ptr());
            sub_dim = sub->second->v_dim();
        }
        if (argc == 1 && is_vector_symbol(n.args[0])) {
            const bool on_x = n.args[0].name == "x";
            const int dim = on_x ? ctx_.x_dim : ctx_.v_dim;
            if (dim == 0) fail(n.args[0], "vector symbol '" + n.args[0].name + "' is not available here");
            if (!is_norm && dim != sub_dim)
                fail(n, f + "() expects a " + std::to_string(sub_dim) + "-vector, got dimension " + std::to_string(dim));
            (on_x ? tape_.dep_x : tape_.dep_v) = true;
            if (is_norm)
                push(on_x ? Op::NormX : Op::NormV);
            else
                push(on_x ? Op::CallX : Op::CallV, 0, sub_index);
            return false;
        }
        if (argc == 0) fail(n, f + "() needs arguments");
        if (!is_norm && argc != sub_dim)
            fail(n, f + "() takes " + std::to_string(sub_dim) + " arguments, got " + std::to_string(argc));
        bool c = true;
        for (const Node& a : n.args) c = emit(a) && c;
        push(is_norm ? Op::NormArgs : Op::CallArgs, argc, sub_index);
        return c;
    }

    bool emit_raw(const Node& n) {
        switch (n.kind) {
            case Node::Kind::Number:
                push(Op::Const, 0, 0, n.value);
                return true;
            case Node::Kind::Symbol:
                return emit_symbol(n);
            case Node::Kind::Call:
                return emit_call(n);
            case Node::Kind::Neg: {
                const bool c = emit(n.args[0]);
                push(Op::Neg);
                return c;
            }
            case Node::Kind::Pow: {
                const bool cb = emit(n.args[0]);
                const std::size_t mark = tape_.code.size();
                const bool ce = emit(n.args[1]);
                if (ce) {
                    const double p = tape_.code.back().c;
                    tape_.code.resize(mark);
                    if (std::floor(p) == p && std::fabs(p) <= 64.0)
                        push(Op::PowInt, static_cast<int>(p));
                    else
                        push(Op::PowConst, 0, 0, p);
                } else {
                    push(Op::Pow);
                }
                return cb && ce;
            }
            default: {
                const bool c0 = emit(n.args[0]);
                const bool c1 = emit(n.args[1]);
                const Op op = n.kind == Node::Kind::Add ? Op::Add : n.kind == Node::Kind::Sub ? Op::Sub
                            : n.kind == Node::Kind::Mul ? Op::Mul : Op::Div;
                push(op);
                return c0 && c1;
            }
        }
    }

    const SymbolContext& ctx_;
    Tape& tape_;
};

}  // namespace

bool Expr::depends_on_x() const { return tape_ && tape_->dep_x; }
bool Expr::depends_on_v() const { return tape_ && tape_->dep_v; }

Expr compile(std::shared_ptr<const Node> ast, const SymbolContext& ctx) {
    auto tape = std::make_shared<Tape>();
    tape->v_dim = ctx.v_dim;
    Compiler(ctx, *tape).emit(*ast);
    tape->max_depth = depth_of(tape->code);
    Expr e;
    e.ast_ = std::move(ast);
    e.tape_ = std::move(tape);
    e.x_dim_ = ctx.x_dim;
    e.v_dim_ = ctx.v_dim;
    return e;
}

template <class T>
T Expr::eval(std::span<const T> x, std::span<const T> v, EvalFlags* flags) const {
    if (!tape_) throw SpecError("evaluating an empty expression");
    if ((tape_->dep_x && static_cast<int>(x.size()) < x_dim_) || (tape_->dep_v && static_cast<int>(v.size()) < v_dim_))
        throw SpecError("expression evaluated with too few bound symbols");
    return eval_tape<T>(*tape_, x.first(std::min<std::size_t>(x.size(), static_cast<std::size_t>(x_dim_))),
                        v.first(std::min<std::size_t>(v.size(), static_cast<std::size_t>(v_dim_))), flags);
}

template double Expr::eval<double>(std::span<const double>, std::span<const double>, EvalFlags*) const;
template D1 Expr::eval<D1>(std::span<const D1>, std::span<const D1>, EvalFlags*) const;
template D2 Expr::eval<D2>(std::span<const D2>, std::span<const D2>, EvalFlags*) const;

DualResult eval_dual(const Expr& e, std::span<const double> x, std::span<const double> seed,
                     std::span<const double> v) {
    if (seed.size() != x.size()) throw SpecError("seed direction must match the point dimension");
    std::vector<D1> xd(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xd[i] = D1(x[i], seed[i]);
    std::vector<D1> vd(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) vd[i] = D1(v[i]);
    EvalFlags flags;
    const D1 r = e.eval<D1>(xd, vd, &flags);
    return {r.v, r.d, flags.nonsmooth};
}

}  // namespace finslerlab::dsl
