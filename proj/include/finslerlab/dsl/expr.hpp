#pragma once

#include "finslerlab/dsl/dual.hpp"

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace finslerlab::dsl {

using D1 = Dual<double>;
using D2 = Dual<Dual<double>>;

// Syntax tree node. Trees are immutable once built and shared by Expr copies.
struct Node {
    enum class Kind { Number, Symbol, Neg, Add, Sub, Mul, Div, Pow, Call };

    Kind kind = Kind::Number;
    double value = 0.0;               // Number
    std::string name;                 // Symbol or Call
    std::vector<Node> args;           // operands / call arguments
    int line = 1;
    int column = 1;
};

bool structurally_equal(const Node& a, const Node& b);

// Canonical text: minimal parentheses, numbers printed with 17 significant
// digits so print/parse reproduces every literal bit-exactly.
std::string print(const Node& node);

class Expr;

// What symbols an expression may reference.
//   x1..xn  chart coordinates (n = x_dim), `x` as a vector inside norm(...)
//   v1..vm  tangent components (m = v_dim), `v` as a vector
//   a..f    aliases for v1..v6 when `letter_aliases` is set (norm formulas N(a, b))
//   constants: named reals (pi is always available)
//   norms: named sub-norms callable as NAME(v), NAME(x) or NAME(e1, ..., em)
struct SymbolContext {
    int x_dim = 0;
    int v_dim = 0;
    bool letter_aliases = false;
    std::map<std::string, double> constants;
    std::map<std::string, std::shared_ptr<const Expr>> norms;
};

// Flags raised during evaluation.
struct EvalFlags {
    bool nonsmooth = false;  // abs/max/min evaluated at a kink
};

struct Tape;

// A parsed, symbol-checked, compiled expression.
class Expr {
public:
    Expr() = default;

    const Node& ast() const { return *ast_; }
    std::string text() const { return print(*ast_); }

    int x_dim() const { return x_dim_; }
    int v_dim() const { return v_dim_; }
    bool depends_on_x() const;
    bool depends_on_v() const;
    bool is_constant() const { return !depends_on_x() && !depends_on_v(); }
    const std::shared_ptr<const Tape>& tape_ptr() const { return tape_; }

    template <class T>
    T eval(std::span<const T> x, std::span<const T> v, EvalFlags* flags = nullptr) const;

    double operator()(std::span<const double> x, std::span<const double> v = {}) const {
        return eval<double>(x, v);
    }

private:
    friend Expr compile(std::shared_ptr<const Node> ast, const SymbolContext& ctx);

    std::shared_ptr<const Node> ast_;
    std::shared_ptr<const Tape> tape_;
    int x_dim_ = 0;
    int v_dim_ = 0;
};

// Parses text into a syntax tree (syntax errors carry line/column offsets
// relative to `line`, `column`).
Node parse_ast(std::string_view text, int line = 1, int column = 1);

// Resolves symbols and function arity; throws ParseError on unknown symbols or
// arity mismatch.
Expr compile(std::shared_ptr<const Node> ast, const SymbolContext& ctx);

inline Expr parse(std::string_view text, const SymbolContext& ctx, int line = 1, int column = 1) {
    return compile(std::make_shared<const Node>(parse_ast(text, line, column)), ctx);
}

// Value and directional derivative along `seed` (w.r.t. the x coordinates).
struct DualResult {
    double value = 0.0;
    double derivative = 0.0;
    bool nonsmooth = false;
};
DualResult eval_dual(const Expr& e, std::span<const double> x, std::span<const double> seed,
                     std::span<const double> v = {});

extern template double Expr::eval<double>(std::span<const double>, std::span<const double>, EvalFlags*) const;
extern template D1 Expr::eval<D1>(std::span<const D1>, std::span<const D1>, EvalFlags*) const;
extern template D2 Expr::eval<D2>(std::span<const D2>, std::span<const D2>, EvalFlags*) const;

}  // namespace finslerlab::dsl
