#include <doctest.h>

#include "finslerlab/dsl/expr.hpp"
#include "finslerlab/error.hpp"
#include "finslerlab/random.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace finslerlab;
using namespace finslerlab::dsl;

namespace {

SymbolContext ctx(int xd, int vd) {
    SymbolContext c;
    c.x_dim = xd;
    c.v_dim = vd;
    return c;
}

double central_diff(const Expr& e, std::vector<double> x, std::size_t k, const std::vector<double>& v, double h) {
    auto xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    return (e(xp, v) - e(xm, v)) / (2 * h);
}

}  // namespace

TEST_CASE("power of a sine parses into a Pow node over a Call") {
    const Node n = parse_ast("sin(x1)^2");
    REQUIRE(n.kind == Node::Kind::Pow);
    CHECK(n.args[0].kind == Node::Kind::Call);
    CHECK(n.args[0].name == "sin");
    CHECK(n.args[1].value == 2.0);
}

TEST_CASE("l4 norm expression evaluates to the fourth-root norm") {
    const Expr e = parse("(v1^4 + v2^4)^(1/4)", ctx(0, 2));
    const std::vector<double> v{3.0, 4.0};
    CHECK(e({}, v) == doctest::Approx(std::pow(337.0, 0.25)).epsilon(1e-15));
    CHECK(e.depends_on_v());
    CHECK_FALSE(e.depends_on_x());
}

TEST_CASE("precedence: power is right associative and binds tighter than unary minus") {
    const Expr e = parse("-2^3^2", ctx(0, 0));
    CHECK(e({}, {}) == -512.0);
    CHECK(parse("2*3+4/2-1", ctx(0, 0))({}, {}) == 7.0);
    CHECK(parse("-x1^2", ctx(1, 0))(std::vector<double>{3.0}) == -9.0);
    CHECK(parse("2^-1", ctx(0, 0))({}, {}) == 0.5);
}

TEST_CASE("dual evaluation of x1^2 and sin(x1)") {
    const std::vector<double> seed{1.0};
    auto r = eval_dual(parse("x1^2", ctx(1, 0)), std::vector<double>{3.0}, seed);
    CHECK(r.value == 9.0);
    CHECK(r.derivative == 6.0);
    r = eval_dual(parse("sin(x1)", ctx(1, 0)), std::vector<double>{std::numbers::pi / 4}, seed);
    CHECK(r.value == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-15));
    CHECK(r.derivative == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-15));
}

TEST_CASE("dual derivatives of nested norm expressions match central differences") {
    SymbolContext c = ctx(3, 3);
    c.norms["F0"] = std::make_shared<const Expr>(parse("(v1^4 + v2^4 + v3^4)^(1/4)", ctx(0, 3)));
    const Expr e = parse("exp(x1 - x2) / norm(x) * F0(v) + log(1 + norm(x1*x2, x3))^2 * sqrt(F0(x) + v1^2)", c);
    Rng rng(substream(7, "nested-norm"));
    for (int t = 0; t < 100; ++t) {
        std::vector<double> x(3), v(3), seed(3);
        for (int i = 0; i < 3; ++i) {
            x[i] = rng.uniform(0.2, 2.0) * (rng.uniform() < 0.5 ? -1 : 1);
            v[i] = rng.uniform(-1.0, 1.0);
            seed[i] = rng.uniform(-1.0, 1.0);
        }
        const auto r = eval_dual(e, x, seed, v);
        double fd = 0.0;
        for (std::size_t k = 0; k < 3; ++k) fd += seed[k] * central_diff(e, x, k, v, 1e-6);
        CHECK(r.derivative == doctest::Approx(fd).epsilon(1e-7).scale(1.0));
        CHECK_FALSE(r.nonsmooth);
    }
}

TEST_CASE("second-order duals give exact mixed partials") {
    const Expr e = parse("x1^3 * sin(x2)", ctx(2, 0));
    const std::vector<D2> x{D2(D1(1.5, 1.0), D1(0.0, 0.0)), D2(D1(0.7, 0.0), D1(1.0, 0.0))};
    const D2 r = e.eval<D2>(x, {});
    // d^2/dx1 dx2 = 3 x1^2 cos(x2)
    CHECK(r.d.d == doctest::Approx(3 * 1.5 * 1.5 * std::cos(0.7)).epsilon(1e-14));
    CHECK(r.v.v == doctest::Approx(1.5 * 1.5 * 1.5 * std::sin(0.7)).epsilon(1e-14));
}

TEST_CASE("abs at its kink yields zero derivative and raises the flag") {
    const Expr e = parse("abs(x1)", ctx(1, 0));
    const std::vector<double> seed{1.0};
    const auto r = eval_dual(e, std::vector<double>{0.0}, seed);
    CHECK(r.derivative == 0.0);
    CHECK(r.nonsmooth);
    const auto s = eval_dual(e, std::vector<double>{-2.0}, seed);
    CHECK(s.derivative == -1.0);
    CHECK_FALSE(s.nonsmooth);
    CHECK(eval_dual(parse("max(x1, 0)", ctx(1, 0)), std::vector<double>{0.0}, seed).nonsmooth);
    CHECK_FALSE(eval_dual(parse("max(x1, 0)", ctx(1, 0)), std::vector<double>{0.5}, seed).nonsmooth);
}

TEST_CASE("evaluation domain errors") {
    CHECK_THROWS_AS(parse("log(x1)", ctx(1, 0))(std::vector<double>{-1.0}), EvalError);
    CHECK_THROWS_AS(parse("sqrt(x1)", ctx(1, 0))(std::vector<double>{-1.0}), EvalError);
    CHECK_THROWS_AS(parse("1/x1", ctx(1, 0))(std::vector<double>{0.0}), EvalError);
    CHECK_THROWS_AS(parse("x1^(-1)", ctx(1, 0))(std::vector<double>{0.0}), EvalError);
    CHECK_THROWS_AS(eval_dual(parse("sqrt(x1)", ctx(1, 0)), std::vector<double>{0.0}, std::vector<double>{1.0}),
                    EvalError);
}

TEST_CASE("syntax and symbol errors carry line and column") {
    try {
        parse("x1 + * 2", ctx(1, 0));
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 1);
        CHECK(e.column() == 6);
    }
    try {
        parse("x1 + x3", ctx(2, 0), 4, 10);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 4);
        CHECK(e.column() == 15);
    }
    CHECK_THROWS_AS(parse("sin(x1, x2)", ctx(2, 0)), ParseError);
    CHECK_THROWS_AS(parse("foo(x1)", ctx(2, 0)), ParseError);
    CHECK_THROWS_AS(parse("(x1 + 2", ctx(2, 0)), ParseError);
    CHECK_THROWS_AS(parse("x + 1", ctx(2, 0)), ParseError);
    CHECK_THROWS_AS(parse("x1 $ 2", ctx(2, 0)), ParseError);
    CHECK_THROWS_AS(parse("log(0)", ctx(2, 0)), ParseError);
}

TEST_CASE("letter aliases address tangent components") {
    SymbolContext c = ctx(0, 2);
    c.letter_aliases = true;
    const Expr e = parse("(a^4 + b^4)^(1/4)", c);
    CHECK(e({}, std::vector<double>{3.0, 4.0}) == doctest::Approx(std::pow(337.0, 0.25)));
    CHECK_THROWS_AS(parse("a + c", c), ParseError);
}

TEST_CASE("parse-print-parse is idempotent") {
    const char* cases[] = {
        "sin(x1)^2",
        "(v1^4 + v2^4)^(1/4)",
        "-x1^2 - (x2 - x1) - -x2",
        "2^3^2 + (2^3)^2",
        "x1/(x2*x1)/x2 * (x1 - x2 - x1)",
        "-(x1 + x2)^-0.5",
        "0.1 + 1e-8 * max(x1, x2, 3) / norm(x1, x2)",
        "exp(-(x1^2))*cos(pi*x2)",
    };
    for (const char* s : cases) {
        const Node a = parse_ast(s);
        const std::string printed = print(a);
        const Node b = parse_ast(printed);
        CHECK_MESSAGE(structurally_equal(a, b), s << " -> " << printed);
        CHECK(print(b) == printed);
    }
}

TEST_CASE("random expressions survive print and reparse bit-exactly") {
    Rng rng(substream(11, "random-ast"));
    const char* atoms[] = {"x1", "x2", "v1", "0.3", "1.7", "pi"};
    const char* bins[] = {" + ", " - ", "*", "/", "^"};
    for (int t = 0; t < 200; ++t) {
        std::string s = atoms[rng.next() % 6];
        for (int k = 0; k < 6; ++k) {
            const std::string rhs = rng.uniform() < 0.3 ? std::string("sin(") + atoms[rng.next() % 6] + ")"
                                                        : atoms[rng.next() % 6];
            s = (rng.uniform() < 0.5 ? "(" + s + ")" : s) + bins[rng.next() % 5] + rhs;
            if (rng.uniform() < 0.2) s = "-" + s;
        }
        const Node a = parse_ast(s);
        CHECK_MESSAGE(structurally_equal(a, parse_ast(print(a))), s);
    }
}

TEST_CASE("constant subexpressions fold and literals print exactly") {
    const Expr e = parse("0.1 + 0.2", ctx(0, 0));
    CHECK(e.is_constant());
    CHECK(e({}, {}) == 0.1 + 0.2);
    const Node n = parse_ast(print(parse_ast("0.1")));
    CHECK(n.value == 0.1);
}
