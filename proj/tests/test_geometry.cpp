#include <doctest.h>

#include "finslerlab/error.hpp"
#include "finslerlab/geometry.hpp"
#include "finslerlab/random.hpp"

#include <cmath>
#include <numbers>

using namespace finslerlab;

namespace {

constexpr double pi = std::numbers::pi;

Domain sphere_domain() {
    Domain d(2);
    d.lo[0] = 0.0;
    d.hi[0] = pi;
    return d;
}

MetricPtr sphere(double r = 1.0) {
    const std::string r2 = std::to_string(r * r);
    return make_dsl_metric(2, {r2, "0", "0", r2 + "*sin(x1)^2"}, sphere_domain());
}

MetricPtr flat(int n) {
    return std::make_shared<ConstantMetric>(Mat::Identity(n, n), Domain(n));
}

MetricPtr line() { return flat(1); }

// Opaque copy of a metric: forces the finite-difference path.
MetricPtr opaque(const MetricPtr& g) {
    return std::make_shared<CallbackMetric>([g](const Point& x) { return g->eval(x); }, g->domain());
}

}  // namespace

TEST_CASE("flat metric has vanishing Christoffels and curvature") {
    const Point x = Vec::Random(2);
    CHECK(christoffel(*flat(2), x).max_abs() == 0.0);
    CHECK(riemann(*flat(2), x).max_abs() == 0.0);
    CHECK(curvature_norm_sq(*flat(2), x) == 0.0);
}

TEST_CASE("sphere chart Christoffels at colatitude pi/4") {
    const Point x = Vec2(pi / 4, 0.0);
    const Tensor3 G = christoffel(*sphere(), x);
    CHECK(G(0, 1, 1) == doctest::Approx(-0.5).epsilon(1e-14));
    CHECK(G(1, 0, 1) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(G(1, 1, 0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::fabs(G(0, 0, 0)) + std::fabs(G(0, 0, 1)) + std::fabs(G(1, 0, 0)) + std::fabs(G(1, 1, 1)) < 1e-15);
    // finite-difference cross-check
    const Tensor3 F = christoffel(*opaque(sphere()), x);
    CHECK((G - F).max_abs() < 1e-9);
}

TEST_CASE("Christoffels are exactly symmetric in the lower indices") {
    const auto g = make_dsl_metric(3, {"2 + sin(x2)", "x1*x3/10", "0.1*x2", "x1*x3/10", "3 + x1^2", "0.2",
                                       "0.1*x2", "0.2", "1 + exp(x3)/5"});
    Rng rng(substream(3, "sym"));
    for (int t = 0; t < 20; ++t) {
        const Point x = rng.normal_vector(3) * 0.5;
        const Tensor3 G = christoffel(*g, x);
        for (int k = 0; k < 3; ++k)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) CHECK(G(k, i, j) == G(k, j, i));
    }
}

TEST_CASE("conformally flat exp(2 x1) Id at the origin") {
    const auto g = make_dsl_metric(2, {"exp(2*x1)", "0", "0", "exp(2*x1)"});
    const Tensor3 G = christoffel(*g, Vec::Zero(2));
    CHECK(G(0, 0, 0) == doctest::Approx(1.0));
    CHECK(G(0, 1, 1) == doctest::Approx(-1.0));
    CHECK(G(1, 0, 1) == doctest::Approx(1.0));
    CHECK(G(1, 1, 0) == doctest::Approx(1.0));
    CHECK(std::fabs(G(0, 0, 1)) + std::fabs(G(1, 0, 0)) + std::fabs(G(1, 1, 1)) == 0.0);
    const Tensor3 D = conformal_difference(*flat(2), *make_dsl_scalar(2, "x1"), Vec::Zero(2));
    CHECK((G - D).max_abs() < 1e-15);
}

TEST_CASE("conformal difference: constant phi and linearity in the gradient") {
    const Point o = Vec::Zero(2);
    CHECK(conformal_difference(*flat(2), *make_dsl_scalar(2, "3.5"), o).max_abs() == 0.0);
    const Tensor3 a = conformal_difference(*flat(2), *make_dsl_scalar(2, "x1"), o);
    const Tensor3 b = conformal_difference(*flat(2), *make_dsl_scalar(2, "x2"), o);
    const Tensor3 ab = conformal_difference(*flat(2), *make_dsl_scalar(2, "x1 + x2"), o);
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) CHECK(ab(k, i, j) == doctest::Approx(a(k, i, j) + b(k, i, j)));
    CHECK(a(0, 0, 0) == 1.0);
    CHECK(a(0, 1, 1) == -1.0);
    CHECK(a(1, 0, 1) == 1.0);
    CHECK(a(1, 1, 0) == 1.0);
}

TEST_CASE("conformal difference equals the Christoffel difference for random phi") {
    Rng rng(substream(5, "phi"));
    const MetricPtr metrics[] = {flat(2), sphere()};
    for (const auto& g : metrics) {
        for (int t = 0; t < 5; ++t) {
            const double a = rng.uniform(-1, 1), b = rng.uniform(-1, 1), c = rng.uniform(-0.5, 0.5);
            const auto phi = make_dsl_scalar(2, std::to_string(a) + "*x1 + " + std::to_string(b) + "*x2^2 + " +
                                                    std::to_string(c) + "*sin(x1*x2)");
            const auto h = std::make_shared<ConformalMetric>(g, phi);
            const Point x = Vec2(rng.uniform(0.3, 2.8), rng.uniform(-1, 1));
            const Tensor3 diff = christoffel(*h, x) - christoffel(*g, x);
            CHECK((diff - conformal_difference(*g, *phi, x)).max_abs() < 1e-12);
            // finite-difference path of the same identity
            const Tensor3 fd = christoffel(*opaque(h), x) - christoffel(*opaque(g), x);
            CHECK((fd - conformal_difference(*g, *phi, x)).max_abs() < 1e-7);
        }
    }
}

TEST_CASE("unit sphere: sectional curvature 1 and squared curvature norm 4") {
    Rng rng(substream(1, "sphere-points"));
    const auto g = sphere();
    for (int t = 0; t < 10; ++t) {
        const Point x = Vec2(rng.uniform(0.2, pi - 0.2), rng.uniform(-3, 3));
        const Tensor4 R = riemann(*g, x);
        CHECK(sectional_curvature(R, g->eval(x), Vec2(1, 0), Vec2(0, 1)) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(curvature_norm_sq(*g, x) == doctest::Approx(4.0).epsilon(1e-12));
        for (int l = 0; l < 2; ++l)
            for (int k = 0; k < 2; ++k)
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j) CHECK(R(l, i, j, k) == doctest::Approx(-R(l, j, i, k)).scale(1));
    }
    // finite-difference second derivatives agree to their truncation level
    const Point x = Vec2(pi / 4, 0.0);
    CHECK(curvature_norm_sq(*opaque(g), x) == doctest::Approx(4.0).epsilon(1e-5));
}

TEST_CASE("curvature norm scales as c^-2 under constant rescaling") {
    Rng rng(substream(2, "homothety"));
    const auto g = sphere();
    for (int t = 0; t < 10; ++t) {
        const double c = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
        const Point x = Vec2(rng.uniform(0.3, 2.8), rng.uniform(-1, 1));
        const ScaledMetric h(g, c);
        CHECK(curvature_norm_sq(h, x) == doctest::Approx(curvature_norm_sq(*g, x) / (c * c)).epsilon(1e-10));
    }
    CHECK(curvature_norm_sq(ScaledMetric(g, 4.0), Vec2(1.0, 0.0)) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("round 3-sphere chart has squared curvature norm 12") {
    Domain d(3);
    d.lo[0] = d.lo[1] = 0.0;
    d.hi[0] = d.hi[1] = pi;
    const auto g = make_dsl_metric(3, {"1", "0", "0", "0", "sin(x1)^2", "0", "0", "0", "sin(x1)^2*sin(x2)^2"}, d);
    CHECK(curvature_norm_sq(*g, Vec3(1.0, 1.2, 0.3)) == doctest::Approx(12.0).epsilon(1e-11));
}

TEST_CASE("product curvature has no mixed block components") {
    const ProductStructure ps({sphere(), line()});
    Rng rng(substream(4, "mixed"));
    for (int t = 0; t < 5; ++t) {
        const Point x = Vec3(rng.uniform(0.3, 2.8), rng.uniform(-2, 2), rng.uniform(-2, 2));
        const Tensor4 R = riemann(*ps.metric(), x);
        auto block = [](int i) { return i < 2 ? 0 : 1; };
        for (int l = 0; l < 3; ++l)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    for (int k = 0; k < 3; ++k) {
                        const bool mixed = !(block(l) == block(i) && block(i) == block(j) && block(j) == block(k));
                        if (mixed) CHECK(R(l, i, j, k) == 0.0);
                    }
        CHECK(curvature_norm_sq(*ps.metric(), x) == doctest::Approx(4.0).epsilon(1e-12));
    }
}

TEST_CASE("leaf curvature norms of product structures") {
    const Point x3 = Vec3(0.4, 1.0, 0.5);
    auto r = leaf_curvature_norms(ProductStructure({line(), sphere()}), Vec3(0.4, 1.0, 0.5));
    CHECK(r[0] == 0.0);
    CHECK(r[1] == doctest::Approx(4.0).epsilon(1e-12));
    r = leaf_curvature_norms(ProductStructure({flat(2), flat(1)}), x3);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
    Vec x4(4);
    x4 << 1.0, 0.2, 2.0, -0.7;
    r = leaf_curvature_norms(ProductStructure({sphere(1.0), sphere(2.0)}), x4);
    CHECK(r[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("domain predicates and positive-definiteness errors") {
    Domain d(2);
    Exclusion e;
    e.center = Vec::Zero(2);
    d.exclusions.push_back(e);
    CHECK(d.contains(Vec2(1, 0)));
    CHECK_FALSE(d.contains(Vec2(0, 0)));
    CHECK(d.boundary_margin(Vec2(3, 4)) == doctest::Approx(5.0));
    CHECK_THROWS_AS(christoffel(*sphere(), Vec2(-0.1, 0.0)), DomainError);
    const auto bad = make_dsl_metric(2, {"1", "2", "2", "1"});
    CHECK_THROWS_AS((*bad)(Vec2(0, 0)), DomainError);
    CHECK_THROWS_AS(make_dsl_metric(2, {"1", "x1", "0", "1"}), SpecError);
}
