#include <doctest.h>

#include "finslerlab/error.hpp"
#include "finslerlab/random.hpp"
#include "finslerlab/transport.hpp"

#include <cmath>
#include <numbers>

using namespace finslerlab;

namespace {

constexpr double pi = std::numbers::pi;

MetricPtr flat(int n) { return std::make_shared<ConstantMetric>(Mat::Identity(n, n), Domain(n)); }

MetricPtr sphere() {
    Domain d(2);
    d.lo[0] = 0.0;
    d.hi[0] = pi;
    return make_dsl_metric(2, {"1", "0", "0", "sin(x1)^2"}, d);
}

MetricPtr sphere3() {
    Domain d(3);
    d.lo[0] = d.lo[1] = 0.0;
    d.hi[0] = d.hi[1] = pi;
    return make_dsl_metric(3, {"1", "0", "0", "0", "sin(x1)^2", "0", "0", "0", "sin(x1)^2*sin(x2)^2"}, d);
}

std::shared_ptr<const ProductStructure> sphere_line() {
    return std::make_shared<const ProductStructure>(std::vector<MetricPtr>{sphere(), flat(1)});
}

NormPtr l4() { return make_dsl_norm(2, "(v1^4 + v2^4)^(1/4)", true); }

}  // namespace

TEST_CASE("flat geodesics are straight lines") {
    const auto g = flat(3);
    const Point x = Vec3(0.1, -0.2, 0.3);
    const Vec v = Vec3(1.0, 2.0, -0.5);
    const Path p = integrate_geodesic(*g, x, v, 5.0);
    CHECK(p.complete());
    CHECK(p.arclength == doctest::Approx(5.0).epsilon(1e-14));
    for (std::size_t k = 0; k < p.points.size(); ++k) CHECK((p.points[k] - (x + p.t[k] * v)).norm() <= 1e-12);
    CHECK(p.speed_drift <= 1e-12);
}

TEST_CASE("punctured plane: the straight geodesic towards the puncture exits at |x|") {
    const auto g = std::make_shared<ConstantMetric>(Mat::Identity(2, 2), punctured_space(2));
    const Path p = integrate_geodesic(*g, Vec2(1, 0), Vec2(-1, 0), 5.0);
    CHECK(p.cause == Termination::DomainExit);
    CHECK(std::fabs(p.arclength - (1.0 - 1e-8)) <= 1e-6);
    CHECK_THROWS_AS(parallel_transport(*g, p, Vec2(0, 1)), NumericError);
    CHECK_THROWS_AS(integrate_geodesic(*g, Vec2(0, 0), Vec2(1, 0), 1.0), DomainError);
}

TEST_CASE("great circles of the sphere chart close after length 2 pi") {
    const auto g = sphere();
    for (double a : {0.0, 0.3, 1.0}) {
        const Point x = Vec2(pi / 2, 0.0);
        const Vec v = Vec2(std::sin(a), std::cos(a));  // unit at the equator
        const Path p = integrate_geodesic(*g, x, v, 2 * pi, 1e-12);
        REQUIRE(p.complete());
        CHECK(std::fabs(p.end()[0] - pi / 2) <= 1e-6);
        CHECK(std::fabs(p.end()[1] - 2 * pi) <= 1e-6);
        CHECK(p.speed_drift <= 1e-9);
    }
}

TEST_CASE("flat transport leaves vectors unchanged") {
    const auto g = flat(2);
    const Path p = spline_path(*g, {Vec2(0, 0), Vec2(1, 0.5), Vec2(2, -1), Vec2(0.5, 0.5)});
    const Vec v = Vec2(0.3, -0.7);
    CHECK((parallel_transport(*g, p, v) - v).norm() <= 1e-14);
}

TEST_CASE("latitude circle at colatitude pi/3 reverses vectors") {
    const auto g = sphere();
    const double th = pi / 3;
    const Path p = curve_path(*g, {Segment{[th](double t) -> Point { return Vec2(th, t); },
                                           [](double) -> Vec { return Vec2(0, 1); }, 0.0, 2 * pi}});
    REQUIRE(p.complete());
    CHECK(p.arclength == doctest::Approx(2 * pi * std::sin(th)).epsilon(1e-12));
    const Vec e1 = Vec2(1, 0), e2 = Vec2(0, 1 / std::sin(th));
    CHECK((parallel_transport(*g, p, e1, 1e-12) + e1).norm() <= 1e-8);
    CHECK((parallel_transport(*g, p, e2, 1e-12) + e2).norm() <= 1e-8);
}

TEST_CASE("product transport keeps the blocks apart") {
    const auto ps = sphere_line();
    const auto& g = *ps->metric();
    const Path p = spline_path(g, {Vec3(1.0, 0.0, 0.0), Vec3(1.4, 0.5, 1.0), Vec3(1.2, 1.5, 0.2)});
    const Vec a = parallel_transport(g, p, Vec3(0.3, 1.0, 0.0));
    const Vec b = parallel_transport(g, p, Vec3(0.0, 0.0, 1.0));
    CHECK(std::fabs(a[2]) <= 1e-9);
    CHECK(std::fabs(b[0]) + std::fabs(b[1]) <= 1e-9);
    CHECK(b[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("Berwald check: Riemannian norms and the l4 product") {
    const auto ps = sphere_line();
    PathSampleSpec spec;
    spec.paths = 10;
    spec.seed = 1;
    const auto riem = berwald_check(RiemannFinsler(ps->metric()), *ps->metric(), spec, 1e-8);
    CHECK(riem.pass);
    CHECK(riem.paths == 10);
    CHECK(riem.geodesic_paths == 5);
    const auto f = product_finsler(ps, l4());
    spec.paths = 50;
    const auto r = berwald_check(*f, *ps->metric(), spec, 1e-6);
    CHECK(r.pass);
    CHECK(r.paths >= 50);
    CHECK(r.to_json()["pass"] == true);
}

TEST_CASE("Berwald verdict is invariant under constant scaling") {
    const auto ps = sphere_line();
    const auto f = product_finsler(ps, l4());
    PathSampleSpec spec;
    spec.paths = 6;
    spec.seed = 2;
    const auto a = berwald_check(*f, *ps->metric(), spec, 1e-6);
    const auto b = berwald_check(*scale_finsler(f, 7.5), *ps->metric(), spec, 1e-6);
    CHECK(a.pass == b.pass);
    CHECK(std::fabs(a.max_defect - b.max_defect) <= 1e-12);
}

TEST_CASE("Berwald defect shrinks with the integrator tolerance") {
    // transport of a Riemannian norm in a non-Levi-Civita setting is not needed:
    // the defect of the l4 product is pure integration error
    const auto ps = sphere_line();
    const auto f = product_finsler(ps, l4());
    PathSampleSpec spec;
    spec.paths = 4;
    spec.seed = 3;
    spec.length = 2.0;
    double prev = kInf;
    for (double tol : {1e-5, 1e-7, 1e-9}) {
        spec.ode_tol = tol;
        const double d = berwald_check(*f, *ps->metric(), spec, 1.0).max_defect;
        CHECK(d < prev);
        CHECK(d <= 100 * tol);
        prev = d;
    }
}

TEST_CASE("conformally scaled l4 product fails against its own BL field") {
    const auto ps = sphere_line();
    const auto f = conformal_scale(product_finsler(ps, l4()), make_dsl_scalar(3, "exp(x3)"));
    BLIntegrator integ;
    integ.mode = BLBackend::Spherical;
    const auto g = bl_field(f, integ);
    PathSampleSpec spec;
    spec.paths = 6;
    spec.seed = 4;
    spec.length = 1.5;
    spec.ode_tol = 1e-7;
    const auto r = berwald_check(*f, *g, spec, 1e-6);
    CHECK_FALSE(r.pass);
    CHECK(r.max_defect >= 1e-2);
    CHECK(r.witness_start.size() == 3);
}

TEST_CASE("canonical connection: Minkowski field exact, l4 product consistent") {
    PathSampleSpec spec;
    spec.paths = 4;
    spec.seed = 5;
    BLIntegrator integ;
    integ.mode = BLBackend::Spherical;
    const FinslerPtr mink = std::make_shared<ConstantFinsler>(make_dsl_norm(2, "sqrt(v1^2 + v2^2) + 0.5*v1", false), Domain(2));
    const auto a = canonical_connection_check(mink, integ, spec, 1e-12);
    CHECK(a.pass);
    CHECK(a.finsler.max_defect <= 1e-13);
    CHECK(a.metric_defect <= 1e-13);
    const auto f = product_finsler(sphere_line(), l4());
    const auto b = canonical_connection_check(f, integ, spec, 1e-5);
    CHECK(b.finsler.max_defect <= 1e-5);
    CHECK(b.metric_defect <= 1e-5);
    CHECK(b.pass);
}

TEST_CASE("proportional fields have the same BL connection") {
    const auto f = product_finsler(sphere_line(), l4());
    BLIntegrator integ;
    integ.mode = BLBackend::Spherical;
    const auto g1 = bl_field(f, integ);
    const auto g3 = bl_field(scale_finsler(f, 3.0), integ);
    const Point x = Vec3(1.1, 0.4, -0.3);
    CHECK(max_abs((*g3)(x) - 9.0 * (*g1)(x)) <= 1e-12 * max_abs((*g3)(x)));
    CHECK((christoffel(*g1, x) - christoffel(*g3, x)).max_abs() <= 1e-8);
}

TEST_CASE("holonomy: flat identity, sphere infinitesimal rotation, orthogonality") {
    LoopSpec spec;
    spec.triangles = 4;
    const auto hf = holonomy_generators(*flat(3), Vec3(0, 0, 0), spec);
    for (const auto& l : hf.loops) CHECK(max_abs(l.matrix - Mat::Identity(3, 3)) <= 1e-10);

    const auto g = sphere();
    const Point x = Vec2(pi / 2, 0.0);
    const auto hs = holonomy_generators(*g, x, spec);
    CHECK(hs.max_orthogonality_defect <= 1e-8);
    Mat j(2, 2);
    j << 0, -1, 1, 0;
    for (const auto& l : hs.loops) {
        if (l.descriptor.rfind("rect", 0) != 0) continue;
        const double h = std::stod(l.descriptor.substr(l.descriptor.rfind(',') + 1)) * std::min(g->domain().margin(x), 1.0);
        // K = 1: rotation by the enclosed area, whose sign is set by the orientation
        const double area = std::fabs(std::cos(x[0]) - std::cos(x[0] + h)) * h;
        const Mat d = l.matrix - Mat::Identity(2, 2);
        const double sgn = d(1, 0) > 0 ? 1.0 : -1.0;
        CHECK(max_abs(d - sgn * area * j) <= 5 * area * area + 1e-10);
    }
}

TEST_CASE("holonomy of sphere x line fixes the line; loop inversion") {
    const auto ps = sphere_line();
    const auto& g = *ps->metric();
    LoopSpec spec;
    spec.triangles = 5;
    const auto hs = holonomy_generators(g, Vec3(1.2, 0.0, 0.0), spec);
    for (const auto& l : hs.loops) {
        CHECK(std::fabs(l.matrix(2, 2) - 1.0) <= 1e-12);
        CHECK(std::fabs(l.matrix(0, 2)) + std::fabs(l.matrix(2, 0)) <= 1e-12);
        CHECK(l.orthogonality_defect <= 1e-8);
    }
    const Path loop = polygon_path(g, {Vec3(1.2, 0, 0), Vec3(1.5, 0.1, 0.2), Vec3(1.1, 0.4, -0.1)}, true);
    const Mat e = Mat::Identity(3, 3);
    const Mat there = transport_matrix(g, loop, e, 1e-12);
    const Mat back = transport_matrix(g, loop.reversed(), there, 1e-12);
    CHECK(max_abs(back - e) <= 2e-10);
    const Path geo = integrate_geodesic(g, Vec3(1.2, 0, 0), Vec3(0.3, 0.5, 0.2), 1.0, 1e-12);
    const Mat gt = transport_matrix(g, geo, e, 1e-12);
    CHECK(max_abs(transport_matrix(g, geo.reversed(), gt, 1e-12) - e) <= 2e-9);
}

TEST_CASE("invariant decompositions of the catalog metrics") {
    LoopSpec spec;
    const auto flat3 = invariant_decomposition(holonomy_generators(*flat(3), Vec3(0.2, 0.1, 0.0), spec));
    CHECK(flat3.dims() == std::vector<int>{3});

    const auto ps = sphere_line();
    const Point x = Vec3(1.2, 0.3, 0.5);
    spec.seed = 1;
    const auto d1 = invariant_decomposition(holonomy_generators(*ps->metric(), x, spec));
    spec.seed = 2;
    const auto d2 = invariant_decomposition(holonomy_generators(*ps->metric(), x, spec), 1e-6, 9);
    CHECK(d1.dims() == std::vector<int>{1, 2});
    CHECK(decomposition_distance(d1, d2) <= 1e-6);
    CHECK(std::fabs(std::fabs(d1.chart_basis(0)(2, 0)) - 1.0) <= 1e-9);
    CHECK(d1.block_defect <= 1e-8);
    CHECK(d1.v0_defect <= 1e-8);

    const Point y = Vec3(pi / 2, pi / 2, 0.0);
    spec.seed = 1;
    const auto s1 = invariant_decomposition(holonomy_generators(*sphere3(), y, spec));
    spec.seed = 2;
    const auto s2 = invariant_decomposition(holonomy_generators(*sphere3(), y, spec));
    CHECK(s1.dims() == std::vector<int>{0, 3});
    CHECK(decomposition_distance(s1, s2) <= 1e-6);
    CHECK(s1.to_json()["dims"] == nlohmann::json::array({0, 3}));
}

TEST_CASE("sphere x sphere splits into two 2-dimensional factors") {
    const auto ps = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{sphere(), sphere()});
    LoopSpec spec;
    const auto d = invariant_decomposition(holonomy_generators(*ps->metric(), Vec(Eigen::Vector4d(1.2, 0, 1.0, 0)), spec));
    CHECK(d.dims() == std::vector<int>{0, 2, 2});
    CHECK(d.block_defect <= 1e-8);
}

TEST_CASE("holonomy-invariant Finsler fields") {
    const auto ps = sphere_line();
    const MetricPtr g = ps->metric();
    const Point x0 = Vec3(1.2, 0.0, 0.0);
    const auto dec = invariant_decomposition(holonomy_generators(*g, x0, LoopSpec{}));
    REQUIRE(dec.dims() == std::vector<int>{1, 2});
    // coordinates of N follow the subspaces: (|v_0|, |v_1|) = (line, sphere)
    const auto f = holonomy_invariant_finsler(g, dec, l4());
    const auto ref = product_finsler(ps, l4());
    Rng rng(substream(12, "hinv"));
    for (int t = 0; t < 10; ++t) {
        const Point x = x0 + 0.3 * rng.normal_vector(3);
        const Vec v = rng.normal_vector(3);
        CHECK(std::fabs((*f)(x, v) - (*ref)(x, v)) <= 1e-9 * (*ref)(x, v));
    }

    const auto dec3 = invariant_decomposition(holonomy_generators(*sphere3(), Vec3(pi / 2, pi / 2, 0), LoopSpec{}));
    const auto riem = holonomy_invariant_finsler(sphere3(), dec3, make_dsl_norm(1, "abs(v1)", true));
    const RiemannFinsler rf(sphere3());
    for (int t = 0; t < 5; ++t) {
        const Point x = Vec3(pi / 2, pi / 2, 0) + 0.2 * rng.normal_vector(3);
        const Vec v = rng.normal_vector(3);
        CHECK(std::fabs((*riem)(x, v) - rf(x, v)) <= 1e-9 * rf(x, v));
    }

    CHECK_THROWS_AS(holonomy_invariant_finsler(g, dec, euclidean_norm(3)), SpecError);
    const auto pss = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{sphere(), sphere()});
    const Point z = Vec(Eigen::Vector4d(1.2, 0, 1.0, 0));
    const auto dss = invariant_decomposition(holonomy_generators(*pss->metric(), z, LoopSpec{}));
    CHECK_THROWS_AS(holonomy_invariant_finsler(pss->metric(), dss, make_dsl_norm(2, "sqrt(4*v1^2 + v2^2)", true)),
                    SpecError);
    CHECK_NOTHROW(holonomy_invariant_finsler(pss->metric(), dss, l4()));

    PathSampleSpec spec;
    spec.paths = 4;
    spec.seed = 6;
    spec.length = 0.5;
    CHECK(berwald_check(*f, *g, spec, 1e-6).pass);
}
