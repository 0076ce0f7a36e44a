#include <doctest.h>

#include "finslerlab/binet_legendre.hpp"
#include "finslerlab/error.hpp"
#include "finslerlab/random.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

using namespace finslerlab;

namespace {

constexpr double pi = std::numbers::pi;

double rel_err(const Mat& a, const Mat& b) { return max_abs(a - b) / max_abs(b); }

BLIntegrator lattice() { return BLIntegrator{}; }

BLIntegrator mc(std::uint64_t seed) {
    BLIntegrator b;
    b.mode = BLBackend::MonteCarlo;
    b.seed = seed;
    return b;
}

Mat random_spd(Rng& rng, int n) {
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    return a * a.transpose() + 0.5 * Mat::Identity(n, n);
}

Mat random_invertible(Rng& rng, int n) {
    for (;;) {
        Mat l(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) l(i, j) = rng.normal();
        if (std::fabs(l.determinant()) > 0.3) return l;
    }
}

NormPtr catalog(const std::string& name) {
    if (name == "euclid") return euclidean_norm(2);
    if (name == "linf") return make_dsl_norm(2, "max(abs(v1), abs(v2))", true);
    if (name == "l1") return make_dsl_norm(2, "abs(v1) + abs(v2)", true);
    if (name == "l4") return make_dsl_norm(2, "(v1^4 + v2^4)^(1/4)", true);
    return make_dsl_norm(2, "sqrt(v1^2 + v2^2) + 0.5*v1", false);
}

}  // namespace

TEST_CASE("closed forms on the lattice backend") {
    CHECK(rel_err(bl_of_norm(*euclidean_norm(2), lattice()).g_bl, Mat::Identity(2, 2)) <= 1e-3);
    CHECK(rel_err(bl_of_norm(*euclidean_norm(3), lattice()).g_bl, Mat::Identity(3, 3)) <= 1e-3);
    const auto linf = bl_of_norm(*catalog("linf"), lattice());
    CHECK(rel_err(linf.g_bl, 0.75 * Mat::Identity(2, 2)) <= 1e-3);
    CHECK(rel_err(linf.g_star, (4.0 / 3.0) * Mat::Identity(2, 2)) <= 1e-3);
    CHECK(linf.vol == doctest::Approx(4.0).epsilon(1e-6));
    const auto l1 = bl_of_norm(*catalog("l1"), lattice());
    CHECK(rel_err(l1.g_bl, 1.5 * Mat::Identity(2, 2)) <= 1e-3);
    CHECK(l1.vol == doctest::Approx(2.0).epsilon(1e-4));
    // l-infinity in 3D: moment of the cube is (5/vol) * 8/3 -> g* = 5/3
    CHECK(rel_err(bl_of_norm(*make_dsl_norm(3, "max(abs(v1), abs(v2), abs(v3))", true), lattice()).g_bl,
                  0.6 * Mat::Identity(3, 3)) <= 1e-3);
}

TEST_CASE("Riemannian norms are reproduced") {
    const Mat a = Vec2(4.0, 1.0).asDiagonal();
    CHECK(rel_err(bl_of_norm(QuadraticNorm(a), lattice()).g_bl, a) <= 1e-3);
    Rng rng(substream(1, "spd"));
    for (int n = 2; n <= 3; ++n) {
        const Mat s = random_spd(rng, n);
        const auto r = bl_of_norm(QuadraticNorm(s), lattice());
        CHECK(rel_err(r.g_bl, s) <= 1e-3);
        CHECK(max_abs(r.g_bl * r.g_star - Mat::Identity(n, n)) <= 1e-10);
        const auto m = bl_of_norm(QuadraticNorm(s), mc(7));
        CHECK(max_abs(m.g_bl - s) <= 3 * m.error_estimate);
    }
}

TEST_CASE("Monte Carlo closed forms within three standard errors") {
    const std::pair<const char*, double> cases[] = {{"euclid", 1.0}, {"linf", 0.75}, {"l1", 1.5}};
    for (const auto& [name, c] : cases) {
        const auto r = bl_of_norm(*catalog(name), mc(3));
        CHECK(r.error_estimate > 0.0);
        CHECK(max_abs(r.g_bl - c * Mat::Identity(2, 2)) <= 3 * r.error_estimate);
    }
}

TEST_CASE("non-reversible Randers norm: ellipse moments and the golden file") {
    // the unit ball is an ellipse with a focus at the origin: semi-axes 4/3 and
    // 2/sqrt(3), centre (-2/3, 0); second moments give g* = diag(32/9, 4/3)
    const Mat exact = Vec2(9.0 / 32.0, 0.75).asDiagonal();
    const auto lat = bl_of_norm(*catalog("randers"), lattice());
    const auto mcr = bl_of_norm(*catalog("randers"), mc(11));
    CHECK(rel_err(lat.g_bl, exact) <= 1e-3);
    CHECK(lat.vol == doctest::Approx(pi * (4.0 / 3.0) * (2.0 / std::sqrt(3.0))).epsilon(1e-4));

    std::ifstream in(std::string(FINSLERLAB_TEST_DATA) + "/golden/randers_bl.json");
    REQUIRE(in.good());
    const auto j = nlohmann::json::parse(in);
    Mat golden(2, 2);
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k) golden(i, k) = j["g_bl"][i][k].get<double>();
    CHECK(rel_err(golden, exact) <= 1e-5);
    CHECK(max_abs(lat.g_bl - golden) <= 3 * (lat.error_estimate + j["error_estimate"].get<double>()));
    CHECK(max_abs(mcr.g_bl - golden) <= 3 * (mcr.error_estimate + j["error_estimate"].get<double>()));
    CHECK(max_abs(mcr.g_bl - lat.g_bl) <= 3 * (mcr.error_estimate + lat.error_estimate));
    CHECK(lat.g_bl.isApprox(lat.g_bl.transpose()));
    CHECK(is_positive_definite(lat.g_bl));
}

TEST_CASE("lattice and Monte Carlo agree on every catalog norm") {
    for (const char* name : {"euclid", "linf", "l1", "l4", "randers"}) {
        CAPTURE(name);
        const auto a = bl_of_norm(*catalog(name), lattice());
        const auto b = bl_of_norm(*catalog(name), mc(substream(5, name)));
        CHECK(max_abs(a.g_bl - b.g_bl) <= 3 * (a.error_estimate + b.error_estimate));
    }
}

TEST_CASE("spherical backend agrees with the lattice") {
    for (const char* name : {"euclid", "l4", "randers"}) {
        BLIntegrator s;
        s.mode = BLBackend::Spherical;
        const auto a = bl_of_norm(*catalog(name), lattice());
        const auto b = bl_of_norm(*catalog(name), s);
        CHECK(max_abs(a.g_bl - b.g_bl) <= 3 * (a.error_estimate + b.error_estimate));
    }
}

TEST_CASE("scaling: g_bl(lambda F) = lambda^2 g_bl(F)") {
    Rng rng(substream(2, "scale"));
    const auto base = catalog("l4");
    const auto g = bl_of_norm(*base, lattice());
    for (int t = 0; t < 5; ++t) {
        const double lam = rng.uniform(0.2, 5.0);
        const LinearPullbackNorm scaled(base, Mat::Identity(2, 2), lam);
        const auto s = bl_of_norm(scaled, lattice());
        CHECK(rel_err(s.g_bl, lam * lam * g.g_bl) <= 3 * g.error_estimate);
    }
}

TEST_CASE("linear equivariance: g_bl(F o L) = L^T g_bl(F) L") {
    Rng rng(substream(3, "equiv"));
    for (const char* name : {"l4", "randers", "linf"}) {
        const auto base = catalog(name);
        const auto g = bl_of_norm(*base, lattice());
        for (int t = 0; t < 5; ++t) {
            const Mat l = random_invertible(rng, 2);
            const auto p = bl_of_norm(LinearPullbackNorm(base, l), lattice());
            const Mat want = l.transpose() * g.g_bl * l;
            // entries of L^T E L sum n^2 = 4 terms of the error E
            CHECK(max_abs(p.g_bl - want) <= 3 * (p.error_estimate + 4 * max_abs(l) * max_abs(l) * g.error_estimate));
        }
    }
}

TEST_CASE("volume form independence under unimodular skew") {
    Rng rng(substream(4, "skew"));
    const auto base = catalog("randers");
    const auto g = bl_of_norm(*base, lattice());
    for (int t = 0; t < 3; ++t) {
        Mat s = random_invertible(rng, 2);
        s /= std::sqrt(std::fabs(s.determinant()));
        // integrate in coordinates w = S^{-1} v, then transform back
        const auto r = bl_of_norm(LinearPullbackNorm(base, s), lattice());
        const Mat si = s.inverse();
        const Mat back = si.transpose() * r.g_bl * si;
        CHECK(max_abs(back - g.g_bl) <= 3 * (4 * max_abs(si) * max_abs(si) * r.error_estimate + g.error_estimate));
    }
}

TEST_CASE("degenerate norms and invalid settings raise errors") {
    CHECK_THROWS_AS(bl_of_norm(*make_dsl_norm(2, "abs(v1)", true), lattice()), NumericError);
    BLIntegrator bad;
    bad.resolution = 1;
    CHECK_THROWS_AS(bl_of_norm(*euclidean_norm(2), bad), SpecError);
    CHECK_THROWS_AS(parse_backend("quadrature"), SpecError);
    CHECK(parse_backend("monte-carlo") == BLBackend::MonteCarlo);
    const ConstantFinsler f(euclidean_norm(2), punctured_space(2));
    CHECK_THROWS_AS(bl_metric(f, Vec2(0, 0), lattice()), DomainError);
}

TEST_CASE("Monte Carlo output is fixed by the seed") {
    const auto a = bl_of_norm(*catalog("l4"), mc(42));
    const auto b = bl_of_norm(*catalog("l4"), mc(42));
    const auto c = bl_of_norm(*catalog("l4"), mc(43));
    CHECK(a.g_bl == b.g_bl);
    CHECK(a.g_bl != c.g_bl);
}

TEST_CASE("bl_field of a Minkowski field is constant with vanishing Christoffels") {
    const FinslerPtr f = std::make_shared<ConstantFinsler>(catalog("randers"), Domain(2));
    const auto g = bl_field(f);
    CHECK(g->is_constant());
    const Tensor3 gam = christoffel(*g, Vec2(0.3, -1.2));
    CHECK(gam.max_abs() == 0.0);
    CHECK(rel_err((*g)(Vec2(5, 5)), Vec2(9.0 / 32.0, 0.75).asDiagonal().toDenseMatrix()) <= 1e-10);
}

TEST_CASE("bl_field of the Hopf field scales by 1/|x|^2") {
    const auto l4 = catalog("l4");
    const auto hopf = hopf_scene(l4, 2.0);
    const auto g = bl_field(hopf.field);
    const auto g0 = bl_field(std::make_shared<ConstantFinsler>(l4, punctured_space(2)));
    Rng rng(substream(6, "hopf"));
    for (int t = 0; t < 20; ++t) {
        const Point x = sample_domain(hopf.field->domain(), rng, 3.0);
        CHECK(rel_err((*g)(x), (*g0)(x) / x.squaredNorm()) <= 1e-12);
    }
    // lattice backend obeys the same law
    const auto gl = bl_field(hopf.field, lattice());
    const Point x = Vec2(0.7, -1.9);
    CHECK(rel_err((*gl)(x), bl_of_norm(*l4, lattice()).g_bl / x.squaredNorm()) <= 1e-10);
}

TEST_CASE("bl_field of an l4 product is block diagonal and block-proportional") {
    Domain d(2);
    d.lo[0] = 0.0;
    d.hi[0] = pi;
    const auto sphere = make_dsl_metric(2, {"1", "0", "0", "sin(x1)^2"}, d);
    const auto line = std::make_shared<ConstantMetric>(Mat::Identity(1, 1), Domain(1));
    auto ps = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{sphere, line});
    const auto f = product_finsler(ps, make_dsl_norm(2, "(v1^4 + v2^4)^(1/4)", true));
    const auto g = bl_field(f);
    Rng rng(substream(7, "block"));
    for (int t = 0; t < 10; ++t) {
        const Point x = sample_domain(f->domain(), rng);
        const Mat b = (*g)(x);
        CHECK(std::fabs(b(0, 2)) <= 1e-12 * max_abs(b));
        CHECK(std::fabs(b(1, 2)) <= 1e-12 * max_abs(b));
        const Mat g1 = (*sphere)(x.head(2));
        const double c1 = b(0, 0) / g1(0, 0);
        CHECK(rel_err(b.topLeftCorner(2, 2), c1 * g1) <= 1e-10);
        CHECK(c1 > 0.0);
        CHECK(b(2, 2) > 0.0);
    }
}
