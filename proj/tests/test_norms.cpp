#include <doctest.h>

#include "finslerlab/error.hpp"
#include "finslerlab/norms.hpp"
#include "finslerlab/random.hpp"

#include <cmath>
#include <numbers>

using namespace finslerlab;

namespace {

constexpr double pi = std::numbers::pi;

NormPtr l4(int n = 2) {
    std::string s = "(";
    for (int i = 1; i <= n; ++i) s += (i > 1 ? " + v" : "v") + std::to_string(i) + "^4";
    return make_dsl_norm(n, s + ")^(1/4)", true);
}

MetricPtr sphere() {
    Domain d(2);
    d.lo[0] = 0.0;
    d.hi[0] = pi;
    return make_dsl_metric(2, {"1", "0", "0", "sin(x1)^2"}, d);
}

MetricPtr flat(int n) { return std::make_shared<ConstantMetric>(Mat::Identity(n, n), Domain(n)); }

}  // namespace

TEST_CASE("Euclidean norm validates with zero violations") {
    const auto r = validate_minkowski(*euclidean_norm(3), 1000, 1);
    CHECK(r.pass);
    CHECK(r.reversible);
    for (const auto& a : r.axioms) CHECK(a.max_violation <= 1e-12);
}

TEST_CASE("l4 norm validates and is reversible") {
    const auto r = validate_minkowski(*l4(), 1000, 2);
    CHECK(r.pass);
    CHECK(r.reversible);
}

TEST_CASE("Randers-type norm passes the axioms but is not reversible") {
    const auto randers = make_dsl_norm(2, "sqrt(v1^2 + v2^2) + 0.5*v1", false);
    const auto r = validate_minkowski(*randers, 1000, 3);
    CHECK(r.axiom("homogeneity").pass);
    CHECK(r.axiom("subadditivity").pass);
    CHECK(r.axiom("definiteness").pass);
    CHECK_FALSE(r.reversible);
    CHECK(r.pass);
    // the same norm declared reversible is rejected
    CHECK_FALSE(validate_minkowski(*make_dsl_norm(2, "sqrt(v1^2 + v2^2) + 0.5*v1", true), 1000, 3).pass);
}

TEST_CASE("non-norms fail the matching axiom with a witness") {
    const auto sq = validate_minkowski(*make_dsl_norm(2, "v1^2 + v2^2", true), 200, 4);
    CHECK_FALSE(sq.axiom("homogeneity").pass);
    CHECK(sq.axiom("homogeneity").argmax_sample.size() == 5);
    CHECK_FALSE(validate_minkowski(*make_dsl_norm(2, "abs(v1)", true), 200, 4).axiom("definiteness").pass);
    CHECK_FALSE(validate_minkowski(*make_dsl_norm(2, "sqrt(abs(v1)) * sqrt(abs(v2))", true), 200, 4)
                    .axiom("subadditivity")
                    .pass);
    const auto j = sq.to_json();
    CHECK(j["axioms"][0].contains("axiom"));
    CHECK(j["axioms"][0].contains("max_violation"));
    CHECK(j["axioms"][0].contains("argmax_sample"));
}

TEST_CASE("product of flat blocks with Euclidean N is the product Riemannian norm") {
    auto ps = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{flat(2), flat(1)});
    const auto f = product_finsler(ps, euclidean_norm(2));
    const RiemannFinsler riem(ps->metric());
    Rng rng(substream(5, "prod"));
    for (int t = 0; t < 100; ++t) {
        const Point x = rng.normal_vector(3);
        const Vec v = rng.normal_vector(3);
        CHECK(std::fabs((*f)(x, v) - riem(x, v)) <= 1e-12);
    }
}

TEST_CASE("l4 product of sphere chart and line at block norms (3, 4)") {
    auto ps = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{sphere(), flat(1)});
    const auto f = product_finsler(ps, l4());
    const Point x = Vec3(pi / 6, 0.3, 1.0);  // sin(pi/6) = 1/2
    const Vec v = Vec3(0.0, 6.0, 4.0);       // |v_1| = 6 * 1/2 = 3
    CHECK((*f)(x, v) == doctest::Approx(std::pow(337.0, 0.25)).epsilon(1e-14));
}

TEST_CASE("swapping equal flat blocks under a symmetric N leaves F unchanged") {
    auto ps = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{flat(2), flat(2)});
    const auto f = product_finsler(ps, l4());
    Rng rng(substream(6, "swap"));
    for (int t = 0; t < 100; ++t) {
        const Point x = rng.normal_vector(4);
        const Vec v = rng.normal_vector(4);
        Vec w(4);
        w << v[2], v[3], v[0], v[1];
        CHECK((*f)(x, v) == doctest::Approx((*f)(x, w)).epsilon(1e-15));
    }
}

TEST_CASE("non-reversible N is refused on non-flat blocks and allowed on flat ones") {
    const auto nr = make_dsl_norm(2, "sqrt(v1^2 + v2^2) + 0.5*v1", false);
    auto curved = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{sphere(), flat(1)});
    CHECK_THROWS_AS(product_finsler(curved, nr), SpecError);
    auto flat_first = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{flat(1), sphere()});
    CHECK_NOTHROW(product_finsler(flat_first, nr));
    CHECK_THROWS_AS(product_finsler(curved, euclidean_norm(3)), SpecError);
}

TEST_CASE("conformal scaling: unit factor, inverse pair and the Hopf field") {
    const Domain dom = punctured_space(2);
    const FinslerPtr f = std::make_shared<ConstantFinsler>(l4(), dom);
    const auto one = conformal_scale(f, make_dsl_scalar(2, "1"));
    const auto twice = conformal_scale(conformal_scale(f, make_dsl_scalar(2, "exp(x1)")), make_dsl_scalar(2, "exp(-x1)"));
    const auto hopf = hopf_scene(l4(), 2.0);
    Rng rng(substream(7, "conf"));
    for (int t = 0; t < 100; ++t) {
        const Point x = rng.normal_vector(2);
        const Vec v = rng.normal_vector(2);
        CHECK((*one)(x, v) == (*f)(x, v));
        CHECK(std::fabs((*twice)(x, v) - (*f)(x, v)) <= 1e-15 * std::max(1.0, (*f)(x, v)) * 4);
        CHECK((*hopf.field)(x, v) == doctest::Approx((*f)(x, v) / x.norm()).epsilon(1e-15));
    }
    CHECK_THROWS_AS((*conformal_scale(f, make_dsl_scalar(2, "-1")))(Vec2(1, 1), Vec2(1, 0)), DomainError);
}

TEST_CASE("constructed fields are positively homogeneous") {
    auto ps = std::make_shared<const ProductStructure>(std::vector<MetricPtr>{sphere(), flat(1)});
    const FinslerPtr fields[] = {product_finsler(ps, l4()), hopf_scene(l4(3), 2.0).field,
                                 std::make_shared<RiemannFinsler>(ps->metric())};
    Rng rng(substream(8, "homog"));
    for (const auto& f : fields) {
        for (int t = 0; t < 100; ++t) {
            const Point x = sample_domain(f->domain(), rng);
            const Vec v = rng.normal_vector(3);
            const double lam = rng.uniform(0, 10);
            const double a = (*f)(x, Vec(lam * v)), b = lam * (*f)(x, v);
            CHECK(std::fabs(a - b) <= 1e-12 * std::max(1.0, b));
        }
    }
}

TEST_CASE("Hopf deck map: isometry of the field, homothety of the flat metric") {
    const auto s = hopf_scene(l4(), 3.0);
    const auto iso = deck_isometry_check(*s.field, s.deck, 500, 9);
    CHECK(iso.fitted == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(iso.residual <= 1e-12);
    const auto hom = metric_homothety_check(*s.flat, s.deck, 100, 9);
    CHECK(hom.fitted == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(hom.residual <= 1e-12);
    const auto s2 = hopf_scene(euclidean_norm(2), 2.0);
    CHECK(metric_homothety_check(*s2.flat, s2.deck, 50, 1).fitted == doctest::Approx(2.0));
    CHECK_THROWS_AS(hopf_scene(l4(), 1.0), SpecError);
    CHECK_THROWS_AS(hopf_scene(l4(), -2.0), SpecError);
}

TEST_CASE("identity deck map and the unscaled Minkowski field") {
    const auto s = hopf_scene(l4(), 2.0);
    const auto id = deck_isometry_check(*s.field, DeckMap::identity(2), 100, 10);
    CHECK(id.fitted == 1.0);
    CHECK(id.residual == 0.0);
    const ConstantFinsler mink(l4(), punctured_space(2));
    const auto r = deck_isometry_check(mink, s.deck, 100, 10);
    // x-independent field: only the differential acts, scaling F by q
    CHECK(r.fitted == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(r.residual <= 1e-12);
}

TEST_CASE("conformal scaling commutes with deck pullback for equivariant factors") {
    const auto s = hopf_scene(l4(), 2.0);
    const auto lam = make_dsl_scalar(2, "1/norm(x)");
    const FinslerPtr base = std::make_shared<ConstantFinsler>(l4(), punctured_space(2));
    const auto scaled = conformal_scale(base, lam);
    Rng rng(substream(11, "commute"));
    for (int t = 0; t < 100; ++t) {
        const Point x = sample_domain(base->domain(), rng);
        const Vec v = rng.normal_vector(2);
        const Point y = s.deck.map(x);
        const Vec w = s.deck.differential(x) * v;
        CHECK((*scaled)(y, w) == doctest::Approx(lam->eval(y) * (*base)(y, w)).epsilon(1e-15));
    }
}

TEST_CASE("pullback norm and sampling helpers") {
    Mat l(2, 2);
    l << 2, 1, 0, 1;
    const LinearPullbackNorm p(euclidean_norm(2), l);
    CHECK(p(Vec2(1, 1)) == doctest::Approx(std::sqrt(10.0)));
    Domain d(2);
    d.lo[0] = 0;
    d.hi[0] = 1;
    Rng rng(1);
    for (int t = 0; t < 100; ++t) CHECK(d.contains(sample_domain(d, rng)));
}
