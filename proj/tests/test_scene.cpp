#include <doctest.h>

#include "finslerlab/error.hpp"
#include "finslerlab/random.hpp"
#include "finslerlab/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>

using namespace finslerlab;

namespace {

const std::string kScenes = std::string(FINSLERLAB_TEST_DATA) + "/../scenes/";

std::string error_of(const std::string& text) {
    try {
        load_scene(text);
    } catch (const SpecError& e) {
        return e.what();
    }
    return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

std::vector<Point> samples(const Scene& s, int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Point> out;
    for (int i = 0; i < count; ++i) out.push_back(sample_domain(s.domain, rng, 1.5));
    return out;
}

}  // namespace

TEST_CASE("every catalog scene loads and prints canonically") {
    const auto names = catalog_names();
    CHECK(names.size() >= 15);
    for (const char* required : {"euclidean", "punctured-plane", "sphere-chart", "sphere-x-line", "hopf-ell4", "randers"})
        CHECK(std::find(names.begin(), names.end(), required) != names.end());
    for (const auto& name : names) {
        CAPTURE(name);
        const SceneConfig c = parse_scene(catalog_text(name));
        CHECK(c.name == name);
        const std::string p = print_scene(c);
        CHECK(print_scene(parse_scene(p)) == p);
        const Scene s = assemble_scene(c);
        CHECK(s.dim() == s.domain.dim());
        CHECK(s.metric->dim() == s.dim());
        CHECK(s.finsler->dim() == s.dim());
    }
}

TEST_CASE("round trip through the printed form reproduces the fields") {
    for (const auto& name : catalog_names()) {
        CAPTURE(name);
        const Scene a = resolve_scene(name);
        const Scene b = load_scene(print_scene(a.config));
        Rng rng(substream(7, name));
        for (const Point& x : samples(a, 6, substream(3, name))) {
            const Vec v = rng.normal_vector(a.dim());
            if (a.metric_declared) CHECK(max_abs((*a.metric)(x) - (*b.metric)(x)) <= 1e-15 * (1 + max_abs((*a.metric)(x))));
            CHECK(std::fabs((*a.finsler)(x, v) - (*b.finsler)(x, v)) <= 1e-15 * (1 + (*a.finsler)(x, v)));
            if (a.boundary.mode() == BoundaryProfile::Mode::ClosedForm) CHECK(a.boundary(x) == b.boundary(x));
        }
        REQUIRE(a.decks.size() == b.decks.size());
    }
}

TEST_CASE("scene = hopf-ell4, q = 2 assembles the Hopf field") {
    const Scene s = load_scene("scene = hopf-ell4, q = 2");
    CHECK(s.dim() == 2);
    REQUIRE(s.decks.size() == 1);
    CHECK(s.decks[0].coefficient == 2.0);
    const Point x = Vec2(0.3, -1.1);
    const Vec v = Vec2(0.7, 0.4);
    const double expect = std::pow(std::pow(0.7, 4) + std::pow(0.4, 4), 0.25) / x.norm();
    CHECK(std::fabs((*s.finsler)(x, v) - expect) <= 1e-15);
    const auto iso = deck_isometry_check(*s.finsler, s.decks[0], 50, 1);
    CHECK(std::fabs(iso.fitted - 1.0) <= 1e-12);
    CHECK(iso.residual <= 1e-12);
    const auto hom = metric_homothety_check(*s.metric, s.decks[0], 20, 2);
    CHECK(std::fabs(hom.fitted - 2.0) <= 1e-12);
    CHECK(s.boundary(x) == doctest::Approx(x.norm()).epsilon(1e-15));
    CHECK(s.domain.exclusions.size() == 1);

    const Scene s3 = resolve_scene("hopf-ell4, q = 3");
    CHECK(s3.decks[0].coefficient == 3.0);
    CHECK(s3.config.params[0].second == 3.0);
}

TEST_CASE("product scene with an l4 block norm") {
    const Scene s = resolve_scene("sphere-x-line-ell4");
    REQUIRE(s.product);
    CHECK(s.product->blocks() == 2);
    CHECK(s.product->block_dim(0) == 2);
    CHECK(s.domain.lo[0] == 0.0);
    CHECK(s.domain.hi[0] == doctest::Approx(std::numbers::pi).epsilon(1e-16));
    const Point x = Vec3(1.1, 0.4, -2.0);
    const Vec v = Vec3(0.5, -0.8, 0.3);
    const double a = std::sqrt(0.25 + std::pow(std::sin(1.1) * 0.8, 2));
    const double expect = std::pow(std::pow(a, 4) + std::pow(0.3, 4), 0.25);
    CHECK(std::fabs((*s.finsler)(x, v) - expect) <= 1e-15);

    const Scene c = resolve_scene("sphere-x-line-ell4-conf");
    CHECK(std::fabs((*c.finsler)(x, v) - std::exp(-2.0) * expect) <= 1e-15);

    const Scene f = load_scene(std::string("[product]\nblocks = sphere-chart, line\n[finsler]\nblock_norm = (a^4 + b^4)^(1/4)\n"));
    CHECK(std::fabs((*f.finsler)(x, v) - expect) <= 1e-15);
}

TEST_CASE("metric entries: symmetry, auto-symmetrization, missing diagonal") {
    const std::string asym = "dim = 2\n[metric]\ng11 = 1\ng12 = 0.1\ng21 = 0.2\ng22 = 1\n";
    const std::string err = error_of(asym);
    CHECK(contains(err, "[metric] g21 (line 5)"));
    CHECK(contains(err, "auto_symmetrize"));

    const Scene s = load_scene(asym + "auto_symmetrize = true\n");
    CHECK(s.config.warnings.size() == 1);
    CHECK((*s.metric)(Vec2(0, 0))(0, 1) == doctest::Approx(0.15).epsilon(1e-15));
    CHECK((*s.metric)(Vec2(0, 0))(1, 0) == doctest::Approx(0.15).epsilon(1e-15));

    const Scene lower = load_scene("dim = 2\n[metric]\ng11 = 2\ng21 = x1/10\ng22 = 3\n");
    CHECK((*lower.metric)(Vec2(1, 0))(0, 1) == doctest::Approx(0.1).epsilon(1e-15));

    CHECK(contains(error_of("dim = 2\n[metric]\ng11 = 1\n"), "missing diagonal entry g22"));
    CHECK(contains(error_of("dim = 2\n[metric]\ng11 = 1\ng22 = 1\ng33 = 1\n"), "[metric] g33 (line 5)"));
}

TEST_CASE("errors point into the scene text") {
    // expression errors carry the column within the line
    const std::string e1 = error_of("dim = 2\n\n[metric]\ng11 = 1 + * x1\ng22 = 1\n");
    CHECK(contains(e1, "[metric] g11 (line 4)"));
    CHECK(contains(e1, "line 4, column 11"));
    CHECK(contains(error_of("dim = 2\n[metric]\ng11 = x3\ng22 = 1\n"), "unknown symbol 'x3'"));
    CHECK(contains(error_of("dim = 2\n[metrc]\ng11 = 1\n"), "unknown section [metrc]"));
    CHECK(contains(error_of("dim = 2\n[metric]\ng11 = 1\ng22 = 1\nfoo = 1\n"), "[metric] foo (line 5): unknown key"));
    CHECK(contains(error_of("scene = hopf-ell4, p = 2"), "has no parameter 'p'"));
    CHECK(contains(error_of("scene = no-such-scene"), "unknown scene 'no-such-scene'"));
    CHECK(contains(error_of("dim = 2\n[domain]\nlo = 0, 1\nhi = 1, 1\n[metric]\ng11 = 1\ng22 = 1\n"), "empty interval for x2"));
    CHECK(contains(error_of("dim = 2\n[domain]\nexclude = center=[0] radius=1\n[metric]\ng11 = 1\ng22 = 1\n"), "center needs 2 values"));
    CHECK(contains(error_of("dim = 2\n[metric]\ng11 = 1\ng22 = 1\n[deck]\nmap = rotate q=2\n"), "unknown map kind 'rotate'"));
    CHECK(contains(error_of("dim = 2\n[finsler]\nblock_norm = a\n"), "needs a [product]"));
    CHECK(contains(error_of("dim = 2\n"), "needs [metric], [product]"));
    CHECK(contains(error_of("[product]\nblocks = sphere-chart, line\n[domain]\nlo = 0, 0, 0\n"), "takes its domain from the blocks"));
    CHECK(contains(error_of("dim = 2\n[norms]\nN = x1*v1\n[finsler]\nnorm = N(v)\n"), "[norms] N (line 3)"));
    CHECK(contains(error_of("dim = 1\n[params]\nx1 = 2\n[metric]\ng11 = 1\n"), "invalid parameter name"));
    CHECK_THROWS_AS(load_scene("dim = 2\n[metric]\ng11 = 1\ng11 = 2\ng22 = 1\n"), SpecError);
}

TEST_CASE("overrides replace inherited keys") {
    const Scene s = load_scene("scene = punctured-plane, q = 5\nname = p5\n[boundary]\nd_infty = 2*norm(x)\n");
    CHECK(s.config.name == "p5");
    CHECK(s.decks[0].coefficient == 5.0);
    CHECK(s.boundary(Vec2(3, 4)) == 10.0);
    CHECK(s.config.experiment_value("point"));
    CHECK(contains(error_of("scene = punctured-plane\n[boundary]\nmode = shooting\n"), "conflicts with d_infty"));
    const Scene e = load_scene("scene = euclidean\n[boundary]\nhorizon = 4\n");
    CHECK(e.boundary.mode() == BoundaryProfile::Mode::Shooting);
    CHECK(e.boundary.options().horizon == 4.0);
}

TEST_CASE("scene files") {
    const Scene p = resolve_scene(kScenes + "product-ell4.scene");
    const Scene q = resolve_scene("sphere-x-line-ell4");
    const Point x = Vec3(1.3, 2.0, 0.1);
    const Vec v = Vec3(-0.2, 0.5, 1.0);
    CHECK((*p.finsler)(x, v) == (*q.finsler)(x, v));
    REQUIRE(p.config.experiment_value("tol"));
    CHECK(*p.config.experiment_value("tol") == "1e-6");

    const Scene h = resolve_scene(kScenes + "hopf-randers.scene");
    CHECK(h.config.name == "hopf-randers");
    CHECK(h.decks[0].coefficient == 3.0);
    const Point y = Vec2(0.5, 0.5);
    CHECK(std::fabs((*h.finsler)(y, Vec2(0, 1)) - 1.3 / y.norm()) <= 1e-15);
    CHECK(std::fabs((*h.finsler)(y, Vec2(0, -1)) - 0.7 / y.norm()) <= 1e-15);
    CHECK(deck_isometry_check(*h.finsler, h.decks[0], 30, 3).residual <= 1e-12);

    const Scene k = resolve_scene(kScenes + "skew-plane.scene");
    CHECK((*k.metric)(Vec2(3, 4))(1, 0) == 0.25);
    CHECK(metric_homothety_check(*k.metric, k.decks[0], 10, 4).residual <= 1e-15);

    const auto dir = std::filesystem::temp_directory_path() / "finslerlab-scene-test";
    std::filesystem::create_directories(dir);
    const auto self = (dir / "self.scene").string();
    std::ofstream(self) << "scene = " << self << "\n";
    CHECK(contains(error_of("scene = " + self), "nest too deeply"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("dual derivatives of catalog expressions agree with central differences") {
    int checked = 0;
    for (const auto& name : catalog_names()) {
        const SceneConfig c = parse_scene(catalog_text(name));
        if (!c.blocks.empty()) continue;
        dsl::SymbolContext ctx;
        ctx.x_dim = c.dim;
        for (const auto& [k, v] : c.params) ctx.constants[k] = v;
        std::vector<std::string> texts = c.metric;
        if (!c.d_infty.empty()) texts.push_back(c.d_infty);
        if (!c.conformal.empty()) texts.push_back(c.conformal);
        const Scene s = assemble_scene(c);
        Rng rng(substream(11, name));
        for (const auto& t : texts) {
            const dsl::Expr e = dsl::parse(t, ctx);
            for (const Point& x : samples(s, 5, substream(12, name + t))) {
                const Vec seed = rng.unit_vector(c.dim);
                const auto r = dsl::eval_dual(e, {x.data(), static_cast<std::size_t>(x.size())},
                                              {seed.data(), static_cast<std::size_t>(seed.size())});
                const double h = 1e-6;
                const Point xp = x + h * seed, xm = x - h * seed;
                const double fd = (e.eval<double>({xp.data(), static_cast<std::size_t>(xp.size())}, {}) -
                                   e.eval<double>({xm.data(), static_cast<std::size_t>(xm.size())}, {})) / (2 * h);
                CAPTURE(name);
                CAPTURE(t);
                CHECK(std::fabs(r.derivative - fd) <= 1e-6 * std::max(1.0, std::fabs(fd)));
                ++checked;
            }
        }
    }
    CHECK(checked >= 40);
}
