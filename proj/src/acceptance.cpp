#include "finslerlab/acceptance.hpp"

#include "finslerlab/binet_legendre.hpp"
#include "finslerlab/boundary.hpp"
#include "finslerlab/error.hpp"
#include "finslerlab/random.hpp"
#include "finslerlab/scene.hpp"
#include "finslerlab/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>

namespace finslerlab {

namespace {

constexpr double pi = std::numbers::pi;

using Parts = std::vector<CheckRecord>;

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
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

double ratio(double discrepancy, double estimate) {
    if (discrepancy == 0.0) return 0.0;
    return discrepancy / std::max(estimate, 1e-300);
}

BLIntegrator lattice() { return BLIntegrator{}; }
BLIntegrator spherical() {
    BLIntegrator b;
    b.mode = BLBackend::Spherical;
    return b;
}

// 1. g_bl of l-infinity, l1, Euclidean and quadratic norms
Parts c01(std::uint64_t seed) {
    Rng rng(substream(seed, "c01.spd"));
    const Mat a = Vec2(4.0, 1.0).asDiagonal();
    const Mat s = random_spd(rng, 3);
    struct Case {
        std::string name;
        NormPtr norm;
        Mat expect;
    };
    const std::vector<Case> cases = {
        {"euclidean", euclidean_norm(2), Mat::Identity(2, 2)},
        {"linf", make_dsl_norm(2, "max(abs(v1), abs(v2))", true), 0.75 * Mat::Identity(2, 2)},
        {"l1", make_dsl_norm(2, "abs(v1) + abs(v2)", true), 1.5 * Mat::Identity(2, 2)},
        {"quadratic-diag-4-1", std::make_shared<QuadraticNorm>(a), a},
        {"quadratic-random-spd", std::make_shared<QuadraticNorm>(s), s},
    };
    Parts parts;
    for (const auto& c : cases) {
        const BLResult lat = bl_of_norm(*c.norm, lattice());
        const double rel = max_abs(lat.g_bl - c.expect) / max_abs(c.expect);
        parts.push_back(make_check("lattice/" + c.name, rel, "<=", 1e-3,
                                   {{"g_bl", to_json(lat.g_bl)}, {"expected", to_json(c.expect)}}));
        BLIntegrator mc;
        mc.mode = BLBackend::MonteCarlo;
        mc.seed = substream(seed, "c01.mc." + c.name);
        const BLResult m = bl_of_norm(*c.norm, mc);
        parts.push_back(make_check("monte-carlo/" + c.name + " (standard errors)", ratio(max_abs(m.g_bl - c.expect), m.error_estimate),
                                   "<=", 3.0,
                                   {{"g_bl", to_json(m.g_bl)}, {"expected", to_json(c.expect)}, {"standard_error", m.error_estimate}}));
    }
    return parts;
}

// 2. g_bl(lambda F) = lambda^2 g_bl(F), g_bl(F o L) = L^T g_bl(F) L
Parts c02(std::uint64_t seed) {
    Rng rng(substream(seed, "c02.pairs"));
    const NormPtr base = make_dsl_norm(2, "sqrt(v1^2 + v2^2) + 0.5*v1", false);
    const BLResult g = bl_of_norm(*base, lattice());
    double worst_s = 0.0, worst_e = 0.0;
    nlohmann::json ws, we;
    for (int t = 0; t < 5; ++t) {
        const double lam = rng.uniform(0.2, 5.0);
        const Mat l = random_invertible(rng, 2);
        const BLResult s = bl_of_norm(LinearPullbackNorm(base, Mat::Identity(2, 2), lam), lattice());
        const double rs = ratio(max_abs(s.g_bl - lam * lam * g.g_bl), s.error_estimate + lam * lam * g.error_estimate);
        if (rs >= worst_s) {
            worst_s = rs;
            ws = {{"lambda", lam}, {"g_bl", to_json(s.g_bl)}, {"expected", to_json(Mat(lam * lam * g.g_bl))}};
        }
        const BLResult p = bl_of_norm(LinearPullbackNorm(base, l), lattice());
        const Mat want = l.transpose() * g.g_bl * l;
        // entries of L^T E L sum n^2 terms of the error E
        const double re = ratio(max_abs(p.g_bl - want), p.error_estimate + 4 * max_abs(l) * max_abs(l) * g.error_estimate);
        if (re >= worst_e) {
            worst_e = re;
            we = {{"L", to_json(l)}, {"g_bl", to_json(p.g_bl)}, {"expected", to_json(want)}};
        }
    }
    return {make_check("scaling (error estimates)", worst_s, "<=", 3.0, ws),
            make_check("equivariance (error estimates)", worst_e, "<=", 3.0, we)};
}

// 3. l4 product of sphere and line: Berwald, and the BL connection preserves it
Parts c03(std::uint64_t seed) {
    const Scene s = resolve_scene("sphere-x-line-ell4");
    PathSampleSpec spec;
    spec.paths = 50;
    spec.seed = substream(seed, "c03.paths");
    const BerwaldReport b = berwald_check(*s.finsler, *s.metric, spec, 1e-6);
    PathSampleSpec cspec = spec;
    cspec.paths = 8;
    cspec.seed = substream(seed, "c03.canonical");
    const CanonicalReport c = canonical_connection_check(s.finsler, spherical(), cspec, 1e-5);
    return {make_check("berwald defect", b.max_defect, "<=", 1e-6, b.to_json()),
            make_check("berwald paths", b.paths, ">=", 50, nullptr),
            make_check("canonical finsler defect", c.finsler.max_defect, "<=", 1e-5, c.finsler.to_json()),
            make_check("canonical metric defect", c.metric_defect, "<=", 1e-5, c.to_json())};
}

// 4. e^x3 times the l4 product is not Berwald for its BL connection
Parts c04(std::uint64_t seed) {
    const Scene s = resolve_scene("sphere-x-line-ell4-conf");
    const MetricPtr g = bl_field(s.finsler, spherical());
    PathSampleSpec spec;
    spec.paths = 10;
    spec.seed = substream(seed, "c04.paths");
    spec.length = 1.5;
    spec.ode_tol = 1e-7;
    const BerwaldReport b = berwald_check(*s.finsler, *g, spec, 1e-6);
    return {make_check("berwald defect", b.max_defect, ">=", 1e-2, b.to_json()),
            make_check("witnessed", b.witness_kind.empty() ? 0.0 : 1.0, ">=", 1.0, b.to_json())};
}

// 5. Levi-Civita difference of exp(2 phi) g and g
Parts c05(std::uint64_t seed) {
    Rng rng(substream(seed, "c05.phi"));
    Parts parts;
    for (const char* name : {"sphere-chart", "bumped-punctured-plane"}) {
        const Scene s = resolve_scene(name);
        double worst = 0.0;
        nlohmann::json w;
        for (int t = 0; t < 3; ++t) {
            const std::string text = num(rng.uniform(-1, 1)) + "*x1 + " + num(rng.uniform(-1, 1)) + "*x2^2 + " +
                                     num(rng.uniform(-0.5, 0.5)) + "*sin(x1*x2)";
            const ScalarPtr phi = make_dsl_scalar(2, text);
            const auto h = std::make_shared<ConformalMetric>(s.metric, phi);
            for (const Point& x : {Point(Vec2(rng.uniform(0.4, 2.7), rng.uniform(-1, 1))), Point(Vec2(rng.uniform(0.4, 2.7), rng.uniform(-1, 1)))}) {
                const double e = ((christoffel(*h, x) - christoffel(*s.metric, x)) - conformal_difference(*s.metric, *phi, x)).max_abs();
                if (e >= worst) {
                    worst = e;
                    w = {{"phi", text}, {"x", to_json(x)}};
                }
            }
        }
        parts.push_back(make_check(std::string(name) + " max entry error", worst, "<=", 1e-8, w));
    }
    return parts;
}

// 6. invariant decompositions, two seeds
Parts c06(std::uint64_t seed) {
    struct Case {
        const char* scene;
        Point x;
        std::vector<int> dims;
    };
    const std::vector<Case> cases = {{"sphere-x-line", Vec3(1.2, 0.3, 0.5), {1, 2}},
                                     {"sphere3-chart", Vec3(pi / 2, pi / 2, 0.0), {0, 3}},
                                     {"flat3d", Vec3(0.2, 0.1, 0.0), {3}}};
    Parts parts;
    for (const auto& c : cases) {
        const Scene s = resolve_scene(c.scene);
        LoopSpec a, b;
        a.seed = substream(seed, std::string("c06.a.") + c.scene);
        b.seed = substream(seed, std::string("c06.b.") + c.scene);
        const auto da = invariant_decomposition(holonomy_generators(*s.metric, c.x, a), 1e-6, a.seed);
        const auto db = invariant_decomposition(holonomy_generators(*s.metric, c.x, b), 1e-6, b.seed);
        const bool same = da.dims() == c.dims && db.dims() == c.dims;
        parts.push_back(make_check(std::string(c.scene) + " dims", same ? 1.0 : 0.0, ">=", 1.0,
                                   {{"dims", da.dims()}, {"dims_second_seed", db.dims()}, {"expected", c.dims}}));
        parts.push_back(make_check(std::string(c.scene) + " principal angle between seeds", decomposition_distance(da, db), "<=", 1e-6,
                                   {{"first", da.to_json()}, {"second", db.to_json()}}));
    }
    return parts;
}

// 7. Hopf scene with q = 2
Parts c07(std::uint64_t seed) {
    const Scene s = resolve_scene("hopf-ell4, q = 2");
    const DeckMap& d = s.decks.at(0);
    const DeckCheck iso = deck_isometry_check(*s.finsler, d, 200, substream(seed, "c07.iso"));
    const DeckCheck hom = metric_homothety_check(*s.metric, d, 200, substream(seed, "c07.hom"));
    Rng rng(substream(seed, "c07.escape"));
    double worst = 0.0;
    nlohmann::json w;
    bool all_exit = true;
    for (int t = 0; t < 10; ++t) {
        const Point x = rng.uniform(0.3, 3.0) * rng.unit_vector(2);
        const Path p = integrate_geodesic(*s.metric, x, -x / x.norm(), 2.0 * x.norm(), 1e-12);
        const bool exited = p.cause == Termination::DomainExit;
        all_exit = all_exit && exited;
        const double e = exited ? std::fabs(p.arclength - x.norm()) : kInf;
        if (e >= worst) {
            worst = e;
            w = {{"x", to_json(x)}, {"arclength", p.arclength}, {"expected", x.norm()}, {"exited", exited}};
        }
    }
    return {make_check("deck isometry residual", iso.residual, "<=", 1e-12, iso.to_json()),
            make_check("deck isometry factor - 1", std::fabs(iso.fitted - 1.0), "<=", 1e-12, iso.to_json()),
            make_check("flat homothety |k - q|", std::fabs(hom.fitted - s.decks[0].coefficient), "<=", 1e-12, hom.to_json()),
            make_check("flat homothety residual", hom.residual, "<=", 1e-12, hom.to_json()),
            make_check("escape arclength error", worst, "<=", 1e-6, w),
            make_check("all geodesics escape", all_exit ? 1.0 : 0.0, ">=", 1.0, w)};
}

// 8. Fried bounds on the punctured plane
Parts c08(std::uint64_t seed) {
    const Scene s = resolve_scene("punctured-plane");
    const FriedScene fs(s.metric, s.boundary);
    Rng rng(substream(seed, "c08.pairs"));
    double radial = 0.0;
    nlohmann::json wr;
    for (int t = 0; t < 5; ++t) {
        const Point x = rng.uniform(0.3, 2.0) * rng.unit_vector(2);
        const FriedBoundReport r = fried_bound_check(fs, x, 3.0 * x);
        if (std::fabs(r.bound_a_margin) >= radial) {
            radial = std::fabs(r.bound_a_margin);
            wr = r.to_json();
        }
    }
    double worst = kInf;
    nlohmann::json w;
    int pairs = 0, with_b = 0;
    while (pairs < 200) {
        Point x, y;
        if (pairs % 2 == 0) {
            x = rng.in_ball(Vec2(0, 0), 2.0);
            if (x.norm() < 0.3) continue;
            y = rng.in_ball(x, 0.95 * x.norm());
        } else {
            x = rng.in_ball(Vec2(0, 0), 3.0);
            y = rng.in_ball(Vec2(0, 0), 3.0);
            if (x.norm() < 0.2 || y.norm() < 0.2) continue;
        }
        const FriedBoundReport r = fried_bound_check(fs, x, y);
        double m = r.bound_a_margin;
        if (r.bound_b_margin) {
            m = std::min(m, *r.bound_b_margin);
            ++with_b;
        }
        if (m < worst) {
            worst = m;
            w = r.to_json();
        }
        ++pairs;
    }
    return {make_check("radial |bound (a) margin|", radial, "<=", 1e-3, wr),
            make_check("min margin over 200 pairs", worst, ">=", -1e-3, w, {{"pairs", pairs}, {"pairs_with_bound_b", with_b}})};
}

// 9. flat rectangles on two product scenes
Parts c09(std::uint64_t seed) {
    Parts parts;
    for (const char* name : {"line-x-bumped-punctured", "sphere-x-line"}) {
        const Scene s = resolve_scene(name);
        const ProductStructure& ps = *s.product;
        Rng rng(substream(seed, std::string("c09.") + name));
        RectangleOptions opt;
        opt.profile = &s.boundary;
        double curv = 0.0, excess = -kInf;
        int failed = 0;
        nlohmann::json wc, we, wf;
        for (int t = 0; t < 10; ++t) {
            Point x;
            if (std::string(name) == "sphere-x-line") {
                x = Vec3(rng.uniform(0.9, 2.2), rng.uniform(-pi, pi), rng.uniform(-2, 2));
            } else {
                const double r = rng.uniform(0.5, 1.5), a = rng.uniform(0, 2 * pi);
                x = Vec3(rng.uniform(-2, 2), r * std::cos(a), r * std::sin(a));
            }
            Vec v = rng.normal_vector(3);
            const Mat gx = (*s.metric)(x);
            v /= std::sqrt(v.dot(gx * v));
            double ell = rng.uniform(0.2, 0.5);
            const DInftyEstimate de = s.boundary.estimate(x);
            if (de.found) ell = std::min(ell, 0.5 * de.value);
            const RectangleReport r = flat_rectangle(ps, x, v, ell, opt);
            if (!r.pass) {
                ++failed;
                wf = r.to_json();
                wf.erase("grid");
            }
            if (r.max_curvature >= curv) {
                curv = r.max_curvature;
                wc = {{"x", to_json(x)}, {"v", to_json(v)}, {"ell", ell}};
            }
            if (r.max_distance_excess >= excess) {
                excess = r.max_distance_excess;
                we = {{"x", to_json(x)}, {"v", to_json(v)}, {"ell", ell}};
            }
        }
        parts.push_back(make_check(std::string(name) + " max curvature", curv, "<=", 1e-5, wc));
        parts.push_back(make_check(std::string(name) + " max distance excess", excess, "<=", 1e-5, we));
        parts.push_back(make_check(std::string(name) + " failed rectangles", failed, "<=", 0, wf));
    }
    return parts;
}

// 10. splitting diagnostics on line x bumped punctured plane
Parts c10(std::uint64_t seed) {
    const Scene s = resolve_scene("line-x-bumped-punctured");
    const ProductStructure& ps = *s.product;
    Rng rng(substream(seed, "c10.points"));
    std::vector<Point> pts;
    for (int k = 0; k < 10; ++k) {
        const double r = rng.uniform(0.3, 0.9), a = rng.uniform(0, 2 * pi);
        pts.push_back(Vec3(rng.uniform(-2, 2), r * std::cos(a), r * std::sin(a)));
    }
    ShootingOptions opt;
    opt.directions = 128;
    const SplitReport rep = splitting_diagnostic(ps, pts, opt, 1e-8);
    double r1 = 0.0, r2 = kInf, angle = kInf;
    for (const auto& p : rep.points) {
        r1 = std::max(r1, p.r1);
        r2 = std::min(r2, p.r2);
        angle = std::min(angle, p.witness_angle);
    }
    ShootingOptions popt;
    popt.directions = 64;
    double spread = 0.0;
    nlohmann::json ws;
    for (int k = 0; k < 3; ++k) {
        const LeafProbe p = leaf_completeness_probe(ps, pts[static_cast<std::size_t>(k)], Vec3(1.0, 0.0, 0.0), 1e3, popt, 5);
        if (p.d_infty_spread >= spread) {
            spread = p.d_infty_spread;
            ws = p.to_json();
            ws["x"] = to_json(pts[static_cast<std::size_t>(k)]);
        }
    }
    const nlohmann::json wj = rep.to_json();
    return {make_check("max R1", r1, "<=", 1e-8, wj),
            make_check("min R2", r2, ">", 0.1, wj),
            make_check("min witness angle from leaf 1 (deg)", angle, ">=", 80.0, wj),
            make_check("splitting verdicts", rep.pass ? 1.0 : 0.0, ">=", 1.0, wj),
            make_check("d_infty spread along leaf-1 geodesics", spread, "<=", 1e-3, ws)};
}

}  // namespace

const std::vector<Criterion>& acceptance_criteria() {
    static const std::vector<Criterion> c = {
        {1, "c01-bl-closed-forms", "Binet-Legendre closed forms", 30},
        {2, "c02-bl-scaling-equivariance", "Binet-Legendre scaling and equivariance", 30},
        {3, "c03-berwald-positive", "Berwald check on the l4 product", 60},
        {4, "c04-berwald-negative", "conformally scaled l4 product is not Berwald", 30},
        {5, "c05-connection-difference", "connection difference of conformal metrics", 5},
        {6, "c06-holonomy-decomposition", "holonomy decompositions", 60},
        {7, "c07-hopf-scene", "Hopf scene deck map and incompleteness", 5},
        {8, "c08-fried-bounds", "Fried distance bounds on the punctured plane", 60},
        {9, "c09-flat-rectangle", "flat rectangles in product scenes", 30},
        {10, "c10-splitting", "splitting diagnostics on line x bumped plane", 60},
    };
    return c;
}

CriterionResult run_criterion(int id, std::uint64_t seed) {
    static const std::vector<std::function<Parts(std::uint64_t)>> runners = {c01, c02, c03, c04, c05, c06, c07, c08, c09, c10};
    const auto& all = acceptance_criteria();
    if (id < 1 || id > static_cast<int>(all.size())) throw SpecError("no acceptance criterion " + std::to_string(id));
    CriterionResult r;
    r.criterion = all[static_cast<std::size_t>(id - 1)];
    const auto t0 = std::chrono::steady_clock::now();
    Parts parts;
    try {
        parts = runners[static_cast<std::size_t>(id - 1)](seed);
    } catch (const Error& e) {
        parts = {make_check("completed", 0.0, ">=", 1.0, {{"error", e.what()}})};
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json detail = nlohmann::json::array();
    nlohmann::json witness;
    int failed = 0;
    for (const auto& p : parts) {
        detail.push_back({{"name", p.name}, {"value", p.value}, {"tolerance", p.tolerance}, {"relation", p.relation},
                          {"status", p.pass ? "PASS" : "FAIL"}});
        if (!p.pass) {
            ++failed;
            if (witness.is_null()) witness = {{"part", p.name}, {"witness", p.witness}};
        }
    }
    r.check = make_check(r.criterion.name, failed, "<=", 0, witness, {{"title", r.criterion.title}, {"parts", detail}});
    return r;
}

std::string summary_line(const CriterionResult& r) {
    const bool in_time = r.seconds <= r.criterion.budget_seconds;
    std::string s = (r.check.pass && in_time) ? "PASS" : "FAIL";
    char head[64];
    std::snprintf(head, sizeof head, "  %2d  ", r.criterion.id);
    s += head + r.criterion.title + "  [";
    bool first = true;
    for (const auto& p : r.check.detail["parts"]) {
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s%s %.3g %s %.3g%s", first ? "" : "; ", p["name"].get<std::string>().c_str(),
                      p["value"].get<double>(), p["relation"].get<std::string>().c_str(), p["tolerance"].get<double>(),
                      p["status"] == "PASS" ? "" : " FAIL");
        s += buf;
        first = false;
    }
    char tail[96];
    std::snprintf(tail, sizeof tail, "]  %.1f s / %.0f s%s", r.seconds, r.criterion.budget_seconds, in_time ? "" : " (over budget)");
    return s + tail;
}

}  // namespace finslerlab
