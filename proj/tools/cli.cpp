#include "cli.hpp"

#include "finslerlab/acceptance.hpp"
#include "finslerlab/binet_legendre.hpp"
#include "finslerlab/boundary.hpp"
#include "finslerlab/error.hpp"
#include "finslerlab/parallel.hpp"
#include "finslerlab/random.hpp"
#include "finslerlab/report.hpp"
#include "finslerlab/scene.hpp"
#include "finslerlab/transport.hpp"

#include <CLI11.hpp>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>

namespace finslerlab {

namespace {

struct Common {
    std::string scene;
    std::string point;
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;
    std::optional<int> resolution;
    std::string out;
    std::string format;
};

void add_common(CLI::App* app, Common& c, bool scene_required) {
    auto* s = app->add_option("--scene", c.scene, "catalog name, 'name, p = v' or .scene path");
    if (scene_required) s->required();
    app->add_option("--point", c.point, "comma-separated chart coordinates");
    app->add_option("--seed", c.seed, "global seed");
    app->add_option("--tol", c.tol, "check tolerance");
    app->add_option("--resolution", c.resolution, "integration or lattice resolution");
    app->add_option("--out", c.out, "output file (default stdout)");
    app->add_option("--format", c.format, "json, csv or text")->check(CLI::IsMember({"json", "csv", "text"}));
}

Vec parse_list(const std::string& text, const std::string& what) {
    std::vector<double> vals;
    std::size_t start = 0;
    int depth = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i < text.size() && text[i] == '(') ++depth;
        if (i < text.size() && text[i] == ')') --depth;
        if (i == text.size() || (text[i] == ',' && depth == 0)) {
            const std::string item = text.substr(start, i - start);
            const dsl::Expr e = dsl::parse(item, dsl::SymbolContext{});
            if (!e.is_constant()) throw SpecError(what + ": '" + item + "' is not a constant");
            vals.push_back(e.eval<double>({}, {}));
            start = i + 1;
        }
    }
    Vec v(static_cast<Eigen::Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) v[static_cast<Eigen::Index>(i)] = vals[i];
    return v;
}

// Settings resolved from flags, then the scene's [experiment] block, then defaults.
struct Context {
    Common flags;
    Scene scene;
    std::uint64_t seed = 42;

    Point point() const {
        std::string text = flags.point;
        if (text.empty())
            if (const auto* p = scene.config.experiment_value("point")) text = *p;
        if (text.empty()) throw SpecError("--point is required (the scene has no experiment point)");
        const Vec x = parse_list(text, "--point");
        if (x.size() != scene.dim())
            throw SpecError("--point has " + std::to_string(x.size()) + " coordinates, the scene has dimension " + std::to_string(scene.dim()));
        if (!scene.domain.contains(x)) throw DomainError("--point lies outside the scene domain");
        return x;
    }
    double tol(double fallback) const {
        if (flags.tol) return *flags.tol;
        if (const auto* t = scene.config.experiment_value("tol")) return parse_list(*t, "[experiment] tol")[0];
        return fallback;
    }
    int resolution(int fallback) const {
        if (flags.resolution) return *flags.resolution;
        if (const auto* r = scene.config.experiment_value("resolution")) return static_cast<int>(parse_list(*r, "[experiment] resolution")[0]);
        return fallback;
    }
};

Context make_context(const Common& c, bool need_scene) {
    Context ctx;
    ctx.flags = c;
    if (need_scene) ctx.scene = resolve_scene(c.scene);
    if (c.seed)
        ctx.seed = *c.seed;
    else if (const auto* s = ctx.scene.config.experiment_value("seed"))
        ctx.seed = static_cast<std::uint64_t>(parse_list(*s, "[experiment] seed")[0]);
    return ctx;
}

nlohmann::json spec_echo(const std::string& command, const Context& ctx, nlohmann::json extra) {
    nlohmann::json j = {{"command", command}, {"seed", ctx.seed}};
    if (!ctx.flags.scene.empty()) {
        j["scene"] = ctx.flags.scene;
        j["scene_name"] = ctx.scene.config.name;
    }
    if (ctx.flags.tol) j["tol"] = *ctx.flags.tol;
    if (ctx.flags.resolution) j["resolution"] = *ctx.flags.resolution;
    if (!ctx.flags.point.empty()) j["point"] = ctx.flags.point;
    for (auto& [k, v] : extra.items()) j[k] = v;
    return j;
}

void emit(const std::string& text, const std::string& path, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw SpecError("cannot write '" + path + "'");
    f << text;
    if (!f) throw SpecError("write to '" + path + "' failed");
}

std::string render(const Report& r, const std::string& format) {
    if (format == "csv") return r.checks_csv();
    return r.to_json().dump(2) + "\n";
}

int finish(Report& r, const Context& ctx, std::chrono::steady_clock::time_point t0, std::ostream& out,
           const std::string& default_format, const std::string& csv_payload = "") {
    r.seed = ctx.seed;
    r.timing["utc"] = utc_timestamp();
    r.timing["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.timing["threads"] = thread_count();
    const std::string format = ctx.flags.format.empty() ? default_format : ctx.flags.format;
    if (format == "csv" && !csv_payload.empty()) {
        if (r.checks.empty()) throw Error("report has no checks");
        emit(csv_payload, ctx.flags.out, out);
    } else {
        emit(render(r, format), ctx.flags.out, out);
    }
    return r.pass() ? kExitPass : kExitFail;
}

std::string norm_label(const Scene& s) {
    if (!s.config.finsler.empty()) return s.config.finsler;
    if (!s.config.block_norm.empty()) return "N(" + s.config.block_norm + ") over " + std::to_string(s.config.blocks.size()) + " blocks";
    return "riemannian";
}

int cmd_bl(const Common& c, const std::string& backend, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const Context ctx = make_context(c, true);
    const Point x = ctx.point();
    BLIntegrator integ;
    integ.mode = parse_backend(backend);
    integ.resolution = ctx.resolution(0);
    integ.seed = substream(ctx.seed, "bl");
    const BLResult b = bl_metric(*ctx.scene.finsler, x, integ);
    Report r;
    r.command = "bl";
    r.spec = spec_echo("bl", ctx, {{"backend", backend}});
    r.results = b.to_json();
    r.results["norm"] = norm_label(ctx.scene);
    r.results["point"] = to_json(x);
    const double tol = ctx.tol(1e-3);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Mat>(b.g_bl).eigenvalues().minCoeff();
    r.checks.push_back(make_check("g_bl positive definite (min eigenvalue)", min_eig, ">", 0.0, {{"g_bl", to_json(b.g_bl)}}));
    r.checks.push_back(make_check("relative error estimate", b.error_estimate / max_abs(b.g_bl), "<=", tol,
                                  {{"error_estimate", b.error_estimate}}));
    return finish(r, ctx, t0, out, "json");
}

int cmd_berwald(const Common& c, int paths, bool canonical, double canonical_tol, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const Context ctx = make_context(c, true);
    PathSampleSpec spec;
    spec.paths = paths;
    spec.seed = substream(ctx.seed, "berwald");
    const double tol = ctx.tol(1e-6);
    const BerwaldReport b = berwald_check(*ctx.scene.finsler, *ctx.scene.metric, spec, tol);
    Report r;
    r.command = "berwald";
    r.spec = spec_echo("berwald", ctx, {{"paths", paths}, {"canonical", canonical}});
    r.results["berwald"] = b.to_json();
    r.results["reference_metric"] = ctx.scene.metric_declared ? "declared" : "binet-legendre";
    r.checks.push_back(make_check("berwald defect", b.max_defect, "<=", tol, b.to_json()));
    r.checks.push_back(make_check("paths sampled", b.paths, ">=", paths, b.to_json()));
    if (canonical) {
        BLIntegrator integ;
        integ.mode = BLBackend::Spherical;
        if (c.resolution) integ.resolution = *c.resolution;
        PathSampleSpec cs = spec;
        cs.seed = substream(ctx.seed, "berwald.canonical");
        const CanonicalReport k = canonical_connection_check(ctx.scene.finsler, integ, cs, canonical_tol);
        r.results["canonical"] = k.to_json();
        r.checks.push_back(make_check("canonical finsler defect", k.finsler.max_defect, "<=", canonical_tol, k.finsler.to_json()));
        r.checks.push_back(make_check("canonical metric defect", k.metric_defect, "<=", canonical_tol, k.to_json()));
    }
    return finish(r, ctx, t0, out, "json");
}

int cmd_holonomy(const Common& c, const std::string& expect, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const Context ctx = make_context(c, true);
    const Point x = ctx.point();
    LoopSpec a, b;
    a.seed = substream(ctx.seed, "holonomy.a");
    b.seed = substream(ctx.seed, "holonomy.b");
    const double tol = ctx.tol(1e-6);
    const HolonomySample sa = holonomy_generators(*ctx.scene.metric, x, a);
    const auto da = invariant_decomposition(sa, tol, a.seed);
    const auto db = invariant_decomposition(holonomy_generators(*ctx.scene.metric, x, b), tol, b.seed);
    Report r;
    r.command = "holonomy";
    r.spec = spec_echo("holonomy", ctx, {{"expect_dims", expect}});
    r.results["decomposition"] = da.to_json();
    r.results["dims_second_seed"] = db.dims();
    r.results["loops"] = sa.loops.size();
    r.checks.push_back(make_check("principal angle between seeds", decomposition_distance(da, db), "<=", tol,
                                  {{"first", da.dims()}, {"second", db.dims()}}));
    r.checks.push_back(make_check("orthogonality defect", sa.max_orthogonality_defect, "<=", tol, nullptr));
    r.checks.push_back(make_check("block defect", da.block_defect, "<=", tol, da.to_json()));
    if (!expect.empty()) {
        const Vec e = parse_list(expect, "--expect-dims");
        std::vector<int> want;
        for (double d : e) want.push_back(static_cast<int>(d));
        r.checks.push_back(make_check("dims match", da.dims() == want ? 1.0 : 0.0, ">=", 1.0, {{"dims", da.dims()}, {"expected", want}}));
    }
    return finish(r, ctx, t0, out, "json");
}

int cmd_fried(const Common& c, const std::string& to, int pairs, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const Context ctx = make_context(c, true);
    const Point x = ctx.point();
    const DInftyEstimate de = ctx.scene.boundary.estimate(x);
    if (!de.found) throw SpecError("no boundary within the shooting horizon; the Fried metric is undefined");
    const FriedScene fs(ctx.scene.metric, ctx.scene.boundary);
    const double tol = ctx.tol(1e-3);
    const int res = ctx.resolution(0);
    std::vector<Point> ys;
    if (!to.empty()) {
        const Vec y = parse_list(to, "--to");
        if (y.size() != x.size()) throw SpecError("--to has the wrong dimension");
        if (!ctx.scene.domain.contains(y)) throw DomainError("--to lies outside the scene domain");
        ys.push_back(y);
    } else {
        Rng rng(substream(ctx.seed, "fried.pairs"));
        const double radius = 0.95 * std::min(2.0, ctx.scene.domain.margin(x));
        for (int k = 0; k < pairs; ++k) ys.push_back(rng.in_ball(x, radius));
    }
    Report r;
    r.command = "fried";
    r.spec = spec_echo("fried", ctx, {{"to", to}, {"pairs", pairs}});
    r.results["d_infty"] = de.to_json();
    r.results["boundary_mode"] = to_string(ctx.scene.boundary.mode());
    nlohmann::json list = nlohmann::json::array();
    double ma = kInf, mb = kInf;
    nlohmann::json wa, wb;
    for (const Point& y : ys) {
        const FriedBoundReport f = fried_bound_check(fs, x, y, res, tol);
        list.push_back(f.to_json());
        if (f.bound_a_margin < ma) {
            ma = f.bound_a_margin;
            wa = f.to_json();
        }
        if (f.bound_b_margin && *f.bound_b_margin < mb) {
            mb = *f.bound_b_margin;
            wb = f.to_json();
        }
    }
    r.results["pairs"] = list;
    r.checks.push_back(make_check("min bound (a) margin", ma, ">=", -tol, wa));
    if (std::isfinite(mb)) r.checks.push_back(make_check("min bound (b) margin", mb, ">=", -tol, wb));
    return finish(r, ctx, t0, out, "json");
}

int cmd_split(const Common& c, int samples, int directions, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    const Context ctx = make_context(c, true);
    if (!ctx.scene.product) throw SpecError("split needs a product scene");
    std::vector<Point> pts;
    if (!c.point.empty()) {
        pts.push_back(ctx.point());
    } else {
        Rng rng(substream(ctx.seed, "split.points"));
        for (int k = 0; k < samples; ++k) pts.push_back(sample_domain(ctx.scene.domain, rng));
    }
    ShootingOptions opt = ctx.scene.boundary.options();
    opt.directions = directions;
    opt.seed = substream(ctx.seed, "split.directions");
    const double tol = ctx.tol(1e-8);
    const SplitReport s = splitting_diagnostic(*ctx.scene.product, pts, opt, tol);
    Report r;
    r.command = "split";
    r.spec = spec_echo("split", ctx, {{"samples", samples}, {"directions", directions}});
    r.results = s.to_json();
    int violated = 0;
    nlohmann::json w;
    for (const auto& p : s.points)
        if (p.verdict != "consistent") {
            ++violated;
            if (w.is_null()) w = {{"x", to_json(p.x)}, {"R1", p.r1}, {"R2", p.r2}, {"witness_angle", p.witness_angle}};
        }
    r.checks.push_back(make_check("violated points", violated, "<=", 0, w));
    return finish(r, ctx, t0, out, "csv", s.to_csv());
}

int cmd_check_scene(const Common& c, std::ostream& out) {
    const auto t0 = std::chrono::steady_clock::now();
    Context ctx;
    ctx.flags = c;
    const std::string text = read_scene_text(c.scene);
    const SceneConfig cfg = parse_scene(text);
    ctx.scene = assemble_scene(cfg);
    const std::string canonical = print_scene(cfg);
    const SceneConfig again = parse_scene(canonical);
    assemble_scene(again);
    const bool stable = print_scene(again) == canonical;
    const std::string format = c.format.empty() ? "text" : c.format;
    if (format == "text") {
        for (const auto& w : cfg.warnings) out << "# warning: " << w << "\n";
        emit(canonical, c.out, out);
        return stable ? kExitPass : kExitFail;
    }
    Report r;
    r.command = "check-scene";
    r.spec = spec_echo("check-scene", ctx, nlohmann::json::object());
    r.results = {{"normalized", canonical},
                 {"warnings", cfg.warnings},
                 {"dim", cfg.dim},
                 {"metric", ctx.scene.product ? "product" : (ctx.scene.metric_declared ? "declared" : "binet-legendre")},
                 {"finsler", norm_label(ctx.scene)},
                 {"decks", cfg.decks.size()},
                 {"boundary", to_string(ctx.scene.boundary.mode())}};
    r.checks.push_back(make_check("normalized form is stable", stable ? 1.0 : 0.0, ">=", 1.0, {{"normalized", canonical}}));
    return finish(r, ctx, t0, out, "json");
}

int cmd_suite(const Common& c, const std::vector<int>& criteria, std::ostream& out, std::ostream& err) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!c.scene.empty()) throw SpecError("suite runs fixed scenes; --scene is not accepted");
    const Context ctx = make_context(c, false);
    std::vector<int> ids = criteria;
    if (ids.empty())
        for (const auto& k : acceptance_criteria()) ids.push_back(k.id);
    Report r;
    r.command = "suite";
    r.spec = spec_echo("suite", ctx, {{"criteria", ids}});
    nlohmann::json times = nlohmann::json::object();
    for (int id : ids) {
        const CriterionResult cr = run_criterion(id, ctx.seed);
        err << summary_line(cr) << "\n";
        err.flush();
        r.checks.push_back(cr.check);
        times[cr.criterion.name] = {{"seconds", cr.seconds}, {"budget_seconds", cr.criterion.budget_seconds}};
    }
    r.results = {{"criteria", ids.size()}};
    r.timing["criteria"] = times;
    return finish(r, ctx, t0, out, "json");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Finsler and Riemannian geometry experiments", "finslerlab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);

    Common c_bl, c_berwald, c_hol, c_fried, c_split, c_check, c_suite;
    std::string backend = "lattice";
    int paths = 50, pairs = 20, samples = 10, directions = 128;
    bool canonical = false;
    double canonical_tol = 1e-5;
    std::string expect, to;
    std::vector<int> criteria;

    auto* bl = app.add_subcommand("bl", "the Binet-Legendre metric of the scene's Finsler field at a point");
    add_common(bl, c_bl, true);
    bl->add_option("--backend", backend, "lattice, monte-carlo or spherical")->check(CLI::IsMember({"lattice", "monte-carlo", "spherical"}));

    auto* bw = app.add_subcommand("berwald", "transport check of F along sampled paths in the scene metric");
    add_common(bw, c_berwald, true);
    bw->add_option("--paths", paths, "number of sampled paths")->check(CLI::PositiveNumber);
    bw->add_flag("--canonical", canonical, "also check the Binet-Legendre connection");
    bw->add_option("--canonical-tol", canonical_tol, "tolerance of the canonical check");

    auto* hol = app.add_subcommand("holonomy", "holonomy generators and invariant decomposition at a point");
    add_common(hol, c_hol, true);
    hol->add_option("--expect-dims", expect, "expected subspace dimensions, V0 first");

    auto* fr = app.add_subcommand("fried", "d_infty and the Fried distance bounds");
    add_common(fr, c_fried, true);
    fr->add_option("--to", to, "second point (default: random pairs)");
    fr->add_option("--pairs", pairs, "number of random pairs")->check(CLI::PositiveNumber);

    auto* sp = app.add_subcommand("split", "leaf curvatures and escape witnesses on a product scene");
    add_common(sp, c_split, true);
    sp->add_option("--samples", samples, "number of sampled points")->check(CLI::PositiveNumber);
    sp->add_option("--directions", directions, "shooting directions")->check(CLI::PositiveNumber);

    auto* cs = app.add_subcommand("check-scene", "validate a scene and print its normalized form");
    add_common(cs, c_check, true);

    auto* su = app.add_subcommand("suite", "run the acceptance battery");
    add_common(su, c_suite, false);
    su->add_option("--criteria", criteria, "criterion ids (default all)")->delimiter(',');

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitPass : kExitSpec;
    }

    try {
        if (*bl) return cmd_bl(c_bl, backend, out);
        if (*bw) return cmd_berwald(c_berwald, paths, canonical, canonical_tol, out);
        if (*hol) return cmd_holonomy(c_hol, expect, out);
        if (*fr) return cmd_fried(c_fried, to, pairs, out);
        if (*sp) return cmd_split(c_split, samples, directions, out);
        if (*cs) return cmd_check_scene(c_check, out);
        if (*su) return cmd_suite(c_suite, criteria, out, err);
    } catch (const SpecError& e) {
        err << "error: " << e.what() << "\n";
        return kExitSpec;
    } catch (const DomainError& e) {
        err << "error: " << e.what() << "\n";
        return kExitSpec;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "internal failure: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitSpec;
}

}  // namespace finslerlab
