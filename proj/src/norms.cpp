#include "finslerlab/norms.hpp"

#include "finslerlab/error.hpp"
#include "finslerlab/random.hpp"

#include <algorithm>
#include <cmath>

namespace finslerlab {

// ---------------------------------------------------------------------------
// Minkowski norms
// ---------------------------------------------------------------------------

DslNorm::DslNorm(dsl::Expr e, bool reversible) : MinkowskiNorm(e.v_dim(), reversible), e_(std::move(e)) {
    if (e_.depends_on_x()) throw SpecError("a Minkowski norm cannot depend on x");
}

QuadraticNorm::QuadraticNorm(Mat a) : MinkowskiNorm(static_cast<int>(a.rows()), true), a_(symmetrize(a)) {
    if (!is_positive_definite(a_)) throw SpecError("quadratic norm needs a positive definite matrix");
}

double QuadraticNorm::eval(std::span<const double> v) const {
    const int n = dim();
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        double t = 0.0;
        for (int j = 0; j < n; ++j) t += a_(i, j) * v[static_cast<std::size_t>(j)];
        s += v[static_cast<std::size_t>(i)] * t;
    }
    return std::sqrt(std::max(s, 0.0));
}

LinearPullbackNorm::LinearPullbackNorm(NormPtr base, Mat l, double c)
    : MinkowskiNorm(static_cast<int>(l.cols()), base->declared_reversible()), base_(std::move(base)), l_(std::move(l)), c_(c) {
    if (l_.rows() != base_->dim()) throw SpecError("pullback matrix does not match the norm dimension");
}

double LinearPullbackNorm::eval(std::span<const double> v) const {
    const Eigen::Map<const Vec> vv(v.data(), static_cast<Eigen::Index>(v.size()));
    const Vec w = l_ * vv;
    return c_ * base_->eval({w.data(), static_cast<std::size_t>(w.size())});
}

NormPtr make_dsl_norm(int dim, const std::string& text, bool reversible, bool letter_aliases) {
    dsl::SymbolContext ctx;
    ctx.v_dim = dim;
    ctx.letter_aliases = letter_aliases;
    return std::make_shared<DslNorm>(dsl::parse(text, ctx), reversible);
}

NormPtr euclidean_norm(int dim) { return std::make_shared<QuadraticNorm>(Mat::Identity(dim, dim)); }

const AxiomReport& NormValidation::axiom(const std::string& name) const {
    for (const auto& a : axioms)
        if (a.axiom == name) return a;
    throw Error("no axiom named " + name);
}

nlohmann::json NormValidation::to_json() const {
    nlohmann::json out;
    out["axioms"] = nlohmann::json::array();
    for (const auto& a : axioms)
        out["axioms"].push_back(
            {{"axiom", a.axiom}, {"max_violation", a.max_violation}, {"argmax_sample", a.argmax_sample}, {"pass", a.pass}});
    out["reversible"] = reversible;
    out["pass"] = pass;
    out["tolerance"] = tolerance;
    out["samples"] = samples;
    return out;
}

NormValidation validate_minkowski(const MinkowskiNorm& n, int samples, std::uint64_t seed, double tol) {
    if (samples < 1) throw SpecError("validate_minkowski needs at least one sample");
    const int m = n.dim();
    Rng rng(substream(seed, "validate_minkowski"));
    AxiomReport hom{"homogeneity"}, sub{"subadditivity"}, def{"definiteness"}, rev{"reversibility"};
    auto record = [](AxiomReport& r, double viol, const Vec& v, const Vec& u, double lam) {
        if (std::isnan(viol)) viol = kInf;
        if (viol > r.max_violation || r.argmax_sample.empty()) {
            if (viol > r.max_violation) r.max_violation = viol;
            r.argmax_sample.assign(v.data(), v.data() + v.size());
            r.argmax_sample.insert(r.argmax_sample.end(), u.data(), u.data() + u.size());
            r.argmax_sample.push_back(lam);
        }
    };
    const Vec zero = Vec::Zero(m);
    const double f0 = n(zero);
    record(def, std::fabs(f0), zero, zero, 0.0);
    for (int t = 0; t < samples; ++t) {
        Vec v = rng.normal_vector(m) * std::exp(rng.uniform(std::log(1e-2), std::log(1e2)));
        if (t % 4 == 1 && m > 1) {
            // degenerate directions: zero all but one coordinate
            const int keep = static_cast<int>(rng.next() % static_cast<std::uint64_t>(m));
            for (int i = 0; i < m; ++i)
                if (i != keep) v[i] = 0.0;
        }
        const Vec u = rng.normal_vector(m) * std::exp(rng.uniform(std::log(1e-2), std::log(1e2)));
        const double lam = t % 10 == 0 ? 0.0 : rng.uniform(0.0, 10.0);
        const double fv = n(v), fu = n(u);
        record(hom, std::fabs(n(Vec(lam * v)) - lam * fv) / std::max(1.0, lam * fv), v, u, lam);
        record(sub, std::max(0.0, n(Vec(v + u)) - fv - fu) / std::max(1.0, fv + fu), v, u, lam);
        record(def, fv > 0.0 ? 0.0 : 1.0 + std::fabs(fv), v, u, lam);
        record(rev, std::fabs(n(Vec(-v)) - fv) / std::max(1.0, fv), v, u, lam);
    }
    NormValidation out;
    out.tolerance = tol;
    out.samples = samples;
    for (AxiomReport* r : {&hom, &sub, &def, &rev}) {
        r->pass = r->max_violation <= tol;
        out.axioms.push_back(*r);
    }
    out.reversible = rev.pass;
    out.pass = hom.pass && sub.pass && def.pass && (!n.declared_reversible() || out.reversible);
    return out;
}

// ---------------------------------------------------------------------------
// Finsler fields
// ---------------------------------------------------------------------------

namespace {

class BoundDslNorm : public MinkowskiNorm {
public:
    BoundDslNorm(const dsl::Expr& e, const Point& x, bool reversible)
        : MinkowskiNorm(e.v_dim(), reversible), e_(e), x_(x.data(), x.data() + x.size()) {}
    double eval(std::span<const double> v) const override { return e_.eval<double>(x_, v); }

private:
    dsl::Expr e_;
    std::vector<double> x_;
};

class ScaledNorm : public MinkowskiNorm {
public:
    ScaledNorm(NormPtr base, double c) : MinkowskiNorm(base->dim(), base->declared_reversible()), base_(std::move(base)), c_(c) {}
    double eval(std::span<const double> v) const override { return c_ * base_->eval(v); }

private:
    NormPtr base_;
    double c_;
};

class ProductFiber : public MinkowskiNorm {
public:
    ProductFiber(std::vector<Mat> gs, std::vector<int> offsets, NormPtr n)
        : MinkowskiNorm(offsets.back() + static_cast<int>(gs.back().rows()), n->declared_reversible()),
          gs_(std::move(gs)), offsets_(std::move(offsets)), n_(std::move(n)) {}

    double eval(std::span<const double> v) const override {
        double a[16];
        std::vector<double> big;
        double* out = a;
        if (gs_.size() > 16) {
            big.resize(gs_.size());
            out = big.data();
        }
        for (std::size_t b = 0; b < gs_.size(); ++b) {
            const Mat& g = gs_[b];
            const int o = offsets_[b], m = static_cast<int>(g.rows());
            double s = 0.0;
            for (int i = 0; i < m; ++i) {
                double t = 0.0;
                for (int j = 0; j < m; ++j) t += g(i, j) * v[static_cast<std::size_t>(o + j)];
                s += v[static_cast<std::size_t>(o + i)] * t;
            }
            out[b] = std::sqrt(std::max(s, 0.0));
        }
        return n_->eval({out, gs_.size()});
    }

private:
    std::vector<Mat> gs_;
    std::vector<int> offsets_;
    NormPtr n_;
};

}  // namespace

ConstantFinsler::ConstantFinsler(NormPtr norm, Domain domain) : FinslerField(std::move(domain)), norm_(std::move(norm)) {
    if (norm_->dim() != dim()) throw SpecError("norm dimension does not match the domain");
}

DslFinsler::DslFinsler(dsl::Expr e, Domain domain, bool reversible)
    : FinslerField(std::move(domain)), e_(std::move(e)), reversible_(reversible) {
    if (e_.v_dim() != dim() || e_.x_dim() != dim()) throw SpecError("Finsler expression dimension does not match the domain");
}

NormPtr DslFinsler::fiber(const Point& x) const { return std::make_shared<BoundDslNorm>(e_, x, reversible_); }

double DslFinsler::eval(const Point& x, const Vec& v) const {
    return e_.eval<double>({x.data(), static_cast<std::size_t>(x.size())}, {v.data(), static_cast<std::size_t>(v.size())});
}

RiemannFinsler::RiemannFinsler(MetricPtr g) : FinslerField(g->domain()), g_(std::move(g)) {}

NormPtr RiemannFinsler::fiber(const Point& x) const { return std::make_shared<QuadraticNorm>((*g_)(x)); }

ProductFinsler::ProductFinsler(std::shared_ptr<const ProductStructure> ps, NormPtr n)
    : FinslerField(ps->metric()->domain()), ps_(std::move(ps)), n_(std::move(n)) {
    if (n_->dim() != ps_->blocks()) throw SpecError("block norm dimension must equal the number of blocks");
}

NormPtr ProductFinsler::fiber(const Point& x) const {
    std::vector<Mat> gs;
    std::vector<int> offs;
    for (int b = 0; b < ps_->blocks(); ++b) {
        gs.push_back(ps_->factor(b)->eval(ps_->project(x, b)));
        offs.push_back(ps_->offset(b));
    }
    return std::make_shared<ProductFiber>(std::move(gs), std::move(offs), n_);
}

ConformalFinsler::ConformalFinsler(FinslerPtr base, ScalarPtr lam)
    : FinslerField(base->domain()), base_(std::move(base)), lam_(std::move(lam)) {
    if (lam_->dim() != dim()) throw SpecError("conformal factor dimension does not match the field");
}

NormPtr ConformalFinsler::fiber(const Point& x) const {
    const double l = lam_->eval(x);
    if (!(l > 0.0)) throw DomainError("conformal factor is not positive");
    return std::make_shared<ScaledNorm>(base_->fiber(x), l);
}

double ConformalFinsler::eval(const Point& x, const Vec& v) const {
    const double l = lam_->eval(x);
    if (!(l > 0.0)) throw DomainError("conformal factor is not positive");
    return l * base_->eval(x, v);
}

FinslerPtr scale_finsler(FinslerPtr f, double c) {
    if (!(c > 0.0)) throw SpecError("scale must be positive");
    const int n = f->dim();
    return std::make_shared<ConformalFinsler>(std::move(f),
                                              std::make_shared<CallbackScalar>(n, [c](const Point&) { return c; }));
}

namespace {

bool block_is_flat(const MetricField& g) {
    if (g.dim() <= 1 || g.is_constant()) return true;
    Rng rng(substream(0, "flatness-probe"));
    for (int t = 0; t < 3; ++t)
        if (curvature_norm_sq(g, sample_domain(g.domain(), rng)) > 1e-12) return false;
    return true;
}

}  // namespace

FinslerPtr product_finsler(std::shared_ptr<const ProductStructure> ps, NormPtr n) {
    if (n->dim() != ps->blocks())
        throw SpecError("block norm has dimension " + std::to_string(n->dim()) + " but the product has " +
                        std::to_string(ps->blocks()) + " blocks");
    if (!n->declared_reversible()) {
        Rng rng(substream(0, "block-reversibility"));
        for (int b = 0; b < ps->blocks(); ++b) {
            if (block_is_flat(*ps->factor(b))) continue;
            for (int t = 0; t < 200; ++t) {
                Vec a = rng.normal_vector(n->dim()).cwiseAbs();
                const double fa = (*n)(a);
                a[b] = -a[b];
                if (std::fabs((*n)(a) - fa) > 1e-9 * std::max(1.0, fa))
                    throw SpecError("block norm must be reversible in the coordinate of non-flat block " +
                                    std::to_string(b + 1));
            }
        }
    }
    return std::make_shared<ProductFinsler>(std::move(ps), std::move(n));
}

FinslerPtr conformal_scale(FinslerPtr f, ScalarPtr lam) {
    return std::make_shared<ConformalFinsler>(std::move(f), std::move(lam));
}

// ---------------------------------------------------------------------------
// Deck maps
// ---------------------------------------------------------------------------

DeckMap DeckMap::scale(int n, double q) {
    DeckMap d;
    d.description = "scale " + std::to_string(q);
    d.map = [q](const Point& x) { return Point(q * x); };
    d.differential = [q, n](const Point&) { return Mat(q * Mat::Identity(n, n)); };
    d.coefficient = q;
    return d;
}

DeckMap DeckMap::affine(Mat a, Vec b, double coefficient) {
    DeckMap d;
    d.description = "affine";
    d.map = [a, b](const Point& x) { return Point(a * x + b); };
    d.differential = [a](const Point&) { return a; };
    d.coefficient = coefficient;
    return d;
}

DeckMap DeckMap::identity(int n) {
    DeckMap d = affine(Mat::Identity(n, n), Vec::Zero(n), 1.0);
    d.description = "identity";
    return d;
}

nlohmann::json DeckCheck::to_json() const {
    return {{"fitted", fitted}, {"residual", residual}, {"samples", samples}, {"worst_x", finslerlab::to_json(worst_x)},
            {"worst_v", finslerlab::to_json(worst_v)}};
}

namespace {

template <class Body>
int sample_deck_pairs(const Domain& dom, const DeckMap& d, int samples, std::uint64_t seed, Body body) {
    Rng rng(seed);
    int used = 0;
    for (int attempt = 0; used < samples && attempt < 20 * samples; ++attempt) {
        const Point x = sample_domain(dom, rng);
        const Point y = d.map(x);
        if (!dom.contains(y)) continue;
        body(x, y, rng);
        ++used;
    }
    if (used == 0) throw DomainError("every deck sample left the domain");
    return used;
}

}  // namespace

DeckCheck deck_isometry_check(const FinslerField& f, const DeckMap& d, int samples, std::uint64_t seed) {
    std::vector<double> a, b;
    std::vector<Point> xs;
    std::vector<Vec> vs;
    const int used = sample_deck_pairs(f.domain(), d, samples, substream(seed, "deck_isometry_check"),
                                       [&](const Point& x, const Point& y, Rng& rng) {
                                           const Vec v = rng.normal_vector(f.dim());
                                           a.push_back(f(y, d.differential(x) * v));
                                           b.push_back(f(x, v));
                                           xs.push_back(x);
                                           vs.push_back(v);
                                       });
    double ab = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        bb += b[i] * b[i];
    }
    DeckCheck out;
    out.samples = used;
    out.fitted = ab / bb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double r = std::fabs(a[i] - out.fitted * b[i]);
        if (r > out.residual || i == 0) {
            out.residual = std::max(out.residual, r);
            out.worst_x = xs[i];
            out.worst_v = vs[i];
        }
    }
    return out;
}

DeckCheck metric_homothety_check(const MetricField& g, const DeckMap& d, int samples, std::uint64_t seed) {
    std::vector<Mat> ps, gs;
    std::vector<Point> xs;
    const int used = sample_deck_pairs(g.domain(), d, samples, substream(seed, "metric_homothety_check"),
                                       [&](const Point& x, const Point& y, Rng&) {
                                           const Mat dm = d.differential(x);
                                           ps.push_back(dm.transpose() * g(y) * dm);
                                           gs.push_back(g(x));
                                           xs.push_back(x);
                                       });
    double pg = 0.0, gg = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        pg += ps[i].cwiseProduct(gs[i]).sum();
        gg += gs[i].cwiseProduct(gs[i]).sum();
    }
    const double k2 = pg / gg;
    DeckCheck out;
    out.samples = used;
    out.fitted = std::sqrt(k2);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const double r = max_abs(ps[i] - k2 * gs[i]);
        if (r > out.residual || i == 0) {
            out.residual = std::max(out.residual, r);
            out.worst_x = xs[i];
        }
    }
    out.worst_v = Vec();
    return out;
}

Domain punctured_space(int n, double eps) {
    Domain d(n);
    Exclusion e;
    e.center = Vec::Zero(n);
    e.radius = eps;
    d.exclusions.push_back(e);
    return d;
}

HopfScene hopf_scene(NormPtr f0, double q) {
    if (!(q > 0.0) || q == 1.0) throw SpecError("Hopf ratio q must be positive and different from 1");
    const int n = f0->dim();
    const Domain dom = punctured_space(n);
    HopfScene s;
    s.q = q;
    s.field = conformal_scale(std::make_shared<ConstantFinsler>(f0, dom), make_dsl_scalar(n, "1/norm(x)"));
    s.deck = DeckMap::scale(n, q);
    s.flat = std::make_shared<ConstantMetric>(Mat::Identity(n, n), dom);
    return s;
}

Point sample_domain(const Domain& d, Rng& rng, double spread) {
    const int n = d.dim();
    for (int attempt = 0; attempt < 10000; ++attempt) {
        Point x(n);
        for (int i = 0; i < n; ++i) {
            const bool flo = std::isfinite(d.lo[i]), fhi = std::isfinite(d.hi[i]);
            if (flo && fhi)
                x[i] = d.lo[i] + (d.hi[i] - d.lo[i]) * rng.uniform(0.05, 0.95);
            else if (flo)
                x[i] = d.lo[i] + spread * (0.05 + std::fabs(rng.normal()));
            else if (fhi)
                x[i] = d.hi[i] - spread * (0.05 + std::fabs(rng.normal()));
            else
                x[i] = spread * rng.normal();
        }
        if (d.contains(x)) return x;
    }
    throw DomainError("could not sample a point of the domain");
}

}  // namespace finslerlab
