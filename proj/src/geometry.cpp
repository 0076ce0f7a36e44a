#include "finslerlab/geometry.hpp"

#include "finslerlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace finslerlab {

using dsl::D1;
using dsl::D2;

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

double Exclusion::distance(const Point& x) const {
    if (axes.empty()) return (x - center).norm() - radius;
    double s = 0.0;
    for (int a : axes) s += (x[a] - center[a]) * (x[a] - center[a]);
    return std::sqrt(s) - radius;
}

Point Exclusion::nearest(const Point& x) const {
    Point p = x;
    auto project = [&](const std::vector<int>& ax) {
        double s = 0.0;
        for (int a : ax) s += (x[a] - center[a]) * (x[a] - center[a]);
        const double d = std::sqrt(s);
        if (d <= radius) return;
        for (int a : ax) p[a] = center[a] + (x[a] - center[a]) * radius / d;
    };
    if (axes.empty()) {
        std::vector<int> all(static_cast<std::size_t>(x.size()));
        for (int i = 0; i < x.size(); ++i) all[static_cast<std::size_t>(i)] = i;
        project(all);
    } else {
        project(axes);
    }
    return p;
}

double Exclusion::segment_distance(const Point& a, const Point& b) const {
    Vec pa = a - center, d = b - a;
    if (!axes.empty()) {
        Vec qa(static_cast<Eigen::Index>(axes.size())), qd(static_cast<Eigen::Index>(axes.size()));
        for (std::size_t k = 0; k < axes.size(); ++k) {
            qa[static_cast<Eigen::Index>(k)] = pa[axes[k]];
            qd[static_cast<Eigen::Index>(k)] = d[axes[k]];
        }
        pa = qa;
        d = qd;
    }
    const double dd = d.squaredNorm();
    const double t = dd > 0.0 ? std::clamp(-pa.dot(d) / dd, 0.0, 1.0) : 0.0;
    return (pa + t * d).norm() - radius;
}

Domain::Domain(int dim) : lo(Vec::Constant(dim, -kInf)), hi(Vec::Constant(dim, kInf)) {}

bool Domain::contains(const Point& x) const {
    if (x.size() != lo.size() || !x.allFinite()) return false;
    for (int i = 0; i < x.size(); ++i)
        if (!(x[i] > lo[i] && x[i] < hi[i])) return false;
    for (const auto& e : exclusions)
        if (e.distance(x) <= 0.0) return false;
    return true;
}

bool Domain::segment_inside(const Point& a, const Point& b) const {
    if (!contains(a) || !contains(b)) return false;
    for (const auto& e : exclusions)
        if (e.segment_distance(a, b) <= 0.0) return false;
    return true;
}

double Domain::margin(const Point& x) const {
    double m = boundary_margin(x);
    for (int i = 0; i < x.size(); ++i) m = std::min({m, x[i] - lo[i], hi[i] - x[i]});
    return m;
}

double Domain::boundary_margin(const Point& x) const {
    double m = kInf;
    for (const auto& e : exclusions) m = std::min(m, e.distance(x));
    return m;
}

int Domain::nearest_exclusion(const Point& x) const {
    int best = -1;
    double m = kInf;
    for (std::size_t k = 0; k < exclusions.size(); ++k) {
        const double d = exclusions[k].distance(x);
        if (d < m) {
            m = d;
            best = static_cast<int>(k);
        }
    }
    return best;
}

Domain Domain::product(const std::vector<Domain>& factors) {
    int n = 0;
    for (const auto& f : factors) n += f.dim();
    Domain d(n);
    int off = 0;
    for (const auto& f : factors) {
        d.lo.segment(off, f.dim()) = f.lo;
        d.hi.segment(off, f.dim()) = f.hi;
        for (const auto& e : f.exclusions) {
            Exclusion pe;
            pe.radius = e.radius;
            pe.center = Vec::Zero(n);
            pe.center.segment(off, f.dim()) = e.center;
            if (e.axes.empty()) {
                for (int i = 0; i < f.dim(); ++i) pe.axes.push_back(off + i);
            } else {
                for (int a : e.axes) pe.axes.push_back(off + a);
            }
            d.exclusions.push_back(pe);
        }
        off += f.dim();
    }
    return d;
}

// ---------------------------------------------------------------------------
// Metric fields
// ---------------------------------------------------------------------------

namespace {

std::string describe(const Point& x) {
    std::ostringstream os;
    os << "(";
    for (int i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
    os << ")";
    return os.str();
}

MetricJet empty_jet(int n, int order) {
    MetricJet j;
    j.g = Mat::Zero(n, n);
    if (order >= 1) j.d1.assign(static_cast<std::size_t>(n), Mat::Zero(n, n));
    if (order >= 2) j.d2.assign(static_cast<std::size_t>(n), std::vector<Mat>(static_cast<std::size_t>(n), Mat::Zero(n, n)));
    return j;
}

}  // namespace

void MetricField::require_inside(const Point& x) const {
    if (!domain_.contains(x)) throw DomainError("point " + describe(x) + " is outside the domain");
}

Mat MetricField::operator()(const Point& x) const {
    require_inside(x);
    Mat g = eval(x);
    if (!is_positive_definite(g)) throw DomainError("metric is not positive definite at " + describe(x));
    return g;
}

MetricJet MetricField::jet(const Point& x, int order) const {
    const int n = dim();
    MetricJet j = empty_jet(n, order);
    j.g = eval(x);
    if (order >= 1) {
        const double h = 1e-5;
        for (int k = 0; k < n; ++k) {
            Point xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            j.d1[static_cast<std::size_t>(k)] = (eval(xp) - eval(xm)) / (2 * h);
        }
    }
    if (order >= 2) {
        const double h = 1e-4;
        for (int k = 0; k < n; ++k) {
            for (int l = k; l < n; ++l) {
                Mat d;
                if (k == l) {
                    Point xp = x, xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    d = (eval(xp) - 2 * j.g + eval(xm)) / (h * h);
                } else {
                    auto at = [&](double sk, double sl) {
                        Point y = x;
                        y[k] += sk * h;
                        y[l] += sl * h;
                        return eval(y);
                    };
                    d = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h);
                }
                j.d2[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)] = d;
                j.d2[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)] = d;
            }
        }
    }
    return j;
}

ConstantMetric::ConstantMetric(Mat g, Domain domain) : MetricField(std::move(domain)), g_(symmetrize(g)) {
    if (g_.rows() != dim()) throw SpecError("constant metric size does not match the domain dimension");
}

Mat ConstantMetric::eval(const Point&) const { return g_; }

MetricJet ConstantMetric::jet(const Point&, int order) const {
    MetricJet j = empty_jet(dim(), order);
    j.g = g_;
    return j;
}

DslMetric::DslMetric(std::vector<dsl::Expr> entries, Domain domain)
    : MetricField(std::move(domain)), entries_(std::move(entries)) {
    const int n = dim();
    if (static_cast<int>(entries_.size()) != n * n) throw SpecError("metric needs n*n entries");
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (!dsl::structurally_equal(entry(i, j).ast(), entry(j, i).ast()))
                throw SpecError("metric entries g" + std::to_string(i + 1) + std::to_string(j + 1) + " and g" +
                                std::to_string(j + 1) + std::to_string(i + 1) + " differ");
}

bool DslMetric::is_constant() const {
    return std::all_of(entries_.begin(), entries_.end(), [](const dsl::Expr& e) { return e.is_constant(); });
}

Mat DslMetric::eval(const Point& x) const {
    const int n = dim();
    Mat g(n, n);
    const std::span<const double> xs(x.data(), static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) g(i, j) = g(j, i) = entry(i, j).eval<double>(xs, {});
    return g;
}

MetricJet DslMetric::jet(const Point& x, int order) const {
    const int n = dim();
    MetricJet jt = empty_jet(n, order);
    dsl::EvalFlags flags;
    if (order <= 0) {
        jt.g = eval(x);
        return jt;
    }
    if (order == 1) {
        std::vector<D1> xd(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            for (int i = 0; i < n; ++i) xd[static_cast<std::size_t>(i)] = D1(x[i], i == k ? 1.0 : 0.0);
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j) {
                    const D1 r = entry(i, j).eval<D1>(xd, {}, &flags);
                    jt.g(i, j) = jt.g(j, i) = r.v;
                    jt.d1[static_cast<std::size_t>(k)](i, j) = jt.d1[static_cast<std::size_t>(k)](j, i) = r.d;
                }
        }
        jt.nonsmooth = flags.nonsmooth;
        return jt;
    }
    std::vector<D2> xd(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        for (int l = k; l < n; ++l) {
            for (int i = 0; i < n; ++i)
                xd[static_cast<std::size_t>(i)] = D2(D1(x[i], i == k ? 1.0 : 0.0), D1(i == l ? 1.0 : 0.0, 0.0));
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j) {
                    const D2 r = entry(i, j).eval<D2>(xd, {}, &flags);
                    jt.g(i, j) = jt.g(j, i) = r.v.v;
                    auto& dk = jt.d1[static_cast<std::size_t>(k)];
                    dk(i, j) = dk(j, i) = r.v.d;
                    auto& dl = jt.d1[static_cast<std::size_t>(l)];
                    dl(i, j) = dl(j, i) = r.d.v;
                    auto& a = jt.d2[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
                    auto& b = jt.d2[static_cast<std::size_t>(l)][static_cast<std::size_t>(k)];
                    a(i, j) = a(j, i) = b(i, j) = b(j, i) = r.d.d;
                }
        }
    }
    jt.nonsmooth = flags.nonsmooth;
    return jt;
}

std::shared_ptr<const DslMetric> make_dsl_metric(int n, const std::vector<std::string>& entries, Domain domain) {
    if (domain.dim() == 0) domain = Domain(n);
    dsl::SymbolContext ctx;
    ctx.x_dim = n;
    std::vector<dsl::Expr> es;
    for (const auto& e : entries) es.push_back(dsl::parse(e, ctx));
    return std::make_shared<const DslMetric>(std::move(es), std::move(domain));
}

ScalarPtr make_dsl_scalar(int n, const std::string& text) {
    dsl::SymbolContext ctx;
    ctx.x_dim = n;
    return std::make_shared<const DslScalar>(dsl::parse(text, ctx));
}

CallbackMetric::CallbackMetric(std::function<Mat(const Point&)> fn, Domain domain)
    : MetricField(std::move(domain)), fn_(std::move(fn)) {}

ScalarJet ScalarField::jet(const Point& x, int order) const {
    const int n = dim();
    ScalarJet s;
    s.value = eval(x);
    s.grad = Vec::Zero(n);
    s.hess = Mat::Zero(n, n);
    if (order >= 1) {
        const double h = 1e-5;
        for (int k = 0; k < n; ++k) {
            Point xp = x, xm = x;
            xp[k] += h;
            xm[k] -= h;
            s.grad[k] = (eval(xp) - eval(xm)) / (2 * h);
        }
    }
    if (order >= 2) {
        const double h = 1e-4;
        for (int k = 0; k < n; ++k)
            for (int l = k; l < n; ++l) {
                auto at = [&](double sk, double sl) {
                    Point y = x;
                    y[k] += sk * h;
                    y[l] += sl * h;
                    return eval(y);
                };
                const double d = k == l ? (at(1, 0) - 2 * s.value + at(-1, 0)) / (h * h)
                                        : (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h);
                s.hess(k, l) = s.hess(l, k) = d;
            }
    }
    return s;
}

double DslScalar::eval(const Point& x) const {
    return e_.eval<double>(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), {});
}

ScalarJet DslScalar::jet(const Point& x, int order) const {
    const int n = dim();
    ScalarJet s;
    s.grad = Vec::Zero(n);
    s.hess = Mat::Zero(n, n);
    dsl::EvalFlags flags;
    if (order <= 0) {
        s.value = eval(x);
        return s;
    }
    if (order == 1) {
        std::vector<D1> xd(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
            for (int i = 0; i < n; ++i) xd[static_cast<std::size_t>(i)] = D1(x[i], i == k ? 1.0 : 0.0);
            const D1 r = e_.eval<D1>(xd, {}, &flags);
            s.value = r.v;
            s.grad[k] = r.d;
        }
        if (n == 0) s.value = eval(x);
        s.nonsmooth = flags.nonsmooth;
        return s;
    }
    std::vector<D2> xd(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k)
        for (int l = k; l < n; ++l) {
            for (int i = 0; i < n; ++i)
                xd[static_cast<std::size_t>(i)] = D2(D1(x[i], i == k ? 1.0 : 0.0), D1(i == l ? 1.0 : 0.0, 0.0));
            const D2 r = e_.eval<D2>(xd, {}, &flags);
            s.value = r.v.v;
            s.grad[k] = r.v.d;
            s.grad[l] = r.d.v;
            s.hess(k, l) = s.hess(l, k) = r.d.d;
        }
    if (n == 0) s.value = eval(x);
    s.nonsmooth = flags.nonsmooth;
    return s;
}

ConformalMetric::ConformalMetric(MetricPtr base, ScalarPtr phi)
    : MetricField(base->domain()), base_(std::move(base)), phi_(std::move(phi)) {
    if (phi_->dim() != dim()) throw SpecError("conformal factor dimension does not match the metric");
}

Mat ConformalMetric::eval(const Point& x) const { return std::exp(2 * phi_->eval(x)) * base_->eval(x); }

MetricJet ConformalMetric::jet(const Point& x, int order) const {
    const int n = dim();
    const MetricJet b = base_->jet(x, order);
    const ScalarJet p = phi_->jet(x, order);
    const double s = std::exp(2 * p.value);
    MetricJet j = empty_jet(n, order);
    j.nonsmooth = b.nonsmooth || p.nonsmooth;
    j.g = s * b.g;
    if (order >= 1)
        for (int k = 0; k < n; ++k)
            j.d1[static_cast<std::size_t>(k)] = 2 * p.grad[k] * s * b.g + s * b.d1[static_cast<std::size_t>(k)];
    if (order >= 2)
        for (int k = 0; k < n; ++k)
            for (int l = 0; l < n; ++l) {
                const double skl = (4 * p.grad[k] * p.grad[l] + 2 * p.hess(k, l)) * s;
                j.d2[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)] =
                    skl * b.g + 2 * p.grad[k] * s * b.d1[static_cast<std::size_t>(l)] +
                    2 * p.grad[l] * s * b.d1[static_cast<std::size_t>(k)] +
                    s * b.d2[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
            }
    return j;
}

ScaledMetric::ScaledMetric(MetricPtr base, double c) : MetricField(base->domain()), base_(std::move(base)), c_(c) {
    if (!(c_ > 0.0)) throw SpecError("metric scale must be positive");
}

MetricJet ScaledMetric::jet(const Point& x, int order) const {
    MetricJet j = base_->jet(x, order);
    j.g *= c_;
    for (auto& m : j.d1) m *= c_;
    for (auto& row : j.d2)
        for (auto& m : row) m *= c_;
    return j;
}

namespace {

Domain product_domain(const std::vector<MetricPtr>& factors) {
    std::vector<Domain> ds;
    for (const auto& f : factors) ds.push_back(f->domain());
    return Domain::product(ds);
}

}  // namespace

ProductMetric::ProductMetric(std::vector<MetricPtr> factors)
    : MetricField(product_domain(factors)), factors_(std::move(factors)) {
    int off = 0;
    for (const auto& f : factors_) {
        offsets_.push_back(off);
        off += f->dim();
    }
}

bool ProductMetric::is_constant() const {
    return std::all_of(factors_.begin(), factors_.end(), [](const MetricPtr& f) { return f->is_constant(); });
}

Mat ProductMetric::eval(const Point& x) const {
    const int n = dim();
    Mat g = Mat::Zero(n, n);
    for (std::size_t b = 0; b < factors_.size(); ++b) {
        const int o = offsets_[b], m = factors_[b]->dim();
        g.block(o, o, m, m) = factors_[b]->eval(x.segment(o, m));
    }
    return g;
}

MetricJet ProductMetric::jet(const Point& x, int order) const {
    MetricJet j = empty_jet(dim(), order);
    for (std::size_t b = 0; b < factors_.size(); ++b) {
        const int o = offsets_[b], m = factors_[b]->dim();
        const MetricJet f = factors_[b]->jet(x.segment(o, m), order);
        j.nonsmooth = j.nonsmooth || f.nonsmooth;
        j.g.block(o, o, m, m) = f.g;
        if (order >= 1)
            for (int k = 0; k < m; ++k) j.d1[static_cast<std::size_t>(o + k)].block(o, o, m, m) = f.d1[static_cast<std::size_t>(k)];
        if (order >= 2)
            for (int k = 0; k < m; ++k)
                for (int l = 0; l < m; ++l)
                    j.d2[static_cast<std::size_t>(o + k)][static_cast<std::size_t>(o + l)].block(o, o, m, m) =
                        f.d2[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)];
    }
    return j;
}

ProductStructure::ProductStructure(std::vector<MetricPtr> factors)
    : factors_(std::move(factors)), metric_(std::make_shared<const ProductMetric>(factors_)) {
    if (factors_.empty()) throw SpecError("product structure needs at least one block");
    offsets_ = metric_->offsets();
}

Vec ProductStructure::restrict_to(const Vec& v, int b) const {
    Vec out = Vec::Zero(v.size());
    out.segment(offset(b), block_dim(b)) = v.segment(offset(b), block_dim(b));
    return out;
}

// ---------------------------------------------------------------------------
// Tensors and curvature
// ---------------------------------------------------------------------------

double Tensor3::max_abs() const {
    double m = 0.0;
    for (double v : a_) m = std::max(m, std::fabs(v));
    return m;
}

Tensor3 Tensor3::operator-(const Tensor3& o) const {
    Tensor3 r(n_);
    for (std::size_t i = 0; i < a_.size(); ++i) r.a_[i] = a_[i] - o.a_[i];
    r.nonsmooth = nonsmooth || o.nonsmooth;
    return r;
}

Vec Tensor3::contract(const Vec& u, const Vec& w) const {
    Vec out = Vec::Zero(n_);
    for (int k = 0; k < n_; ++k) {
        double s = 0.0;
        for (int i = 0; i < n_; ++i) {
            double t = 0.0;
            for (int j = 0; j < n_; ++j) t += (*this)(k, i, j) * w[j];
            s += u[i] * t;
        }
        out[k] = s;
    }
    return out;
}

double Tensor4::max_abs() const {
    double m = 0.0;
    for (double v : a_) m = std::max(m, std::fabs(v));
    return m;
}

namespace {

Mat inverse_metric(const Mat& g) {
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success) throw DomainError("metric matrix is not positive definite");
    return llt.solve(Mat::Identity(g.rows(), g.cols()));
}

}  // namespace

Tensor3 christoffel(const MetricJet& jet) {
    const int n = static_cast<int>(jet.g.rows());
    const Mat gi = inverse_metric(jet.g);
    Tensor3 G(n);
    G.nonsmooth = jet.nonsmooth;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            Vec s(n);
            for (int l = 0; l < n; ++l)
                s[l] = jet.d1[static_cast<std::size_t>(i)](l, j) + jet.d1[static_cast<std::size_t>(j)](l, i) -
                       jet.d1[static_cast<std::size_t>(l)](i, j);
            const Vec gk = 0.5 * gi * s;
            for (int k = 0; k < n; ++k) G(k, i, j) = G(k, j, i) = gk[k];
        }
    return G;
}

Tensor3 christoffel(const MetricField& g, const Point& x) {
    if (!g.domain().contains(x)) throw DomainError("christoffel: point outside the domain");
    return christoffel(g.jet(x, 1));
}

Tensor3 conformal_difference(const MetricField& g, const ScalarField& phi, const Point& x) {
    if (!g.domain().contains(x)) throw DomainError("conformal_difference: point outside the domain");
    const int n = g.dim();
    const Mat gm = g.eval(x);
    const ScalarJet p = phi.jet(x, 1);
    const Vec up = inverse_metric(gm) * p.grad;
    Tensor3 D(n);
    D.nonsmooth = p.nonsmooth;
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                D(k, i, j) = (k == i ? p.grad[j] : 0.0) + (k == j ? p.grad[i] : 0.0) - gm(i, j) * up[k];
    return D;
}

Tensor4 riemann(const MetricJet& jet) {
    const int n = static_cast<int>(jet.g.rows());
    const Mat gi = inverse_metric(jet.g);
    const Tensor3 G = christoffel(jet);
    // dG[m](k, i, j) = d_m Gamma^k_ij
    std::vector<Tensor3> dG(static_cast<std::size_t>(n), Tensor3(n));
    for (int m = 0; m < n; ++m) {
        const Mat dgi = -gi * jet.d1[static_cast<std::size_t>(m)] * gi;
        const auto& d2m = jet.d2[static_cast<std::size_t>(m)];
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                Vec s(n), ds(n);
                for (int l = 0; l < n; ++l) {
                    s[l] = jet.d1[static_cast<std::size_t>(i)](l, j) + jet.d1[static_cast<std::size_t>(j)](l, i) -
                           jet.d1[static_cast<std::size_t>(l)](i, j);
                    ds[l] = d2m[static_cast<std::size_t>(i)](l, j) + d2m[static_cast<std::size_t>(j)](l, i) -
                            d2m[static_cast<std::size_t>(l)](i, j);
                }
                const Vec v = 0.5 * (dgi * s + gi * ds);
                for (int k = 0; k < n; ++k) dG[static_cast<std::size_t>(m)](k, i, j) = dG[static_cast<std::size_t>(m)](k, j, i) = v[k];
            }
    }
    Tensor4 R(n);
    R.nonsmooth = jet.nonsmooth;
    for (int l = 0; l < n; ++l)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) {
                    double r = dG[static_cast<std::size_t>(i)](l, j, k) - dG[static_cast<std::size_t>(j)](l, i, k);
                    for (int m = 0; m < n; ++m) r += G(l, i, m) * G(m, j, k) - G(l, j, m) * G(m, i, k);
                    R(l, i, j, k) = r;
                }
    return R;
}

Tensor4 riemann(const MetricField& g, const Point& x) {
    if (!g.domain().contains(x)) throw DomainError("riemann: point outside the domain");
    return riemann(g.jet(x, 2));
}

double curvature_norm_sq(const Tensor4& r, const Mat& g) {
    const int n = r.dim();
    const Mat E = orthonormal_frame(g);
    // Lower the first index, then express all four slots in the frame.
    Tensor4 low(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                for (int l = 0; l < n; ++l) {
                    double s = 0.0;
                    for (int m = 0; m < n; ++m) s += g(l, m) * r(m, i, j, k);
                    low(l, i, j, k) = s;
                }
    auto transform = [&](const Tensor4& t, int slot) {
        Tensor4 out(n);
        int idx[4];
        for (idx[0] = 0; idx[0] < n; ++idx[0])
            for (idx[1] = 0; idx[1] < n; ++idx[1])
                for (idx[2] = 0; idx[2] < n; ++idx[2])
                    for (idx[3] = 0; idx[3] < n; ++idx[3]) {
                        double s = 0.0;
                        int src[4] = {idx[0], idx[1], idx[2], idx[3]};
                        for (int m = 0; m < n; ++m) {
                            src[slot] = m;
                            s += E(m, idx[slot]) * t(src[0], src[1], src[2], src[3]);
                        }
                        out(idx[0], idx[1], idx[2], idx[3]) = s;
                    }
        return out;
    };
    Tensor4 t = low;
    for (int slot = 0; slot < 4; ++slot) t = transform(t, slot);
    double sum = 0.0;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c)
                for (int d = 0; d < n; ++d) sum += t(a, b, c, d) * t(a, b, c, d);
    return sum;
}

double curvature_norm_sq(const MetricField& g, const Point& x) {
    if (!g.domain().contains(x)) throw DomainError("curvature_norm_sq: point outside the domain");
    const MetricJet j = g.jet(x, 2);
    return curvature_norm_sq(riemann(j), j.g);
}

double sectional_curvature(const Tensor4& r, const Mat& g, const Vec& u, const Vec& w) {
    const int n = r.dim();
    double num = 0.0;
    for (int l = 0; l < n; ++l) {
        double rl = 0.0;  // (R(u, w) w)^l
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < n; ++k) rl += r(l, i, j, k) * u[i] * w[j] * w[k];
        num += rl * (g.row(l) * u)(0);
    }
    const double uu = u.dot(g * u), ww = w.dot(g * w), uw = u.dot(g * w);
    return num / (uu * ww - uw * uw);
}

std::vector<double> leaf_curvature_norms(const ProductStructure& ps, const Point& x) {
    std::vector<double> out;
    for (int b = 0; b < ps.blocks(); ++b) out.push_back(curvature_norm_sq(*ps.factor(b), ps.project(x, b)));
    return out;
}

}  // namespace finslerlab
