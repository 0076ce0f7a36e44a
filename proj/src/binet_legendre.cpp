#include "finslerlab/binet_legendre.hpp"

#include "finslerlab/error.hpp"
#include "finslerlab/parallel.hpp"
#include "finslerlab/random.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <numbers>

namespace finslerlab {

std::string to_string(BLBackend b) {
    switch (b) {
    case BLBackend::Lattice: return "lattice";
    case BLBackend::MonteCarlo: return "monte-carlo";
    case BLBackend::Spherical: return "spherical";
    }
    return "?";
}

BLBackend parse_backend(const std::string& s) {
    if (s == "lattice") return BLBackend::Lattice;
    if (s == "monte-carlo" || s == "mc") return BLBackend::MonteCarlo;
    if (s == "spherical") return BLBackend::Spherical;
    throw SpecError("unknown integration backend '" + s + "' (lattice, monte-carlo, spherical)");
}

BLIntegrator BLIntegrator::defaults(int n) {
    BLIntegrator b;
    b.mode = n <= 3 ? BLBackend::Lattice : BLBackend::MonteCarlo;
    return b;
}

int BLIntegrator::effective_resolution(int n) const {
    if (resolution > 0) return resolution;
    switch (mode) {
    case BLBackend::Lattice: return 201;
    case BLBackend::MonteCarlo: return 2000000;
    case BLBackend::Spherical: return n == 2 ? 256 : 32;
    }
    return 0;
}

nlohmann::json BLResult::to_json() const {
    return {{"g_star", finslerlab::to_json(g_star)},
            {"g_bl", finslerlab::to_json(g_bl)},
            {"vol", vol},
            {"error_estimate", error_estimate},
            {"backend", backend},
            {"resolution", resolution},
            {"seed", seed}};
}

namespace {

constexpr int kMaxDim = 8;
constexpr double kGolden = 0.6180339887498949;

using Buf = std::array<double, kMaxDim>;

struct Body {
    const MinkowskiNorm& norm;
    int n;
    double r;  // box half width

    double f(const Buf& v) const { return norm.eval({v.data(), static_cast<std::size_t>(n)}); }
};

struct Min1 {
    double x, value;
};

// Golden-section minimum of a convex function on [a, b].
template <class Fn>
Min1 golden(Fn&& fn, double a, double b) {
    const double tol = 1e-13 * (b - a);
    double c = b - kGolden * (b - a), d = a + kGolden * (b - a);
    double fc = fn(c), fd = fn(d);
    for (int it = 0; it < 90 && b - a > tol; ++it) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - kGolden * (b - a);
            fc = fn(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + kGolden * (b - a);
            fd = fn(d);
        }
    }
    return fc <= fd ? Min1{c, fc} : Min1{d, fd};
}

// Crossing of fn = 1 between `out` (fn > 1) and `in` (fn <= 1).
template <class Fn>
double bisect(Fn&& fn, double out, double in) {
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (out + in);
        if (mid == out || mid == in) break;
        (fn(mid) > 1.0 ? out : in) = mid;
    }
    return 0.5 * (out + in);
}

struct BoxTooSmall {};

// min over v[k..n) of F(v) inside the box, with v[0..k) fixed.
double min_rest(const Body& b, Buf& v, int k) {
    if (k == b.n) return b.f(v);
    const auto m = golden(
        [&](double s) {
            v[k] = s;
            return min_rest(b, v, k + 1);
        },
        -b.r, b.r);
    return m.value;
}

struct Support {
    bool empty = true;
    double lo = 0, hi = 0;
};

// Interval of v[k] values whose slice of the unit ball is non-empty.
Support support(const Body& b, Buf& v, int k) {
    auto m = [&](double s) {
        v[k] = s;
        return min_rest(b, v, k + 1);
    };
    const Min1 c = golden(m, -b.r, b.r);
    if (c.value > 1.0) return {};
    if (m(-b.r) <= 1.0 || m(b.r) <= 1.0) throw BoxTooSmall{};
    return {false, bisect(m, -b.r, c.x), bisect(m, b.r, c.x)};
}

struct Acc {
    double vol = 0;
    std::array<double, kMaxDim * kMaxDim> m{};
};

void lattice_rec(const Body& b, Buf& v, int k, double w, int res, Acc& acc) {
    const int n = b.n;
    const Support s = support(b, v, k);
    if (s.empty) return;
    if (k == n - 1) {
        const double t0 = s.lo, t1 = s.hi;
        const double len = t1 - t0;
        const double m1 = 0.5 * (t1 * t1 - t0 * t0);
        const double m2 = (t1 * t1 * t1 - t0 * t0 * t0) / 3.0;
        acc.vol += w * len;
        for (int i = 0; i < n - 1; ++i) {
            for (int j = 0; j <= i; ++j) acc.m[i * kMaxDim + j] += w * v[i] * v[j] * len;
            acc.m[(n - 1) * kMaxDim + i] += w * v[i] * m1;
        }
        acc.m[(n - 1) * kMaxDim + n - 1] += w * m2;
        return;
    }
    const double h = (s.hi - s.lo) / res;
    for (int i = 0; i < res; ++i) {
        v[k] = s.lo + (i + 0.5) * h;
        lattice_rec(b, v, k + 1, w * h, res, acc);
    }
}

struct Moments {
    double vol = 0;
    Mat m;  // int v v^T
};

Moments finish(const Acc& acc, int n) {
    Moments out;
    out.vol = acc.vol;
    out.m = Mat(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) out.m(i, j) = out.m(j, i) = acc.m[i * kMaxDim + j];
    return out;
}

Moments lattice_moments(const Body& b, int res) {
    const int n = b.n;
    Buf v{};
    if (n == 1) {
        Acc acc;
        lattice_rec(b, v, 0, 1.0, res, acc);
        return finish(acc, n);
    }
    const Support s = support(b, v, 0);
    if (s.empty) return finish(Acc{}, n);
    const double h = (s.hi - s.lo) / res;
    std::vector<Acc> slabs(res);
    std::vector<char> small(res, 0);
    parallel_for(res, [&](std::size_t i) {
        Buf u{};
        u[0] = s.lo + (i + 0.5) * h;
        try {
            lattice_rec(b, u, 1, h, res, slabs[i]);
        } catch (const BoxTooSmall&) {
            small[i] = 1;
        }
    });
    Acc total;
    for (int i = 0; i < res; ++i) {
        if (small[i]) throw BoxTooSmall{};
        total.vol += slabs[i].vol;
        for (std::size_t j = 0; j < total.m.size(); ++j) total.m[j] += slabs[i].m[j];
    }
    return finish(total, n);
}

constexpr int kBatches = 32;

std::vector<Moments> mc_batches(const Body& b, long samples, std::uint64_t seed) {
    const int n = b.n;
    const double box = std::pow(2.0 * b.r, n);
    std::vector<Moments> out(kBatches);
    std::vector<char> small(kBatches, 0);
    const double shell = 1e-3 * b.r;
    parallel_for(kBatches, [&](std::size_t k) {
        const long count = samples / kBatches + (static_cast<long>(k) < samples % kBatches ? 1 : 0);
        Rng rng(substream(seed, static_cast<std::uint64_t>(k)));
        Acc acc;
        Buf v{};
        long hit = 0;
        for (long s = 0; s < count; ++s) {
            double edge = 0;
            for (int i = 0; i < n; ++i) {
                v[i] = rng.uniform(-b.r, b.r);
                edge = std::max(edge, std::fabs(v[i]));
            }
            if (b.f(v) > 1.0) continue;
            if (edge > b.r - shell) small[k] = 1;
            ++hit;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j <= i; ++j) acc.m[i * kMaxDim + j] += v[i] * v[j];
        }
        const double w = count > 0 ? box / count : 0.0;
        acc.vol = hit * w;
        for (auto& x : acc.m) x *= w;
        out[k] = finish(acc, n);
    });
    for (char c : small)
        if (c) throw BoxTooSmall{};
    return out;
}

// Gauss-Legendre nodes and weights on [-1, 1] (Golub-Welsch).
void gauss_legendre(int m, std::vector<double>& x, std::vector<double>& w) {
    Mat j = Mat::Zero(m, m);
    for (int k = 1; k < m; ++k) j(k, k - 1) = j(k - 1, k) = k / std::sqrt(4.0 * k * k - 1.0);
    Eigen::SelfAdjointEigenSolver<Mat> es(j);
    x.resize(m);
    w.resize(m);
    for (int k = 0; k < m; ++k) {
        x[k] = es.eigenvalues()[k];
        const double e = es.eigenvectors()(0, k);
        w[k] = 2.0 * e * e;
    }
}

struct SphereRule {
    Mat u;  // unit directions, one per column
    Vec w;
};

SphereRule make_sphere_rule(int n, int res) {
    SphereRule r;
    if (n == 1) {
        r.u = Mat(1, 2);
        r.u << 1.0, -1.0;
        r.w = Vec::Ones(2);
    } else if (n == 2) {
        r.u = Mat(2, res);
        r.w = Vec::Constant(res, 2.0 * std::numbers::pi / res);
        for (int k = 0; k < res; ++k) {
            const double t = 2.0 * std::numbers::pi * (k + 0.5) / res;
            r.u.col(k) = Vec2(std::cos(t), std::sin(t));
        }
    } else if (n == 3) {
        std::vector<double> z, wz;
        gauss_legendre(res, z, wz);
        const int nphi = 2 * res;
        r.u = Mat(3, res * nphi);
        r.w = Vec(res * nphi);
        for (int i = 0; i < res; ++i) {
            const double s = std::sqrt(1.0 - z[i] * z[i]);
            for (int k = 0; k < nphi; ++k) {
                const double p = 2.0 * std::numbers::pi * (k + 0.5) / nphi;
                r.u.col(i * nphi + k) = Vec3(s * std::cos(p), s * std::sin(p), z[i]);
                r.w[i * nphi + k] = wz[i] * 2.0 * std::numbers::pi / nphi;
            }
        }
    } else {
        throw SpecError("spherical integration backend supports dimensions 1 to 3");
    }
    return r;
}

const SphereRule& sphere_rule(int n, int res) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, SphereRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find({n, res});
    if (it == cache.end()) it = cache.emplace(std::make_pair(n, res), make_sphere_rule(n, res)).first;
    return it->second;
}

// Polar moments of the body {v : F(L w) <= 1} in w coordinates:
// (int F^-n dsigma, int F^-(n+2) u u^T dsigma).
std::pair<double, Mat> spherical_sums(const MinkowskiNorm& norm, const Mat& l, int res) {
    const int n = norm.dim();
    const SphereRule& rule = sphere_rule(n, res);
    const Mat lu = l * rule.u;
    double s0 = 0;
    std::array<double, kMaxDim * kMaxDim> m{};
    for (Eigen::Index k = 0; k < lu.cols(); ++k) {
        const double f = norm.eval({lu.col(k).data(), static_cast<std::size_t>(n)});
        if (!(f > 0.0) || !std::isfinite(f)) throw NumericError("norm vanishes or is not finite on a unit direction");
        const double fn = rule.w[k] * std::pow(f, -n);
        s0 += fn;
        const double c = fn / (f * f);
        const double* u = rule.u.col(k).data();
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) m[i * kMaxDim + j] += c * u[i] * u[j];
    }
    Mat out(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) out(i, j) = out(j, i) = m[i * kMaxDim + j];
    return {s0, out};
}

Mat invert_dual(const Mat& g_star) {
    const int n = static_cast<int>(g_star.rows());
    Eigen::SelfAdjointEigenSolver<Mat> es(g_star);
    const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * hi) || !std::isfinite(hi)) throw NumericError("dual form g* is numerically singular");
    Mat g = g_star.inverse();
    g = symmetrize(g);
    (void)n;
    return g;
}

struct Raw {
    Mat g_star;
    double vol;
};

Raw from_moments(const Moments& mo, int n) {
    if (!(mo.vol > 0.0)) throw NumericError("unit ball has no accepted volume (degenerate norm)");
    return {symmetrize(mo.m * ((n + 2) / mo.vol)), mo.vol};
}

Raw run_lattice(const MinkowskiNorm& norm, double r, int res) {
    const Body b{norm, norm.dim(), r};
    return from_moments(lattice_moments(b, res), norm.dim());
}

}  // namespace

double circumradius_estimate(const MinkowskiNorm& norm, std::uint64_t seed) {
    const int n = norm.dim();
    double r = 0;
    auto probe = [&](const Vec& u) {
        const double f = norm(u);
        if (!(f > 0.0)) throw NumericError("norm is not positive on a unit direction (degenerate norm)");
        r = std::max(r, 1.0 / f);
    };
    for (int i = 0; i < n; ++i) {
        Vec e = Vec::Zero(n);
        e[i] = 1.0;
        probe(e);
        probe(-e);
    }
    Rng rng(substream(seed, "circumradius"));
    for (int k = 0; k < 100; ++k) probe(rng.unit_vector(n));
    return r;
}

BLResult bl_of_norm(const MinkowskiNorm& norm, const BLIntegrator& integ) {
    const int n = norm.dim();
    if (n < 1 || n > kMaxDim) throw SpecError("Binet-Legendre integration supports dimensions 1 to 8");
    const int res = integ.effective_resolution(n);
    if (res < 2) throw SpecError("integration resolution must be at least 2");
    BLResult out;
    out.backend = to_string(integ.mode);
    out.resolution = res;
    out.seed = integ.seed;

    if (integ.mode == BLBackend::Spherical) {
        auto once = [&](const Mat& l, int r) {
            const auto [s0, mm] = spherical_sums(norm, l, r);
            return Raw{symmetrize(l * mm * l * (n / s0)), s0 * std::fabs(l.determinant()) / n};
        };
        // whiten with a coarse pass so the quadrature sees a nearly round body
        const Raw coarse = once(Mat::Identity(n, n), std::max(2, res / 2));
        Eigen::SelfAdjointEigenSolver<Mat> es(coarse.g_star);
        if (!(es.eigenvalues().minCoeff() > 0.0)) throw NumericError("dual form g* is numerically singular");
        const Mat l = es.operatorSqrt();
        const Raw full = once(l, res);
        out.g_star = full.g_star;
        out.vol = full.vol;
        out.g_bl = invert_dual(out.g_star);
        if (n > 1 && integ.estimate_error)
            out.error_estimate = max_abs(out.g_bl - invert_dual(once(l, std::max(2, res / 2)).g_star));
        return out;
    }

    double r = integ.box_factor * circumradius_estimate(norm, integ.seed);
    for (int attempt = 0;; ++attempt) {
        try {
            out.box_half_width = r;
            if (integ.mode == BLBackend::Lattice) {
                const Raw full = run_lattice(norm, r, res);
                out.g_star = full.g_star;
                out.vol = full.vol;
                out.g_bl = invert_dual(full.g_star);
                if (integ.estimate_error)
                    out.error_estimate = max_abs(out.g_bl - invert_dual(run_lattice(norm, r, std::max(2, res / 2)).g_star));
            } else {
                const Body b{norm, n, r};
                const auto batches = mc_batches(b, res, integ.seed);
                Moments total{0.0, Mat::Zero(n, n)};
                for (const auto& m : batches) {
                    total.vol += m.vol / kBatches;
                    total.m += m.m / kBatches;
                }
                const Raw full = from_moments(total, n);
                out.g_star = full.g_star;
                out.vol = full.vol;
                out.g_bl = invert_dual(full.g_star);
                // spread of the per-batch estimates around their mean
                std::vector<Mat> gs;
                Mat mean = Mat::Zero(n, n);
                for (const auto& m : batches) {
                    if (!(m.vol > 0.0)) continue;
                    gs.push_back(invert_dual(from_moments(m, n).g_star));
                    mean += gs.back();
                }
                if (gs.size() < 2) throw NumericError("too few accepted Monte Carlo samples for an error estimate");
                mean /= static_cast<double>(gs.size());
                Mat var = Mat::Zero(n, n);
                for (const auto& g : gs) var += (g - mean).cwiseAbs2();
                var /= static_cast<double>(gs.size() - 1);
                out.error_estimate = std::sqrt(var.maxCoeff() / gs.size());
            }
            return out;
        } catch (const BoxTooSmall&) {
            if (attempt >= 3) throw NumericError("bounding box too small for the unit ball after growing it 3 times");
            r *= 1.5;
        }
    }
}

Mat bl_dual_form(const FinslerField& f, const Point& x, const BLIntegrator& integ) {
    return bl_metric(f, x, integ).g_star;
}

BLResult bl_metric(const FinslerField& f, const Point& x, const BLIntegrator& integ) {
    if (!f.domain().contains(x)) throw DomainError("point outside the domain of the Finsler field");
    return bl_of_norm(*f.fiber(x), integ);
}

namespace {

class BLMetric : public MetricField {
public:
    BLMetric(FinslerPtr f, BLIntegrator integ) : MetricField(f->domain()), f_(std::move(f)), integ_(integ) {}

    Mat eval(const Point& x) const override {
        std::string key(reinterpret_cast<const char*>(x.data()), sizeof(double) * x.size());
        if (f_->x_independent()) key.clear();
        {
            std::lock_guard<std::mutex> lock(mu_);
            const auto it = cache_.find(key);
            if (it != cache_.end()) return it->second;
        }
        Mat g = bl_of_norm(*f_->fiber(x), integ_).g_bl;
        std::lock_guard<std::mutex> lock(mu_);
        if (cache_.size() > 200000) cache_.clear();
        cache_.emplace(std::move(key), g);
        return g;
    }

    MetricJet jet(const Point& x, int order) const override {
        if (!f_->x_independent()) return MetricField::jet(x, order);
        require_inside(x);
        const int n = dim();
        MetricJet j;
        j.g = eval(x);
        if (order >= 1) j.d1.assign(n, Mat::Zero(n, n));
        if (order >= 2) j.d2.assign(n, std::vector<Mat>(n, Mat::Zero(n, n)));
        return j;
    }

    bool is_constant() const override { return f_->x_independent(); }

private:
    FinslerPtr f_;
    BLIntegrator integ_;
    mutable std::mutex mu_;
    mutable std::map<std::string, Mat> cache_;
};

}  // namespace

MetricPtr bl_field(FinslerPtr f, BLIntegrator integ) {
    integ.estimate_error = false;
    return std::make_shared<BLMetric>(std::move(f), integ);
}

MetricPtr bl_field(FinslerPtr f) {
    BLIntegrator integ;
    if (f->dim() <= 3) integ.mode = BLBackend::Spherical;
    else integ = BLIntegrator::defaults(f->dim());
    return bl_field(std::move(f), integ);
}

}  // namespace finslerlab
