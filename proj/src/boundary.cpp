#include "finslerlab/boundary.hpp"

#include "finslerlab/error.hpp"
#include "finslerlab/random.hpp"
#include "finslerlab/transport.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <queue>
#include <sstream>

namespace finslerlab {

namespace {

double g_norm(const Mat& g, const Vec& v) { return std::sqrt(std::max(0.0, v.dot(g * v))); }

// 4-point Gauss-Legendre on [0, 1]
constexpr double kGx[4] = {0.069431844202973712, 0.33000947820757187, 0.66999052179242813, 0.93056815579702629};
constexpr double kGw[4] = {0.17392742256872693, 0.32607257743127307, 0.32607257743127307, 0.17392742256872693};

double radical_inverse(std::uint64_t k, std::uint64_t base) {
    double inv = 1.0 / static_cast<double>(base), f = inv, r = 0.0;
    while (k > 0) {
        r += f * static_cast<double>(k % base);
        k /= base;
        f *= inv;
    }
    return r;
}

Vec hermite(double t0, const Vec& y0, const Vec& d0, double t1, const Vec& y1, const Vec& d1, double s) {
    const double h = t1 - t0;
    if (h == 0.0) return y0;
    const double u = (s - t0) / h;
    const double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * h * d0 + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * h * d1;
}

template <class F>
double golden_min(F&& f, double a, double b, int iters, double* fmin) {
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    const double x = fc <= fd ? c : d;
    if (fmin) *fmin = std::min(fc, fd);
    return x;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Weight of the gap in the merit s + w gap^2 / s used to pick and refine
// directions; smooth across the directions that run into the boundary.
constexpr double kGapWeight = 10.0;

struct Shot {
    double value = kInf;  // arclength to the closest approach plus the closing segment
    double merit = kInf;
    Point escape;
};

// One g-unit direction, looking no further than `horizon`.
Shot shoot(const MetricField& g, const Point& x, const Vec& dir, double horizon, double tol) {
    Shot out;
    const Domain& dom = g.domain();
    if (!dom.has_boundary() || !(horizon > 0.0)) return out;
    const Path p = integrate_geodesic(g, x, dir, horizon, tol);
    const std::size_t m = p.points.size();
    std::size_t kb = 0;
    double mb = kInf;
    for (std::size_t k = 0; k < m; ++k) {
        const double mk = dom.boundary_margin(p.points[k]);
        if (mk < mb) {
            mb = mk;
            kb = k;
        }
    }
    // a direction that only moves away from the boundary does not approach it
    if (kb == 0) return out;
    double best_t = p.t[kb];
    Point best_p = p.points[kb];
    auto at = [&](std::size_t k, double s) {
        return hermite(p.t[k], p.points[k], p.tangents[k], p.t[k + 1], p.points[k + 1], p.tangents[k + 1], s);
    };
    for (std::size_t k : {kb - 1, kb}) {
        if (k + 1 >= m) continue;
        double fm = kInf;
        const double s = golden_min([&](double s) { return dom.boundary_margin(at(k, s)); }, p.t[k], p.t[k + 1], 60,
                                    &fm);
        if (fm < mb) {
            mb = fm;
            best_t = s;
            best_p = at(k, s);
        }
    }
    const int e = dom.nearest_exclusion(best_p);
    out.escape = dom.exclusions[static_cast<std::size_t>(e)].nearest(best_p);
    const double gap = mb > 0.0 ? segment_length(g, best_p, out.escape, 8) : 0.0;
    out.value = p.speed * best_t + gap;
    const double arc = p.speed * best_t;
    out.merit = arc + kGapWeight * gap * gap / arc;
    return out;
}

// Orthonormal basis of the complement of the unit vector u.
Mat tangent_basis(const Vec& u) {
    const int n = static_cast<int>(u.size());
    Eigen::HouseholderQR<Mat> qr(u);
    const Mat q = qr.householderQ() * Mat::Identity(n, n);
    return q.rightCols(n - 1);
}

}  // namespace

nlohmann::json DInftyEstimate::to_json() const {
    nlohmann::json j;
    if (found)
        j["value"] = value;
    else
        j["value"] = ">" + fmt(horizon);
    j["found"] = found;
    j["directions"] = directions;
    j["horizon"] = horizon;
    if (found && witness.size() > 0) {
        j["witness"] = finslerlab::to_json(witness);
        j["witness_index"] = witness_index;
        j["escape_point"] = finslerlab::to_json(escape_point);
    }
    return j;
}

std::vector<Vec> shooting_directions(const Mat& g, int m, std::uint64_t seed) {
    const int n = static_cast<int>(g.rows());
    const Mat e = orthonormal_frame(g);
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(m));
    for (int k = 0; k < m; ++k) {
        Vec u(n);
        const auto uk = static_cast<std::uint64_t>(k);
        if (n == 1) {
            u[0] = k % 2 == 0 ? 1.0 : -1.0;
        } else if (n == 2) {
            const double a = 2.0 * std::numbers::pi * radical_inverse(uk, 2);
            u << std::cos(a), std::sin(a);
        } else if (n == 3) {
            const double z = 2.0 * radical_inverse(uk + 1, 2) - 1.0;
            const double a = 2.0 * std::numbers::pi * radical_inverse(uk + 1, 3);
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            u << r * std::cos(a), r * std::sin(a), z;
        } else {
            Rng rng(substream(substream(seed, "d-infty-directions"), uk));
            u = rng.unit_vector(n);
        }
        out.push_back(e * u);
    }
    return out;
}

DInftyEstimate estimate_d_infty(const MetricField& g, const Point& x, const ShootingOptions& opt) {
    if (opt.directions < 1) throw SpecError("need at least one shooting direction");
    const Mat gx = g(x);
    DInftyEstimate est;
    est.directions = opt.directions;
    est.horizon = opt.horizon;
    const std::vector<Vec> dirs = shooting_directions(gx, opt.directions, opt.seed);
    double best_merit = kInf, best_value = kInf;
    Point escape;
    auto consider = [&](const Shot& s) {
        if (s.value < best_value) {
            best_value = s.value;
            escape = s.escape;
        }
        if (s.merit < best_merit) {
            best_merit = s.merit;
            return true;
        }
        return false;
    };
    for (int k = 0; k < opt.directions; ++k) {
        const Shot s = shoot(g, x, dirs[static_cast<std::size_t>(k)], std::min(opt.horizon, best_merit), opt.tol);
        if (consider(s)) est.witness_index = k;
    }
    if (est.witness_index < 0) return est;
    const Mat e = orthonormal_frame(gx);
    Vec u = e.lu().solve(dirs[static_cast<std::size_t>(est.witness_index)]);
    if (opt.refine && g.dim() > 1) {
        const int n = g.dim();
        double step = n == 2 ? 2.0 * std::numbers::pi / opt.directions
                             : std::sqrt(4.0 * std::numbers::pi / opt.directions);
        int evals = 0;
        while (step > 1e-9 && evals < 400) {
            const Mat t = tangent_basis(u);
            bool moved = false;
            for (int a = 0; a < n - 1 && !moved; ++a)
                for (double sg : {1.0, -1.0}) {
                    const Vec cand = (std::cos(step) * u + sg * std::sin(step) * t.col(a)).normalized();
                    const Shot s = shoot(g, x, e * cand, std::min(opt.horizon, best_merit), opt.tol);
                    ++evals;
                    if (consider(s)) {
                        u = cand;
                        moved = true;
                        break;
                    }
                }
            if (!moved) step *= 0.5;
        }
    }
    if (!(best_value <= opt.horizon)) return est;
    est.value = best_value;
    est.found = true;
    est.witness = e * u;
    est.escape_point = escape;
    return est;
}

double segment_length(const MetricField& g, const Point& a, const Point& b, int pieces) {
    const Vec d = b - a;
    double len = 0.0;
    for (int p = 0; p < pieces; ++p)
        for (int q = 0; q < 4; ++q) {
            const Point y = a + ((p + kGx[q]) / pieces) * d;
            len += kGw[q] * g_norm(g.eval(y), d);
        }
    return len / pieces;
}

std::string to_string(BoundaryProfile::Mode m) {
    return m == BoundaryProfile::Mode::ClosedForm ? "closed-form" : "shooting";
}

BoundaryProfile BoundaryProfile::closed_form(ScalarPtr d) {
    if (!d) throw SpecError("closed-form boundary profile needs an expression");
    BoundaryProfile p;
    p.mode_ = Mode::ClosedForm;
    p.closed_ = std::move(d);
    return p;
}

BoundaryProfile BoundaryProfile::shooting(MetricPtr g, ShootingOptions opt) {
    if (!g) throw SpecError("shooting boundary profile needs a metric");
    BoundaryProfile p;
    p.mode_ = Mode::Shooting;
    p.g_ = std::move(g);
    p.opt_ = opt;
    return p;
}

DInftyEstimate BoundaryProfile::estimate(const Point& x) const {
    if (mode_ == Mode::Shooting) return estimate_d_infty(*g_, x, opt_);
    DInftyEstimate e;
    e.value = closed_->eval(x);
    e.found = std::isfinite(e.value) && e.value > 0.0;
    if (!e.found) e.value = kInf;
    e.horizon = kInf;
    return e;
}

double BoundaryProfile::operator()(const Point& x) const {
    const DInftyEstimate e = estimate(x);
    if (!e.found) throw NumericError("d_infty unavailable: no boundary reached");
    return e.value;
}

FriedMetric::FriedMetric(MetricPtr g, BoundaryProfile profile)
    : MetricField(g->domain()), g_(std::move(g)), profile_(std::move(profile)) {}

Mat FriedMetric::eval(const Point& x) const {
    const double d = profile_(x);
    return g_->eval(x) / (d * d);
}

FriedScene::FriedScene(MetricPtr base, BoundaryProfile p)
    : g(std::move(base)), profile(std::move(p)), fried(std::make_shared<FriedMetric>(g, profile)) {}

Mat fried_metric(const FriedScene& s, const Point& x) { return (*s.fried)(x); }

nlohmann::json DistanceEstimate::to_json() const {
    return {{"value", value}, {"lower", lower}, {"upper", upper}, {"lattice", lattice}, {"resolution", resolution}};
}

namespace {

int default_resolution(int n) {
    switch (n) {
    case 1: return 256;
    case 2: return 48;
    case 3: return 16;
    default: return 8;
    }
}

std::vector<Point> dijkstra_path(const MetricField& g, const Point& x, const Point& y, int res, double* value) {
    const int n = g.dim();
    const Domain& dom = g.domain();
    const Vec ext = (x - y).cwiseAbs();
    const double pad = 0.5 * std::max(ext.maxCoeff(), 1e-12);
    Vec lo = x.cwiseMin(y).array() - pad, hi = x.cwiseMax(y).array() + pad;
    lo = lo.cwiseMax(dom.lo);
    hi = hi.cwiseMin(dom.hi);
    const Vec h = (hi - lo) / (res - 1);

    std::size_t total = 1;
    for (int i = 0; i < n; ++i) total *= static_cast<std::size_t>(res);
    auto node_point = [&](std::size_t id) {
        Point p(n);
        for (int i = 0; i < n; ++i) {
            p[i] = lo[i] + h[i] * static_cast<double>(id % static_cast<std::size_t>(res));
            id /= static_cast<std::size_t>(res);
        }
        return p;
    };
    const std::size_t ix = total, iy = total + 1;
    auto point = [&](std::size_t id) { return id == ix ? x : id == iy ? y : node_point(id); };

    std::vector<char> ok(total);
    for (std::size_t id = 0; id < total; ++id) ok[id] = dom.contains(node_point(id)) ? 1 : 0;

    // grid nodes of the cells around an off-grid point
    auto around = [&](const Point& p) {
        std::vector<std::size_t> ids;
        std::vector<int> base(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            base[static_cast<std::size_t>(i)] =
                h[i] > 0 ? static_cast<int>(std::floor((p[i] - lo[i]) / h[i])) : 0;
        const int span = 4;  // offsets -1..2
        std::size_t combos = 1;
        for (int i = 0; i < n; ++i) combos *= span;
        for (std::size_t c = 0; c < combos; ++c) {
            std::size_t rest = c, id = 0, mul = 1;
            bool inside = true;
            for (int i = 0; i < n; ++i) {
                const int k = base[static_cast<std::size_t>(i)] + static_cast<int>(rest % span) - 1;
                rest /= span;
                if (k < 0 || k >= res) inside = false;
                id += static_cast<std::size_t>(std::max(k, 0)) * mul;
                mul *= static_cast<std::size_t>(res);
            }
            if (inside && ok[id]) ids.push_back(id);
        }
        return ids;
    };
    const std::vector<std::size_t> near_x = around(x), near_y = around(y);

    std::vector<std::vector<int>> offsets;
    {
        std::size_t combos = 1;
        for (int i = 0; i < n; ++i) combos *= 3;
        for (std::size_t c = 0; c < combos; ++c) {
            std::vector<int> o(static_cast<std::size_t>(n));
            std::size_t rest = c;
            bool zero = true;
            for (int i = 0; i < n; ++i) {
                o[static_cast<std::size_t>(i)] = static_cast<int>(rest % 3) - 1;
                rest /= 3;
                if (o[static_cast<std::size_t>(i)] != 0) zero = false;
            }
            if (!zero) offsets.push_back(o);
        }
    }

    auto weight = [&](const Point& a, const Point& b) {
        if (!dom.segment_inside(a, b)) return kInf;
        const Point mid = 0.5 * (a + b);
        return g_norm(g.eval(mid), b - a);
    };

    std::vector<double> dist(total + 2, kInf);
    std::vector<std::size_t> prev(total + 2, static_cast<std::size_t>(-1));
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
    dist[ix] = 0.0;
    pq.push({0.0, ix});
    auto relax = [&](std::size_t from, std::size_t to, double w) {
        const double nd = dist[from] + w;
        if (nd < dist[to]) {
            dist[to] = nd;
            prev[to] = from;
            pq.push({nd, to});
        }
    };
    if (dom.segment_inside(x, y)) {
        // direct edge when x and y are within two cells of each other
        bool close = true;
        for (int i = 0; i < n; ++i)
            if (std::fabs(x[i] - y[i]) > 2.0 * h[i]) close = false;
        if (close) relax(ix, iy, weight(x, y));
    }
    while (!pq.empty()) {
        const auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        if (u == iy) break;
        const Point pu = point(u);
        if (u == ix) {
            for (std::size_t v : near_x) relax(u, v, weight(pu, node_point(v)));
            continue;
        }
        for (const auto& o : offsets) {
            std::size_t rest = u, id = 0, mul = 1;
            bool inside = true;
            for (int i = 0; i < n; ++i) {
                const int k = static_cast<int>(rest % static_cast<std::size_t>(res)) + o[static_cast<std::size_t>(i)];
                rest /= static_cast<std::size_t>(res);
                if (k < 0 || k >= res) inside = false;
                id += static_cast<std::size_t>(std::max(k, 0)) * mul;
                mul *= static_cast<std::size_t>(res);
            }
            if (!inside || !ok[id]) continue;
            relax(u, id, weight(pu, node_point(id)));
        }
        if (std::find(near_y.begin(), near_y.end(), u) != near_y.end()) relax(u, iy, weight(pu, y));
    }
    if (!std::isfinite(dist[iy]))
        throw DomainError("points are separated by the excluded set at this resolution");
    *value = dist[iy];
    std::vector<Point> path;
    for (std::size_t v = iy; v != static_cast<std::size_t>(-1); v = prev[v]) path.push_back(point(v));
    std::reverse(path.begin(), path.end());
    return path;
}

// k + 1 vertices, equally spaced in chart arclength along the polyline
std::vector<Point> resample(const std::vector<Point>& pts, int k) {
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < pts.size(); ++i) cum.push_back(cum.back() + (pts[i] - pts[i - 1]).norm());
    std::vector<Point> out;
    std::size_t seg = 1;
    for (int j = 0; j <= k; ++j) {
        const double s = cum.back() * j / k;
        while (seg + 1 < pts.size() && cum[seg] < s) ++seg;
        const double a = cum[seg - 1], b = cum[seg];
        const double u = b > a ? std::clamp((s - a) / (b - a), 0.0, 1.0) : 0.0;
        out.push_back(pts[seg - 1] + u * (pts[seg] - pts[seg - 1]));
    }
    out.front() = pts.front();
    out.back() = pts.back();
    return out;
}

double polyline_length(const MetricField& g, const std::vector<Point>& p, int pieces) {
    double len = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i) len += segment_length(g, p[i - 1], p[i], pieces);
    return len;
}

// Newton iterations on the polyline length, each interior vertex moving in
// the normal space of its neighbour chord. Every segment couples only its two
// end vertices, so the Hessian is assembled from per-segment finite
// differences.
void polish(const MetricField& g, std::vector<Point>& p) {
    const Domain& dom = g.domain();
    const int n = g.dim();
    const int k = n - 1;
    const int inner = static_cast<int>(p.size()) - 2;
    if (inner < 1 || k < 1) return;
    const int dofs = inner * k;
    auto seg = [&](const Point& a, const Point& b) {
        if (!dom.segment_inside(a, b)) return kInf;
        return segment_length(g, a, b, 1);
    };
    auto total = [&](const std::vector<Point>& q) {
        double l = 0.0;
        for (std::size_t i = 1; i < q.size(); ++i) l += seg(q[i - 1], q[i]);
        return l;
    };
    double scale = 0.0;
    for (std::size_t i = 1; i < p.size(); ++i) scale += (p[i] - p[i - 1]).norm();
    double len = total(p);
    for (int iter = 0; iter < 40; ++iter) {
        std::vector<Mat> nu(p.size());
        std::vector<double> step(p.size(), 0.0);
        for (int i = 1; i <= inner; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            const Vec chord = p[ui + 1] - p[ui - 1];
            nu[ui] = tangent_basis(chord.normalized());
            step[ui] = 1e-4 * 0.5 * chord.norm();
        }
        Vec grad = Vec::Zero(dofs);
        Mat hess = Mat::Zero(dofs, dofs);
        for (int j = 0; j + 1 < static_cast<int>(p.size()); ++j) {
            // local variables: those of vertex j then vertex j + 1 that are interior
            std::vector<std::pair<int, int>> vars;  // (vertex, normal index)
            for (int v : {j, j + 1})
                if (v >= 1 && v <= inner)
                    for (int a = 0; a < k; ++a) vars.push_back({v, a});
            const int m = static_cast<int>(vars.size());
            auto phi = [&](const Vec& z) {
                Point a = p[static_cast<std::size_t>(j)], b = p[static_cast<std::size_t>(j + 1)];
                for (int q = 0; q < m; ++q) {
                    const auto [v, c] = vars[static_cast<std::size_t>(q)];
                    const Vec d = z[q] * nu[static_cast<std::size_t>(v)].col(c);
                    (v == j ? a : b) += d;
                }
                return seg(a, b);
            };
            auto index = [&](int q) {
                const auto [v, c] = vars[static_cast<std::size_t>(q)];
                return (v - 1) * k + c;
            };
            const Vec z0 = Vec::Zero(m);
            const double f0 = phi(z0);
            for (int q = 0; q < m; ++q) {
                const double hq = step[static_cast<std::size_t>(vars[static_cast<std::size_t>(q)].first)];
                Vec zp = z0, zm = z0;
                zp[q] += hq;
                zm[q] -= hq;
                const double fp = phi(zp), fm = phi(zm);
                grad[index(q)] += (fp - fm) / (2 * hq);
                hess(index(q), index(q)) += (fp - 2 * f0 + fm) / (hq * hq);
                for (int r = q + 1; r < m; ++r) {
                    const double hr = step[static_cast<std::size_t>(vars[static_cast<std::size_t>(r)].first)];
                    Vec a = z0, b = z0, c = z0, d = z0;
                    a[q] += hq, a[r] += hr;
                    b[q] += hq, b[r] -= hr;
                    c[q] -= hq, c[r] += hr;
                    d[q] -= hq, d[r] -= hr;
                    const double h2 = (phi(a) - phi(b) - phi(c) + phi(d)) / (4 * hq * hr);
                    hess(index(q), index(r)) += h2;
                    hess(index(r), index(q)) += h2;
                }
            }
        }
        if (!grad.allFinite() || !hess.allFinite()) return;
        Vec dz;
        for (double mu = 0.0;; mu = mu == 0.0 ? 1e-8 * hess.diagonal().cwiseAbs().maxCoeff() : 10 * mu) {
            Eigen::LDLT<Mat> ldlt(hess + mu * Mat::Identity(dofs, dofs));
            if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
                dz = -ldlt.solve(grad);
                if (dz.allFinite()) break;
            }
            if (mu > 1e12) return;
        }
        bool improved = false;
        double moved = 0.0;
        for (double alpha = 1.0; alpha > 1e-6; alpha *= 0.5) {
            std::vector<Point> q = p;
            for (int i = 1; i <= inner; ++i)
                q[static_cast<std::size_t>(i)] += nu[static_cast<std::size_t>(i)] * (alpha * dz.segment((i - 1) * k, k));
            const double lq = total(q);
            if (lq < len) {
                moved = alpha * dz.cwiseAbs().maxCoeff();
                p = std::move(q);
                len = lq;
                improved = true;
                break;
            }
        }
        if (!improved || moved < 1e-12 * scale) break;
    }
}

}  // namespace

DistanceEstimate lattice_distance(const MetricField& g, const Point& x, const Point& y, int resolution) {
    if (!g.domain().contains(x) || !g.domain().contains(y)) throw DomainError("distance endpoints outside the domain");
    DistanceEstimate out;
    out.resolution = resolution > 0 ? resolution : default_resolution(g.dim());
    if (out.resolution < 3) throw SpecError("lattice resolution must be at least 3");
    if (x == y) {
        out.path = {x, y};
        return out;
    }
    std::vector<Point> path = dijkstra_path(g, x, y, out.resolution, &out.lattice);
    std::vector<Point> poly = resample(path, 8);
    double coarse = kInf, fine = kInf;
    for (int k = 8; k <= 64; k *= 2) {
        if (k > 8) {
            std::vector<Point> finer;
            for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
                finer.push_back(poly[i]);
                finer.push_back(0.5 * (poly[i] + poly[i + 1]));
            }
            finer.push_back(poly.back());
            poly = std::move(finer);
        }
        polish(g, poly);
        coarse = fine;
        fine = polyline_length(g, poly, 2);
    }
    out.upper = fine;
    out.value = fine;
    out.lower = fine - std::fabs(coarse - fine) - 1e-12 * fine;
    out.path = std::move(poly);
    return out;
}

DistanceEstimate fried_distance(const FriedScene& s, const Point& x, const Point& y, int resolution) {
    return lattice_distance(*s.fried, x, y, resolution);
}

std::optional<Vec> two_point_shoot(const MetricField& g, const Point& x, const Point& y, const Vec& w0, double tol) {
    const int n = g.dim();
    if (x == y) return Vec::Zero(n);
    auto endpoint = [&](const Vec& w) -> std::optional<Point> {
        const double len = g_norm(g(x), w);
        if (!(len > 0.0)) return x;
        try {
            const Path p = integrate_geodesic(g, x, w, len, tol);
            if (!p.complete()) return std::nullopt;
            return p.end();
        } catch (const DomainError&) {
            return std::nullopt;
        }
    };
    Vec w = w0;
    const double target = 1e-10 * (1.0 + y.norm());
    for (int it = 0; it < 20; ++it) {
        const auto e = endpoint(w);
        if (!e) return std::nullopt;
        const Vec r = *e - y;
        if (r.norm() <= target) return w;
        Mat jac(n, n);
        const double d = 1e-6 * std::max(1.0, w.norm());
        for (int c = 0; c < n; ++c) {
            Vec wp = w, wm = w;
            wp[c] += d;
            wm[c] -= d;
            const auto ep = endpoint(wp), em = endpoint(wm);
            if (!ep || !em) return std::nullopt;
            jac.col(c) = (*ep - *em) / (2 * d);
        }
        w -= jac.fullPivLu().solve(r);
        if (!w.allFinite()) return std::nullopt;
    }
    return std::nullopt;
}

double riemannian_distance(const MetricField& g, const Point& x, const Point& y) {
    if (x == y) return 0.0;
    if (g.is_constant()) return g_norm(g.eval(x), y - x);
    if (const auto w = two_point_shoot(g, x, y, y - x)) return g_norm(g(x), *w);
    return lattice_distance(g, x, y).upper;
}

nlohmann::json FriedBoundReport::to_json() const {
    nlohmann::json j{{"x", finslerlab::to_json(x)},
                     {"y", finslerlab::to_json(y)},
                     {"d", d},
                     {"d_infty", d_infty},
                     {"d_F", d_f.value},
                     {"d_F_bracket", {d_f.lower, d_f.upper}},
                     {"bound_a_margin", bound_a_margin},
                     {"error", error},
                     {"pass", pass}};
    j["bound_b_margin"] = bound_b_margin ? nlohmann::json(*bound_b_margin) : nlohmann::json(nullptr);
    return j;
}

FriedBoundReport fried_bound_check(const FriedScene& s, const Point& x, const Point& y, int resolution, double tol) {
    FriedBoundReport r;
    r.x = x;
    r.y = y;
    r.d_infty = s.profile(x);
    r.d = riemannian_distance(*s.g, x, y);
    r.d_f = fried_distance(s, x, y, resolution);
    const double df = r.d_f.value;
    r.bound_a_margin = r.d_infty * std::expm1(df) - r.d;
    if (r.d < r.d_infty) r.bound_b_margin = r.d + r.d_infty * std::expm1(-df);
    r.error = r.d_infty * std::exp(df) * (r.d_f.upper - r.d_f.lower) + 1e-9 * (r.d + r.d_infty);
    const double allow = std::max(tol, r.error);
    r.pass = r.bound_a_margin >= -allow && (!r.bound_b_margin || *r.bound_b_margin >= -allow);
    return r;
}

Mat brioschi_curvature(const Mat& e, const Mat& f, const Mat& g, double h) {
    const int m = static_cast<int>(e.rows());
    if (m < 3 || e.cols() != m) throw SpecError("curvature grid must be square with at least 3 nodes");
    Mat k(m - 2, m - 2);
    for (int i = 1; i + 1 < m; ++i)
        for (int j = 1; j + 1 < m; ++j) {
            auto du = [&](const Mat& a) { return (a(i + 1, j) - a(i - 1, j)) / (2 * h); };
            auto dv = [&](const Mat& a) { return (a(i, j + 1) - a(i, j - 1)) / (2 * h); };
            auto duu = [&](const Mat& a) { return (a(i + 1, j) - 2 * a(i, j) + a(i - 1, j)) / (h * h); };
            auto dvv = [&](const Mat& a) { return (a(i, j + 1) - 2 * a(i, j) + a(i, j - 1)) / (h * h); };
            auto duv = [&](const Mat& a) {
                return (a(i + 1, j + 1) - a(i + 1, j - 1) - a(i - 1, j + 1) + a(i - 1, j - 1)) / (4 * h * h);
            };
            const double E = e(i, j), F = f(i, j), G = g(i, j);
            Eigen::Matrix3d a, b;
            a << -0.5 * dvv(e) + duv(f) - 0.5 * duu(g), 0.5 * du(e), du(f) - 0.5 * dv(e), dv(f) - 0.5 * du(g), E, F,
                0.5 * dv(g), F, G;
            b << 0.0, 0.5 * dv(e), 0.5 * du(g), 0.5 * dv(e), E, F, 0.5 * du(g), F, G;
            const double w = E * G - F * F;
            k(i - 1, j - 1) = (a.determinant() - b.determinant()) / (w * w);
        }
    return k;
}

nlohmann::json RectangleReport::to_json() const {
    nlohmann::json j{{"x", finslerlab::to_json(x)},
                     {"v1", finslerlab::to_json(v1)},
                     {"v2", finslerlab::to_json(v2)},
                     {"ell", ell},
                     {"degenerate", degenerate},
                     {"inconsistent", inconsistent},
                     {"max_curvature", max_curvature},
                     {"max_distance_excess", max_distance_excess},
                     {"collapse_defect", collapse_defect},
                     {"tol", tol},
                     {"pass", pass}};
    j["d_infty"] = std::isfinite(d_infty) ? nlohmann::json(d_infty) : nlohmann::json("inf");
    if (!message.empty()) j["message"] = message;
    return j;
}

namespace {

struct JacobiNode {
    Point p;
    Vec u;
    Vec j;
};

// Geodesic s -> exp_p(s T) with the Jacobi field J, J(0) = c, (nabla_s J)(0) = 0,
// sampled at s = 0, h, ..., (m-1) h. Empty when the geodesic leaves the domain.
std::vector<JacobiNode> jacobi_column(const MetricField& g, const Point& p, const Vec& t, const Vec& c, int m,
                                      double h) {
    const int n = g.dim();
    const Domain& dom = g.domain();
    auto rhs = [&](double, const Vec& y) -> Vec {
        const Vec x = y.segment(0, n), u = y.segment(n, n), jj = y.segment(2 * n, n), jd = y.segment(3 * n, n);
        if (!dom.contains(x)) throw DomainError("point left the domain");
        const Tensor3 gam = christoffel(g, x);
        Vec out(4 * n);
        Vec dgam = Vec::Zero(n);
        const double jn = jj.norm();
        if (jn > 0.0) {
            const double eps = 1e-6;
            const Vec dir = jj / jn;
            const Tensor3 gp = christoffel(g, x + eps * dir), gm = christoffel(g, x - eps * dir);
            dgam = (gp.contract(u, u) - gm.contract(u, u)) * (jn / (2 * eps));
        }
        out << u, -gam.contract(u, u), jd, -dgam - 2.0 * gam.contract(u, jd);
        return out;
    };
    OdeOptions opt;
    opt.rtol = 1e-12;
    opt.atol = 1e-12;
    opt.h_init = std::min(1e-2, h);
    auto valid = [&](const Vec& a, const Vec& b) { return dom.segment_inside(a.head(n), b.head(n)); };
    Vec y(4 * n);
    y << p, t, c, -christoffel(g, p).contract(t, c);
    std::vector<JacobiNode> out{{p, t, c}};
    for (int k = 1; k < m; ++k) {
        const OdeTrajectory tr = dopri45(rhs, (k - 1) * h, y, k * h, opt, valid);
        if (tr.cause != Termination::Horizon) return {};
        y = tr.y.back();
        out.push_back({y.segment(0, n), y.segment(n, n), y.segment(2 * n, n)});
    }
    return out;
}

}  // namespace

RectangleReport flat_rectangle(const ProductStructure& ps, const Point& x, const Vec& v, double ell,
                               const RectangleOptions& opt) {
    const MetricField& g = *ps.metric();
    const int n = g.dim();
    if (v.size() != n) throw SpecError("rectangle direction has the wrong dimension");
    if (!(ell > 0.0)) throw SpecError("rectangle side must be positive");
    if (opt.grid < 3) throw SpecError("rectangle grid needs at least 3 nodes per side");
    RectangleReport r;
    r.x = x;
    r.ell = ell;
    r.tol = opt.tol;
    r.v1 = ps.restrict_to(v, 0);
    r.v2 = v - r.v1;
    const Mat gx = g(x);
    const double n1 = g_norm(gx, r.v1), n2 = g_norm(gx, r.v2);
    const DInftyEstimate de = opt.profile ? opt.profile->estimate(x) : [&] {
        ShootingOptions so;
        so.directions = 64;
        return estimate_d_infty(g, x, so);
    }();
    r.d_infty = de.found ? de.value : kInf;
    if (ell * g_norm(gx, v) >= r.d_infty)
        throw SpecError("rectangle reaches the boundary: ell |v| = " + fmt(ell * g_norm(gx, v)) +
                        " >= d_infty = " + fmt(r.d_infty));
    r.degenerate = n1 == 0.0 || n2 == 0.0;

    const int m = opt.grid;
    const double h = ell / (m - 1);
    std::vector<Point> gamma(static_cast<std::size_t>(m));
    std::vector<Vec> tang(static_cast<std::size_t>(m)), tv(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        if (i == 0 || n1 == 0.0) {
            gamma[ui] = x;
            tang[ui] = r.v1;
            tv[ui] = r.v2;
            continue;
        }
        const Path p = integrate_geodesic(g, x, r.v1, i * h * n1, 1e-12);
        if (!p.complete()) {
            r.inconsistent = true;
            r.message = "first-block geodesic left the domain";
            return r;
        }
        gamma[ui] = p.end();
        tang[ui] = p.tangents.back();
        tv[ui] = n2 > 0.0 ? parallel_transport(g, p, r.v2, 1e-12) : Vec(r.v2);
    }

    Mat E(m, m), F(m, m), G(m, m);
    r.grid.assign(static_cast<std::size_t>(m), std::vector<Point>(static_cast<std::size_t>(m)));
    for (int i = 0; i < m; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        std::vector<JacobiNode> col;
        if (n2 == 0.0) {
            col.assign(static_cast<std::size_t>(m), {gamma[ui], Vec::Zero(n), tang[ui]});
        } else {
            col = jacobi_column(g, gamma[ui], tv[ui], tang[ui], m, h);
            if (col.empty()) {
                r.inconsistent = true;
                r.message = "grid point left the domain";
                return r;
            }
        }
        for (int j = 0; j < m; ++j) {
            const JacobiNode& nd = col[static_cast<std::size_t>(j)];
            const Mat gp = g.eval(nd.p);
            r.grid[ui][static_cast<std::size_t>(j)] = nd.p;
            E(i, j) = nd.j.dot(gp * nd.j);
            F(i, j) = nd.j.dot(gp * nd.u);
            G(i, j) = nd.u.dot(gp * nd.u);
        }
    }

    if (r.degenerate) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                const Point& ref = n2 == 0.0 ? gamma[static_cast<std::size_t>(i)] : r.grid[0][static_cast<std::size_t>(j)];
                r.collapse_defect =
                    std::max(r.collapse_defect, (r.grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] - ref).norm());
            }
    } else {
        r.max_curvature = brioschi_curvature(E, F, G, h).cwiseAbs().maxCoeff();
    }

    const int stride = std::max(1, opt.distance_stride);
    for (int i = 0; i < m; i += stride)
        for (int j = 0; j < m; j += stride) {
            if (i == 0 && j == 0) continue;
            const double t = i * h, s = j * h;
            const double bound = std::hypot(t * n1, s * n2);
            const Point& y = r.grid[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            double d;
            if (const auto w = two_point_shoot(g, x, y, t * r.v1 + s * r.v2))
                d = g_norm(gx, *w);
            else
                d = lattice_distance(g, x, y).upper;
            r.max_distance_excess = std::max(r.max_distance_excess, d - bound);
        }
    if (r.max_distance_excess == -kInf) r.max_distance_excess = 0.0;
    r.pass = !r.inconsistent && r.max_curvature <= opt.tol && r.max_distance_excess <= opt.tol &&
             r.collapse_defect <= opt.tol;
    return r;
}

nlohmann::json SplitReport::to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points)
        pts.push_back({{"x", finslerlab::to_json(p.x)},
                       {"R1", p.r1},
                       {"R2", p.r2},
                       {"witness_angle", p.witness_angle},
                       {"d_infty", p.d_infty},
                       {"verdict", p.verdict},
                       {"alternative", p.alternative}});
    return {{"points", pts}, {"tol", tol}, {"transversal_deg", transversal_deg}, {"pass", pass}, {"note", note}};
}

std::string SplitReport::to_csv() const {
    std::ostringstream os;
    const int n = points.empty() ? 0 : static_cast<int>(points.front().x.size());
    for (int i = 0; i < n; ++i) os << 'x' << (i + 1) << ',';
    os << "R1,R2,witness_angle,verdict\n";
    for (const auto& p : points) {
        for (int i = 0; i < n; ++i) os << fmt(p.x[i]) << ',';
        os << fmt(p.r1) << ',' << fmt(p.r2) << ',' << fmt(p.witness_angle) << ',' << p.verdict << '\n';
    }
    return os.str();
}

SplitReport splitting_diagnostic(const ProductStructure& ps, const std::vector<Point>& points,
                                 const ShootingOptions& opt, double tol) {
    if (ps.blocks() < 2) throw SpecError("splitting diagnostic needs a product of at least two blocks");
    if (points.empty()) throw SpecError("splitting diagnostic needs sample points");
    const MetricField& g = *ps.metric();
    if (!g.domain().has_boundary()) throw SpecError("splitting diagnostic needs a factor with boundary");
    SplitReport r;
    r.tol = tol;
    r.note = "consistency of the leaf-curvature alternative on a product scene";
    r.pass = true;
    for (const Point& x : points) {
        SplitPoint sp;
        sp.x = x;
        const std::vector<double> rs = leaf_curvature_norms(ps, x);
        sp.r1 = rs[0];
        sp.r2 = *std::max_element(rs.begin() + 1, rs.end());
        const DInftyEstimate de = estimate_d_infty(g, x, opt);
        if (!de.found) throw NumericError("no escape witness found at " + finslerlab::to_json(x).dump());
        sp.d_infty = de.value;
        const Mat gx = g(x);
        const double w1 = g_norm(gx, ps.restrict_to(de.witness, 0)), w = g_norm(gx, de.witness);
        sp.witness_angle = std::acos(std::clamp(w1 / w, 0.0, 1.0)) * 180.0 / std::numbers::pi;
        const bool trans1 = sp.witness_angle > r.transversal_deg;
        const bool trans2 = 90.0 - sp.witness_angle > r.transversal_deg;
        const bool z1 = sp.r1 <= tol, z2 = sp.r2 <= tol;
        sp.verdict = (!trans1 || z1) && (!trans2 || z2) ? "consistent" : "violated";
        sp.alternative = z1 && z2 ? "both" : z1 ? "R1=0" : z2 ? "R2=0" : "neither";
        if (sp.verdict != "consistent") r.pass = false;
        r.points.push_back(sp);
    }
    return r;
}

nlohmann::json LeafProbe::to_json() const {
    return {{"stayed", stayed}, {"max_R1", max_r1}, {"d_infty_spread", d_infty_spread}};
}

LeafProbe leaf_completeness_probe(const ProductStructure& ps, const Point& x, const Vec& u, double horizon,
                                  const ShootingOptions& opt, int d_samples) {
    const MetricField& g = *ps.metric();
    const Vec u1 = ps.restrict_to(u, 0);
    if (u1.norm() == 0.0) throw SpecError("leaf probe needs a direction in the first block");
    LeafProbe r;
    const Path p = integrate_geodesic(g, x, u1, horizon, 1e-10);
    r.stayed = p.complete();
    const std::size_t m = p.points.size();
    const std::size_t stride = std::max<std::size_t>(1, m / 64);
    for (std::size_t k = 0; k < m; k += stride) r.max_r1 = std::max(r.max_r1, leaf_curvature_norms(ps, p.points[k])[0]);
    double lo = kInf, hi = -kInf;
    for (int k = 0; k < d_samples; ++k) {
        const double s = d_samples > 1 ? p.t.back() * k / (d_samples - 1) : 0.0;
        const auto it = std::lower_bound(p.t.begin(), p.t.end(), s);
        const std::size_t idx = std::min(m - 1, static_cast<std::size_t>(it - p.t.begin()));
        const DInftyEstimate de = estimate_d_infty(g, p.points[idx], opt);
        if (!de.found) {
            r.d_infty_spread = kInf;
            return r;
        }
        lo = std::min(lo, de.value);
        hi = std::max(hi, de.value);
    }
    r.d_infty_spread = hi - lo;
    return r;
}

}  // namespace finslerlab
