#include "finslerlab/transport.hpp"

#include "finslerlab/error.hpp"
#include "finslerlab/parallel.hpp"
#include "finslerlab/random.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

namespace finslerlab {

namespace {

// (Gamma(u, V))^k_c = Gamma^k_ij u^i V^j_c
Mat contract_cols(const Tensor3& gam, const Vec& u, const Mat& v) {
    const int n = gam.dim();
    Mat out = Mat::Zero(n, v.cols());
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i) {
            if (u[i] == 0.0) continue;
            for (int j = 0; j < n; ++j) {
                const double c = gam(k, i, j) * u[i];
                if (c != 0.0) out.row(k) += c * v.row(j);
            }
        }
    return out;
}

Tensor3 christoffel_inside(const MetricField& g, const Point& x) {
    if (!g.domain().contains(x)) throw DomainError("point left the domain");
    return christoffel(g, x);
}

double g_norm(const Mat& g, const Vec& v) { return std::sqrt(std::max(0.0, v.dot(g * v))); }

// 8-point Gauss-Legendre on [0, 1]
constexpr double kGx[8] = {0.019855071751231856, 0.10166676129318664, 0.2372337950418355, 0.4082826787521751,
                           0.5917173212478249,   0.7627662049581645,  0.8983332387068134, 0.9801449282487681};
constexpr double kGw[8] = {0.05061426814518813, 0.11119051722668724, 0.15685332293894363, 0.18134189168918100,
                           0.18134189168918100, 0.15685332293894363, 0.11119051722668724, 0.05061426814518813};

OdeOptions ode_options(double tol) {
    OdeOptions o;
    o.rtol = tol;
    o.atol = tol;
    return o;
}

}  // namespace

Segment straight_segment(const Point& a, const Point& b) {
    const Vec d = b - a;
    return Segment{[a, d](double t) -> Point { return a + t * d; }, [d](double) -> Vec { return d; }, 0.0, 1.0};
}

nlohmann::json Path::to_json() const {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : points) pts.push_back(finslerlab::to_json(p));
    return {{"kind", kind},
            {"arclength", arclength},
            {"termination", to_string(cause)},
            {"start", finslerlab::to_json(start())},
            {"end", finslerlab::to_json(end())},
            {"samples", static_cast<int>(points.size())},
            {"speed_drift", speed_drift}};
}

Path integrate_geodesic(const MetricField& g, const Point& x, const Vec& v, double horizon, double tol) {
    const int n = g.dim();
    const Mat g0 = g(x);
    const double speed = g_norm(g0, v);
    if (!(speed > 0.0)) throw DomainError("geodesic needs a nonzero initial velocity");
    Vec y0(2 * n);
    y0 << x, v;
    auto rhs = [&](double, const Vec& y) -> Vec {
        const Vec p = y.head(n), u = y.tail(n);
        Vec out(2 * n);
        out << u, -christoffel_inside(g, p).contract(u, u);
        return out;
    };
    auto valid = [&](const Vec& a, const Vec& b) { return g.domain().segment_inside(a.head(n), b.head(n)); };
    const double t1 = horizon / speed;
    OdeOptions opt = ode_options(tol);
    opt.h_init = std::min(1e-2, t1);
    const OdeTrajectory tr = dopri45(rhs, 0.0, y0, t1, opt, valid);

    Path p;
    p.kind = "geodesic";
    p.x0 = x;
    p.v0 = v;
    p.speed = speed;
    p.horizon = horizon;
    p.cause = tr.cause;
    p.t_end = tr.t.back();
    p.arclength = speed * p.t_end;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        p.t.push_back(tr.t[k]);
        p.points.push_back(tr.y[k].head(n));
        p.tangents.push_back(tr.y[k].tail(n));
    }
    const std::size_t stride = std::max<std::size_t>(1, p.points.size() / 32);
    for (std::size_t k = 0; k < p.points.size(); k += stride) {
        const double s = g_norm(g(p.points[k]), p.tangents[k]);
        p.speed_drift = std::max(p.speed_drift, std::fabs(s - speed) / speed);
    }
    return p;
}

Path curve_path(const MetricField& g, std::vector<Segment> segments, int samples_per_segment) {
    Path p;
    p.kind = "curve";
    p.cause = Termination::Horizon;
    double t_offset = 0.0;
    bool exited = false;
    for (const auto& s : segments) {
        for (int k = 0; k <= samples_per_segment && !exited; ++k) {
            if (k == 0 && !p.points.empty()) continue;
            const double t = s.t0 + (s.t1 - s.t0) * k / samples_per_segment;
            const Point x = s.x(t);
            if (!g.domain().contains(x)) {
                exited = true;
                break;
            }
            p.t.push_back(t_offset + t - s.t0);
            p.points.push_back(x);
            p.tangents.push_back(s.dx(t));
        }
        if (exited) break;
        // g-length on 16 sub-intervals
        const int sub = 16;
        const double h = (s.t1 - s.t0) / sub;
        for (int i = 0; i < sub && !exited; ++i)
            for (int q = 0; q < 8; ++q) {
                const double t = s.t0 + (i + kGx[q]) * h;
                const Point x = s.x(t);
                if (!g.domain().contains(x)) {
                    exited = true;
                    break;
                }
                p.arclength += kGw[q] * h * g_norm(g(x), s.dx(t));
            }
        t_offset += s.t1 - s.t0;
    }
    if (exited) p.cause = Termination::DomainExit;
    p.t_end = t_offset;
    if (p.points.empty()) throw DomainError("curve starts outside the domain");
    p.segments = std::move(segments);
    return p;
}

Path polygon_path(const MetricField& g, const std::vector<Point>& vertices, bool closed) {
    std::vector<Segment> segs;
    for (std::size_t k = 0; k + 1 < vertices.size(); ++k) segs.push_back(straight_segment(vertices[k], vertices[k + 1]));
    if (closed && vertices.size() > 1) segs.push_back(straight_segment(vertices.back(), vertices.front()));
    return curve_path(g, std::move(segs));
}

Path spline_path(const MetricField& g, const std::vector<Point>& nodes) {
    const std::size_t m = nodes.size();
    if (m < 2) throw SpecError("a spline path needs at least two nodes");
    std::vector<Vec> tan(m);
    for (std::size_t k = 0; k < m; ++k) {
        if (k == 0) tan[k] = nodes[1] - nodes[0];
        else if (k + 1 == m) tan[k] = nodes[m - 1] - nodes[m - 2];
        else tan[k] = 0.5 * (nodes[k + 1] - nodes[k - 1]);
    }
    std::vector<Segment> segs;
    for (std::size_t k = 0; k + 1 < m; ++k) {
        const Vec p0 = nodes[k], p1 = nodes[k + 1], m0 = tan[k], m1 = tan[k + 1];
        segs.push_back(Segment{[=](double u) -> Point {
                                   const double u2 = u * u, u3 = u2 * u;
                                   return (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 + (-2 * u3 + 3 * u2) * p1 +
                                          (u3 - u2) * m1;
                               },
                               [=](double u) -> Vec {
                                   const double u2 = u * u;
                                   return (6 * u2 - 6 * u) * p0 + (3 * u2 - 4 * u + 1) * m0 + (-6 * u2 + 6 * u) * p1 +
                                          (3 * u2 - 2 * u) * m1;
                               },
                               0.0, 1.0});
    }
    return curve_path(g, std::move(segs));
}

Path Path::reversed() const {
    Path r = *this;
    std::reverse(r.points.begin(), r.points.end());
    std::reverse(r.tangents.begin(), r.tangents.end());
    for (auto& v : r.tangents) v = -v;
    for (auto& s : r.t) s = t_end - s;
    std::reverse(r.t.begin(), r.t.end());
    if (kind == "geodesic") {
        // the reverse of a geodesic is the geodesic from its end with the
        // reversed end velocity
        r.x0 = points.back();
        r.v0 = -tangents.back();
        r.horizon = arclength;
        return r;
    }
    r.segments.clear();
    for (auto it = segments.rbegin(); it != segments.rend(); ++it) {
        const Segment s = *it;
        r.segments.push_back(Segment{[s](double t) -> Point { return s.x(s.t0 + s.t1 - t); },
                                     [s](double t) -> Vec { return -s.dx(s.t0 + s.t1 - t); }, s.t0, s.t1});
    }
    return r;
}

Mat transport_matrix(const MetricField& g, const Path& p, const Mat& vs, double tol) {
    if (!p.complete()) throw NumericError("path terminated by domain exit before its declared end");
    const int n = g.dim();
    const int k = static_cast<int>(vs.cols());
    const OdeOptions opt = ode_options(tol);
    if (p.kind == "geodesic") {
        Vec y0(2 * n + n * k);
        y0 << p.x0, p.v0, Eigen::Map<const Vec>(vs.data(), n * k);
        auto rhs = [&](double, const Vec& y) -> Vec {
            const Vec x = y.head(n), u = y.segment(n, n);
            const Tensor3 gam = christoffel_inside(g, x);
            const Eigen::Map<const Mat> v(y.data() + 2 * n, n, k);
            Vec out(2 * n + n * k);
            const Mat dv = -contract_cols(gam, u, v);
            out << u, -gam.contract(u, u), Eigen::Map<const Vec>(dv.data(), n * k);
            return out;
        };
        const OdeTrajectory tr = dopri45(rhs, 0.0, y0, p.t_end, opt);
        if (tr.cause != Termination::Horizon) throw NumericError("transport integration stopped early: " + to_string(tr.cause));
        return Eigen::Map<const Mat>(tr.y.back().data() + 2 * n, n, k);
    }
    Vec y = Eigen::Map<const Vec>(vs.data(), n * k);
    for (const auto& s : p.segments) {
        auto rhs = [&](double t, const Vec& yy) -> Vec {
            const Tensor3 gam = christoffel_inside(g, s.x(t));
            const Eigen::Map<const Mat> v(yy.data(), n, k);
            const Mat dv = -contract_cols(gam, s.dx(t), v);
            return Eigen::Map<const Vec>(dv.data(), n * k);
        };
        OdeOptions o = opt;
        o.h_init = std::min(1e-2, s.t1 - s.t0);
        const OdeTrajectory tr = dopri45(rhs, s.t0, y, s.t1, o);
        if (tr.cause != Termination::Horizon) throw NumericError("transport integration stopped early: " + to_string(tr.cause));
        y = tr.y.back();
    }
    return Eigen::Map<const Mat>(y.data(), n, k);
}

Vec parallel_transport(const MetricField& g, const Path& p, const Vec& v, double tol) {
    return transport_matrix(g, p, Mat(v), tol).col(0);
}

nlohmann::json BerwaldReport::to_json() const {
    nlohmann::json j = {{"max_defect", max_defect},
                        {"tol", tol},
                        {"pass", pass},
                        {"paths", paths},
                        {"geodesic_paths", geodesic_paths},
                        {"curve_paths", curve_paths},
                        {"skipped", skipped}};
    if (!witness_kind.empty())
        j["witness"] = {{"kind", witness_kind},
                        {"start", finslerlab::to_json(witness_start)},
                        {"end", finslerlab::to_json(witness_end)},
                        {"vector", finslerlab::to_json(witness_vector)}};
    return j;
}

namespace {

struct TransportSample {
    bool ok = false;
    int skipped = 0;
    std::string kind;
    Point start, end;
    Mat v, pv;
};

// Path i uses its own substream, so the sample set does not depend on threads.
std::vector<TransportSample> sample_transports(const MetricField& g, const PathSampleSpec& spec) {
    const int n = g.dim();
    std::vector<TransportSample> out(static_cast<std::size_t>(spec.paths));
    parallel_for(out.size(), [&](std::size_t i) {
        Rng rng(substream(substream(spec.seed, "transport-paths"), static_cast<std::uint64_t>(i)));
        const bool geo = (static_cast<double>(i) + 0.5) / spec.paths < spec.geodesic_fraction;
        TransportSample& s = out[i];
        s.kind = geo ? "geodesic" : "curve";
        for (int attempt = 0; attempt < 40 && !s.ok; ++attempt) {
            Point x = sample_domain(g.domain(), rng, spec.spread);
            if (g.domain().margin(x) < spec.min_margin) {
                ++s.skipped;
                continue;
            }
            Path p;
            try {
                if (geo) {
                    Vec u = rng.normal_vector(n);
                    u /= g_norm(g(x), u);
                    p = integrate_geodesic(g, x, u, spec.length * rng.uniform(0.5, 1.5), spec.ode_tol);
                } else {
                    std::vector<Point> nodes{x};
                    for (int k = 0; k < 3; ++k)
                        nodes.push_back(nodes.back() + (spec.length / 3.0) * rng.uniform(0.5, 1.5) * rng.unit_vector(n));
                    p = spline_path(g, nodes);
                }
            } catch (const DomainError&) {
                ++s.skipped;
                continue;
            }
            if (!p.complete()) {
                ++s.skipped;
                continue;
            }
            s.v = Mat(n, spec.vectors);
            for (int c = 0; c < spec.vectors; ++c) s.v.col(c) = rng.normal_vector(n);
            try {
                s.pv = transport_matrix(g, p, s.v, spec.ode_tol);
            } catch (const Error&) {
                ++s.skipped;
                continue;
            }
            s.start = p.start();
            s.end = p.end();
            s.ok = true;
        }
    });
    return out;
}

BerwaldReport finsler_defects(const FinslerField& f, const std::vector<TransportSample>& ts, double tol) {
    BerwaldReport r;
    r.tol = tol;
    for (const auto& s : ts) {
        r.skipped += s.skipped;
        if (!s.ok) {
            r.defects.push_back(-1.0);
            continue;
        }
        ++r.paths;
        (s.kind == "geodesic" ? r.geodesic_paths : r.curve_paths)++;
        const NormPtr a = f.fiber(s.start), b = f.fiber(s.end);
        double worst = 0.0;
        for (int c = 0; c < s.v.cols(); ++c) {
            const double f0 = (*a)(s.v.col(c));
            const double d = std::fabs((*b)(s.pv.col(c)) - f0) / f0;
            worst = std::max(worst, d);
            if (d > r.max_defect || r.witness_kind.empty()) {
                r.max_defect = std::max(r.max_defect, d);
                r.witness_kind = s.kind;
                r.witness_start = s.start;
                r.witness_end = s.end;
                r.witness_vector = s.v.col(c);
            }
        }
        r.defects.push_back(worst);
    }
    r.pass = r.paths > 0 && r.max_defect <= tol;
    return r;
}

}  // namespace

BerwaldReport berwald_check(const FinslerField& f, const MetricField& g, const PathSampleSpec& spec, double tol) {
    if (f.dim() != g.dim()) throw SpecError("Finsler field and metric have different dimensions");
    return finsler_defects(f, sample_transports(g, spec), tol);
}

nlohmann::json CanonicalReport::to_json() const {
    return {{"finsler", finsler.to_json()}, {"metric_defect", metric_defect}, {"tol", tol}, {"pass", pass}};
}

CanonicalReport canonical_connection_check(FinslerPtr f, const BLIntegrator& integ, const PathSampleSpec& spec,
                                           double tol) {
    const MetricPtr g = bl_field(f, integ);
    const auto ts = sample_transports(*g, spec);
    CanonicalReport r;
    r.tol = tol;
    r.finsler = finsler_defects(*f, ts, tol);
    for (const auto& s : ts) {
        if (!s.ok) continue;
        const Mat ga = (*g)(s.start), gb = (*g)(s.end);
        for (int c = 0; c < s.v.cols(); ++c) {
            const double a = g_norm(ga, s.v.col(c));
            r.metric_defect = std::max(r.metric_defect, std::fabs(g_norm(gb, s.pv.col(c)) - a) / a);
        }
    }
    r.pass = r.finsler.pass && r.metric_defect <= tol;
    return r;
}

nlohmann::json HolonomySample::to_json() const {
    nlohmann::json loops_j = nlohmann::json::array();
    for (const auto& l : loops)
        loops_j.push_back({{"loop", l.descriptor},
                           {"matrix", finslerlab::to_json(l.matrix)},
                           {"orthogonality_defect", l.orthogonality_defect}});
    return {{"point", finslerlab::to_json(x)},
            {"frame", columns_to_json(frame)},
            {"loops", loops_j},
            {"max_orthogonality_defect", max_orthogonality_defect}};
}

HolonomySample holonomy_generators(const MetricField& g, const Point& x, const LoopSpec& spec) {
    const int n = g.dim();
    HolonomySample hs;
    hs.x = x;
    hs.frame = orthonormal_frame(g(x));
    const double ref = std::min(g.domain().margin(x), 1.0);
    struct Loop {
        std::string name;
        std::vector<Point> vertices;
    };
    std::vector<Loop> loops;
    for (double s : spec.scales) {
        const double h = s * ref;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                Vec ei = Vec::Zero(n), ej = Vec::Zero(n);
                ei[i] = h;
                ej[j] = h;
                char name[64];
                std::snprintf(name, sizeof name, "rect(%d,%d,%g)", i + 1, j + 1, s);
                loops.push_back({name, {x, x + ei, x + ei + ej, x + ej}});
            }
    }
    Rng rng(substream(spec.seed, "holonomy-triangles"));
    for (int t = 0; t < spec.triangles; ++t) {
        const double h = ref * rng.uniform(0.01, 0.1);
        const Vec a = rng.unit_vector(n), b = rng.unit_vector(n);
        loops.push_back({"tri" + std::to_string(t), {x, x + h * a, x + h * b}});
    }
    hs.loops.resize(loops.size());
    const Mat e = hs.frame;
    const Mat e_inv = e.inverse();
    parallel_for(loops.size(), [&](std::size_t k) {
        const Path p = polygon_path(g, loops[k].vertices, true);
        if (!p.complete()) throw DomainError("holonomy loop " + loops[k].name + " exits the domain");
        const Mat t = transport_matrix(g, p, e, spec.ode_tol);
        HolonomyLoop& l = hs.loops[k];
        l.descriptor = loops[k].name;
        l.matrix = e_inv * t;
        l.orthogonality_defect = max_abs(l.matrix.transpose() * l.matrix - Mat::Identity(n, n));
    });
    for (const auto& l : hs.loops) hs.max_orthogonality_defect = std::max(hs.max_orthogonality_defect, l.orthogonality_defect);
    return hs;
}

std::vector<int> HolonomyDecomposition::dims() const {
    std::vector<int> d;
    for (const auto& s : subspaces) d.push_back(s.dim);
    return d;
}

Mat HolonomyDecomposition::chart_basis(int i) const { return frame * subspaces.at(static_cast<std::size_t>(i)).basis; }

nlohmann::json HolonomyDecomposition::to_json() const {
    nlohmann::json subs = nlohmann::json::array();
    for (std::size_t i = 0; i < subspaces.size(); ++i)
        subs.push_back({{"index", i},
                        {"dim", subspaces[i].dim},
                        {"basis", columns_to_json(subspaces[i].basis)},
                        {"chart_basis", columns_to_json(chart_basis(static_cast<int>(i)))}});
    return {{"point", finslerlab::to_json(x)},
            {"frame", columns_to_json(frame)},
            {"dims", dims()},
            {"subspaces", subs},
            {"block_defect", block_defect},
            {"v0_defect", v0_defect},
            {"warnings", warnings}};
}

HolonomyDecomposition invariant_decomposition(const HolonomySample& hs, double tol, std::uint64_t seed) {
    if (hs.loops.empty()) throw SpecError("invariant decomposition needs at least one holonomy matrix");
    const int n = static_cast<int>(hs.frame.rows());
    HolonomyDecomposition dec;
    dec.x = hs.x;
    dec.frame = hs.frame;

    std::vector<Mat> gens;
    for (const auto& l : hs.loops) {
        const Mat d = l.matrix - Mat::Identity(n, n);
        const double s = d.norm();
        if (s > 1e-9) gens.push_back(d / s);
    }

    Mat v0, comp;
    if (gens.empty()) {
        v0 = Mat::Identity(n, n);
        comp = Mat(n, 0);
    } else {
        Mat a(static_cast<Eigen::Index>(gens.size()) * n, n);
        for (std::size_t k = 0; k < gens.size(); ++k) a.middleRows(static_cast<Eigen::Index>(k) * n, n) = gens[k];
        Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullV);
        const Vec& s = svd.singularValues();
        const double thr = tol * std::sqrt(static_cast<double>(gens.size()));
        std::vector<int> null_idx, range_idx;
        for (int i = 0; i < n; ++i) {
            const double si = i < s.size() ? s[i] : 0.0;
            (si <= thr ? null_idx : range_idx).push_back(i);
            if (si > thr && si < 1e3 * thr)
                dec.warnings.push_back("trivial-action factor: singular value " + std::to_string(si) + " close to the threshold");
        }
        v0 = Mat(n, static_cast<Eigen::Index>(null_idx.size()));
        comp = Mat(n, static_cast<Eigen::Index>(range_idx.size()));
        for (std::size_t i = 0; i < null_idx.size(); ++i) v0.col(static_cast<Eigen::Index>(i)) = svd.matrixV().col(null_idx[i]);
        for (std::size_t i = 0; i < range_idx.size(); ++i) comp.col(static_cast<Eigen::Index>(i)) = svd.matrixV().col(range_idx[i]);
    }
    dec.subspaces.push_back(Subspace{static_cast<int>(v0.cols()), v0, 1.0});

    const int k = static_cast<int>(comp.cols());
    if (k > 0) {
        // symmetric X with X M = M X for the generators restricted to the complement
        std::vector<std::pair<int, int>> basis;
        for (int p = 0; p < k; ++p)
            for (int q = p; q < k; ++q) basis.emplace_back(p, q);
        const int nb = static_cast<int>(basis.size());
        Mat sys(static_cast<Eigen::Index>(gens.size()) * k * k, nb);
        for (std::size_t a = 0; a < gens.size(); ++a) {
            const Mat m = comp.transpose() * gens[a] * comp;
            for (int b = 0; b < nb; ++b) {
                Mat e = Mat::Zero(k, k);
                e(basis[b].first, basis[b].second) = e(basis[b].second, basis[b].first) = 1.0;
                const Mat c = e * m - m * e;
                sys.block(static_cast<Eigen::Index>(a) * k * k, b, k * k, 1) = Eigen::Map<const Vec>(c.data(), k * k);
            }
        }
        Eigen::JacobiSVD<Mat> svd(sys, Eigen::ComputeFullV);
        const Vec& s = svd.singularValues();
        const double thr = tol * std::max(1.0, s.size() > 0 ? s[0] : 0.0);
        Rng rng(substream(seed, "commutant"));
        Mat x = Mat::Zero(k, k);
        for (int i = 0; i < nb; ++i) {
            const double si = i < s.size() ? s[i] : 0.0;
            if (si > thr) {
                if (si < 1e3 * thr) dec.warnings.push_back("commutant: singular value " + std::to_string(si) + " close to the threshold");
                continue;
            }
            const double c = rng.normal();
            for (int b = 0; b < nb; ++b) {
                const double w = c * svd.matrixV()(b, i);
                x(basis[b].first, basis[b].second) += w;
                if (basis[b].first != basis[b].second) x(basis[b].second, basis[b].first) += w;
            }
        }
        Eigen::SelfAdjointEigenSolver<Mat> es(x);
        const Vec& lam = es.eigenvalues();
        const double spread = std::max(1.0, lam.size() > 0 ? lam[lam.size() - 1] - lam[0] : 0.0);
        std::vector<Subspace> blocks;
        int start = 0;
        for (int i = 1; i <= k; ++i) {
            const bool cut = i == k || lam[i] - lam[i - 1] > tol * spread;
            if (i < k && lam[i] - lam[i - 1] > tol * spread && lam[i] - lam[i - 1] < 1e3 * tol * spread)
                dec.warnings.push_back("commutant eigenvalue gap " + std::to_string(lam[i] - lam[i - 1]) + " close to the tolerance");
            if (!cut) continue;
            Subspace sub;
            sub.dim = i - start;
            sub.basis = comp * es.eigenvectors().middleCols(start, i - start);
            sub.eigenvalue = lam.segment(start, i - start).mean();
            blocks.push_back(sub);
            start = i;
        }
        std::stable_sort(blocks.begin(), blocks.end(), [](const Subspace& a, const Subspace& b) {
            return a.dim != b.dim ? a.dim < b.dim : a.eigenvalue < b.eigenvalue;
        });
        for (auto& b : blocks) dec.subspaces.push_back(std::move(b));
    }

    // defects of the block model over every sampled matrix
    Mat all(n, n);
    std::vector<int> owner(static_cast<std::size_t>(n));
    int col = 0;
    for (std::size_t i = 0; i < dec.subspaces.size(); ++i)
        for (int c = 0; c < dec.subspaces[i].dim; ++c) {
            all.col(col) = dec.subspaces[i].basis.col(c);
            owner[static_cast<std::size_t>(col++)] = static_cast<int>(i);
        }
    for (const auto& l : hs.loops) {
        const Mat h = all.transpose() * l.matrix * all;
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < n; ++c) {
                if (owner[static_cast<std::size_t>(r)] != owner[static_cast<std::size_t>(c)])
                    dec.block_defect = std::max(dec.block_defect, std::fabs(h(r, c)));
                else if (owner[static_cast<std::size_t>(r)] == 0)
                    dec.v0_defect = std::max(dec.v0_defect, std::fabs(h(r, c) - (r == c ? 1.0 : 0.0)));
            }
    }
    return dec;
}

double decomposition_distance(const HolonomyDecomposition& a, const HolonomyDecomposition& b) {
    if (a.dims() != b.dims()) return kInf;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.subspaces.size(); ++i)
        worst = std::max(worst, max_principal_angle(a.chart_basis(static_cast<int>(i)), b.chart_basis(static_cast<int>(i))));
    return worst;
}

namespace {

class HolonomyInvariantFinsler : public FinslerField {
public:
    HolonomyInvariantFinsler(MetricPtr g, Point x0, std::vector<Mat> bases, NormPtr n)
        : FinslerField(g->domain()), g_(std::move(g)), x0_(std::move(x0)), bases_(std::move(bases)), n_(std::move(n)) {
        for (const auto& b : bases_) cols_ += static_cast<int>(b.cols());
    }

    NormPtr fiber(const Point& x) const override {
        std::vector<Mat> w = transported(x);
        const Mat gx = (*g_)(x);
        for (auto& b : w) b = b.transpose() * gx;
        const NormPtr n = n_;
        return std::make_shared<CallbackNorm>(dim(), n->declared_reversible(), [w, n](std::span<const double> v) {
            const Eigen::Map<const Vec> vv(v.data(), static_cast<Eigen::Index>(v.size()));
            Vec parts(static_cast<Eigen::Index>(w.size()));
            for (std::size_t i = 0; i < w.size(); ++i) parts[static_cast<Eigen::Index>(i)] = (w[i] * vv).norm();
            return (*n)(parts);
        });
    }

    std::vector<Mat> transported(const Point& x) const {
        const int n = dim();
        Mat all(n, cols_);
        int c = 0;
        for (const auto& b : bases_) {
            all.middleCols(c, b.cols()) = b;
            c += static_cast<int>(b.cols());
        }
        Mat t = all;
        if ((x - x0_).norm() > 0.0) {
            const Path p = polygon_path(*g_, {x0_, x}, false);
            if (!p.complete()) throw DomainError("transport failure: segment from the base point leaves the domain");
            t = transport_matrix(*g_, p, all, 1e-12);
        }
        std::vector<Mat> out;
        c = 0;
        for (const auto& b : bases_) {
            out.push_back(t.middleCols(c, b.cols()));
            c += static_cast<int>(b.cols());
        }
        return out;
    }

private:
    MetricPtr g_;
    Point x0_;
    std::vector<Mat> bases_;
    NormPtr n_;
    int cols_ = 0;
};

}  // namespace

FinslerPtr holonomy_invariant_finsler(MetricPtr g, const HolonomyDecomposition& dec, NormPtr n) {
    std::vector<Mat> bases;
    std::vector<int> dims, index;
    for (std::size_t i = 0; i < dec.subspaces.size(); ++i) {
        if (dec.subspaces[i].dim == 0) continue;
        bases.push_back(dec.chart_basis(static_cast<int>(i)));
        dims.push_back(dec.subspaces[i].dim);
        index.push_back(static_cast<int>(i));
    }
    if (n->dim() != static_cast<int>(bases.size()))
        throw SpecError("norm dimension " + std::to_string(n->dim()) + " does not match the " +
                        std::to_string(bases.size()) + " non-empty invariant subspaces");
    // N must be symmetric in the coordinates of equal-dimension factors V_i, V_j (i, j > 0)
    Rng rng(substream(0, "holonomy-norm-symmetry"));
    for (std::size_t a = 0; a < bases.size(); ++a)
        for (std::size_t b = a + 1; b < bases.size(); ++b) {
            if (index[a] == 0 || dims[a] != dims[b]) continue;
            for (int t = 0; t < 200; ++t) {
                Vec v = rng.normal_vector(n->dim()).cwiseAbs();
                Vec w = v;
                std::swap(w[static_cast<Eigen::Index>(a)], w[static_cast<Eigen::Index>(b)]);
                const double fv = (*n)(v), fw = (*n)(w);
                if (std::fabs(fv - fw) > 1e-9 * std::max(1.0, fv))
                    throw SpecError("norm is not symmetric under exchanging the coordinates of invariant subspaces " +
                                    std::to_string(index[a]) + " and " + std::to_string(index[b]));
            }
        }
    return std::make_shared<HolonomyInvariantFinsler>(std::move(g), dec.x, std::move(bases), std::move(n));
}

}  // namespace finslerlab
