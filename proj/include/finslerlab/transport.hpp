#pragma once

#include "finslerlab/binet_legendre.hpp"
#include "finslerlab/norms.hpp"
#include "finslerlab/ode.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace finslerlab {

// One smooth piece x(t), t in [t0, t1], with its velocity.
struct Segment {
    std::function<Point(double)> x;
    std::function<Vec(double)> dx;
    double t0 = 0.0;
    double t1 = 1.0;
};

Segment straight_segment(const Point& a, const Point& b);

class Path {
public:
    std::vector<double> t;
    std::vector<Point> points;
    std::vector<Vec> tangents;
    double arclength = 0.0;
    Termination cause = Termination::Horizon;
    std::string kind;  // "geodesic" or "curve"

    // geodesics: initial data and the parameter reached
    Point x0;
    Vec v0;
    double t_end = 0.0;
    double horizon = 0.0;
    double speed = 0.0;        // |v0|_g
    double speed_drift = 0.0;  // max relative change of |x'|_g at the steps

    // curves: consecutive smooth pieces
    std::vector<Segment> segments;

    bool complete() const { return cause == Termination::Horizon; }
    const Point& start() const { return points.front(); }
    const Point& end() const { return points.back(); }
    // Traversed backwards; a geodesic is re-integrated from its end point.
    Path reversed() const;
    nlohmann::json to_json() const;
};

Path integrate_geodesic(const MetricField& g, const Point& x, const Vec& v, double horizon, double tol = 1e-11);

// Path through smooth pieces; records g-arclength and marks DomainExit if a
// sample point leaves the domain.
Path curve_path(const MetricField& g, std::vector<Segment> segments, int samples_per_segment = 16);
Path polygon_path(const MetricField& g, const std::vector<Point>& vertices, bool closed);
// C1 cubic Hermite spline through the nodes with Catmull-Rom tangents.
Path spline_path(const MetricField& g, const std::vector<Point>& nodes);

// Parallel transport of the columns of `vs` from the start to the end of the
// path. Throws NumericError when the path stopped before its declared end.
Mat transport_matrix(const MetricField& g, const Path& p, const Mat& vs, double tol = 1e-11);
Vec parallel_transport(const MetricField& g, const Path& p, const Vec& v, double tol = 1e-11);

struct PathSampleSpec {
    int paths = 50;
    int vectors = 3;
    double length = 1.0;             // typical g-length (geodesics) or chart length (curves)
    double geodesic_fraction = 0.5;  // rest are C1 splines through random nodes
    std::uint64_t seed = 0;
    double min_margin = 0.25;        // chart distance of start points from the domain edge
    double spread = 1.0;
    double ode_tol = 1e-9;
};

struct BerwaldReport {
    double max_defect = 0.0;
    double tol = 0.0;
    bool pass = false;
    int paths = 0;
    int geodesic_paths = 0;
    int curve_paths = 0;
    int skipped = 0;
    std::string witness_kind;
    Point witness_start;
    Point witness_end;
    Vec witness_vector;
    std::vector<double> defects;  // per path

    nlohmann::json to_json() const;
};

// max over sampled paths and vectors of |F(end, P v) - F(start, v)| / F(start, v),
// transport in the Levi-Civita connection of g.
BerwaldReport berwald_check(const FinslerField& f, const MetricField& g, const PathSampleSpec& spec, double tol);

struct CanonicalReport {
    BerwaldReport finsler;  // F preserved by the BL Levi-Civita transport
    double metric_defect = 0.0;  // g_bl preserved
    double tol = 0.0;
    bool pass = false;
    nlohmann::json to_json() const;
};

CanonicalReport canonical_connection_check(FinslerPtr f, const BLIntegrator& integ, const PathSampleSpec& spec,
                                           double tol);

struct LoopSpec {
    std::vector<double> scales{1e-2, 3e-2, 1e-1};  // fractions of the distance to the domain edge (capped at 1)
    int triangles = 20;
    std::uint64_t seed = 0;
    double ode_tol = 1e-12;
};

struct HolonomyLoop {
    std::string descriptor;
    Mat matrix;  // in the g-orthonormal frame at the base point
    double orthogonality_defect = 0.0;
};

struct HolonomySample {
    Point x;
    Mat frame;  // columns: g-orthonormal frame in chart coordinates
    std::vector<HolonomyLoop> loops;
    double max_orthogonality_defect = 0.0;
    nlohmann::json to_json() const;
};

// Coordinate-plane rectangles at each scale and random chart-straight triangles.
HolonomySample holonomy_generators(const MetricField& g, const Point& x, const LoopSpec& spec);

struct Subspace {
    int dim = 0;
    Mat basis;  // frame coordinates, orthonormal columns
    double eigenvalue = 0.0;
};

struct HolonomyDecomposition {
    Point x;
    Mat frame;
    std::vector<Subspace> subspaces;  // [0] is V0, possibly of dimension 0
    double block_defect = 0.0;        // largest off-block entry over the sampled matrices
    double v0_defect = 0.0;           // largest deviation from Id on V0
    std::vector<std::string> warnings;

    std::vector<int> dims() const;
    // Basis of subspace i in chart coordinates (g-orthonormal columns).
    Mat chart_basis(int i) const;
    nlohmann::json to_json() const;
};

HolonomyDecomposition invariant_decomposition(const HolonomySample& hs, double tol = 1e-6, std::uint64_t seed = 0);

// Largest principal angle between matching subspaces; kInf if the dimensions differ.
double decomposition_distance(const HolonomyDecomposition& a, const HolonomyDecomposition& b);

// F(x, v) = N(|v_0|, ..., |v_m|) over the non-empty subspaces of the
// decomposition, each carried to x by transport along the chart segment from
// the base point.
FinslerPtr holonomy_invariant_finsler(MetricPtr g, const HolonomyDecomposition& dec, NormPtr n);

}  // namespace finslerlab
