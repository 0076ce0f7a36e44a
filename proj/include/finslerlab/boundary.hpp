#pragma once

#include "finslerlab/geometry.hpp"
#include "finslerlab/ode.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace finslerlab {

struct ShootingOptions {
    int directions = 64;
    double horizon = 10.0;  // arclength
    bool refine = true;     // pattern search around the best sampled direction
    double tol = 1e-10;
    std::uint64_t seed = 0;  // only used in dimension >= 4
};

// Upper estimate of the distance to the excluded sets.
struct DInftyEstimate {
    double value = kInf;
    bool found = false;
    Vec witness;          // chart direction, g-unit
    int witness_index = -1;
    Point escape_point;   // where the escape route meets the boundary
    int directions = 0;
    double horizon = 0.0;
    nlohmann::json to_json() const;  // value is the string ">T" when nothing escaped
};

// Quasi-uniform g-unit directions at x; every prefix of the sequence is itself
// quasi-uniform, so sets for increasing M are nested.
std::vector<Vec> shooting_directions(const Mat& g, int m, std::uint64_t seed);

// Shoots geodesics from x. A direction that approaches an excluded set yields
// the arclength to its closest approach plus the g-length of the chart segment
// closing the gap (zero for a geodesic that runs into the set); the estimate is
// the smallest such length within the horizon. The witness is the direction
// with the least s + 10 gap^2 / s (s the arclength), refined by pattern search;
// ties go to the smallest index.
DInftyEstimate estimate_d_infty(const MetricField& g, const Point& x, const ShootingOptions& opt = {});

// g-length of the straight chart segment, Gauss-Legendre on `pieces` pieces.
double segment_length(const MetricField& g, const Point& a, const Point& b, int pieces = 4);

class BoundaryProfile {
public:
    enum class Mode { ClosedForm, Shooting };

    static BoundaryProfile closed_form(ScalarPtr d);
    static BoundaryProfile shooting(MetricPtr g, ShootingOptions opt = {});

    Mode mode() const { return mode_; }
    const ShootingOptions& options() const { return opt_; }
    DInftyEstimate estimate(const Point& x) const;
    // Throws NumericError when no boundary was reached.
    double operator()(const Point& x) const;

private:
    Mode mode_ = Mode::ClosedForm;
    ScalarPtr closed_;
    MetricPtr g_;
    ShootingOptions opt_;
};

std::string to_string(BoundaryProfile::Mode m);

// d_infty^-2 g
class FriedMetric : public MetricField {
public:
    FriedMetric(MetricPtr g, BoundaryProfile profile);
    Mat eval(const Point& x) const override;

private:
    MetricPtr g_;
    BoundaryProfile profile_;
};

struct FriedScene {
    MetricPtr g;
    BoundaryProfile profile;
    MetricPtr fried;

    FriedScene(MetricPtr base, BoundaryProfile p);
};

Mat fried_metric(const FriedScene& s, const Point& x);

struct DistanceEstimate {
    double value = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double lattice = 0.0;  // shortest path on the graph before polishing
    int resolution = 0;
    std::vector<Point> path;
    nlohmann::json to_json() const;
};

// Shortest path on a lattice over a chart box around x and y (all
// neighbour offsets in {-1,0,1}^n, midpoint-rule edge weights), then the
// path is shortened as a polyline at two vertex counts. `upper` is the length
// of the finer polyline; `lower` subtracts the change between the two counts.
DistanceEstimate lattice_distance(const MetricField& g, const Point& x, const Point& y, int resolution = 0);

DistanceEstimate fried_distance(const FriedScene& s, const Point& x, const Point& y, int resolution = 0);

// Initial velocity w with exp_x(w) = y by Newton's method from the guess w0;
// returns the geodesic length |w|_g or nothing when Newton fails.
std::optional<Vec> two_point_shoot(const MetricField& g, const Point& x, const Point& y, const Vec& w0,
                                   double tol = 1e-12);

// Distance in g: straight length for constant metrics, two-point shooting
// from the chart difference otherwise, with the lattice estimate as fallback.
double riemannian_distance(const MetricField& g, const Point& x, const Point& y);

struct FriedBoundReport {
    Point x;
    Point y;
    double d = 0.0;
    double d_infty = 0.0;
    DistanceEstimate d_f;
    double bound_a_margin = 0.0;  // d_infty (e^dF - 1) - d
    std::optional<double> bound_b_margin;  // d - d_infty (1 - e^-dF), when d < d_infty
    double error = 0.0;                    // combined numerical error of the margins
    bool pass = false;
    nlohmann::json to_json() const;
};

FriedBoundReport fried_bound_check(const FriedScene& s, const Point& x, const Point& y, int resolution = 0,
                                   double tol = 0.0);

// Gauss curvature by the Brioschi formula from E, F, G sampled on a uniform
// grid (row index t, column index s, spacing h), at interior nodes.
Mat brioschi_curvature(const Mat& e, const Mat& f, const Mat& g, double h);

struct RectangleOptions {
    int grid = 9;
    double tol = 1e-5;
    int distance_stride = 2;                 // distance bound checked on every stride-th node
    const BoundaryProfile* profile = nullptr;  // shooting with 64 directions when null
};

struct RectangleReport {
    Point x;
    Vec v1;
    Vec v2;
    double ell = 0.0;
    double d_infty = kInf;
    bool degenerate = false;
    bool inconsistent = false;  // a grid point left the domain
    std::string message;
    double max_curvature = 0.0;
    double max_distance_excess = -kInf;  // d(x, Phi) - sqrt((t|v1|)^2 + (s|v2|)^2)
    double collapse_defect = 0.0;        // degenerate case: distance of Phi(t, s) from gamma_1(t)
    double tol = 0.0;
    bool pass = false;
    std::vector<std::vector<Point>> grid;  // Phi(t_i, s_j)
    nlohmann::json to_json() const;
};

// Phi(t, s) = exp_{gamma_1(t)}(s T(t)), gamma_1(t) = exp_x(t v_1), T the
// transport of v_2 along gamma_1, for (t, s) in [0, ell]^2. Throws SpecError
// when ell |v|_g reaches d_infty(x).
RectangleReport flat_rectangle(const ProductStructure& ps, const Point& x, const Vec& v, double ell,
                               const RectangleOptions& opt = {});

struct SplitPoint {
    Point x;
    double r1 = 0.0;
    double r2 = 0.0;
    double witness_angle = 0.0;  // degrees between the witness and the first block
    double d_infty = kInf;
    std::string verdict;  // "consistent" or "violated"
    std::string alternative;  // which curvature vanishes: "R1=0", "R2=0", "both", "neither"
};

struct SplitReport {
    std::vector<SplitPoint> points;
    double tol = 0.0;
    double transversal_deg = 1.0;
    bool pass = false;
    std::string note;
    nlohmann::json to_json() const;
    // header x1..xn,R1,R2,witness_angle,verdict
    std::string to_csv() const;
};

// At each point: squared leaf curvature norms, the escape witness, and the
// requirement that R_i <= tol wherever the witness is transversal to leaf i.
SplitReport splitting_diagnostic(const ProductStructure& ps, const std::vector<Point>& points,
                                 const ShootingOptions& opt, double tol = 1e-8);

struct LeafProbe {
    bool stayed = false;          // the leaf geodesic reached the horizon
    double max_r1 = 0.0;          // along the geodesic
    double d_infty_spread = 0.0;  // max - min of d_infty at points along the leaf
    nlohmann::json to_json() const;
};

// Geodesic along the first-block direction u from x; samples R_1 and d_infty
// along it.
LeafProbe leaf_completeness_probe(const ProductStructure& ps, const Point& x, const Vec& u, double horizon,
                                  const ShootingOptions& opt, int d_samples = 5);

}  // namespace finslerlab
