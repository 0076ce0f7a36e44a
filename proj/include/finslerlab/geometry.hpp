#pragma once

#include "finslerlab/dsl/expr.hpp"
#include "finslerlab/linalg.hpp"

#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

namespace finslerlab {

constexpr double kInf = std::numeric_limits<double>::infinity();

// A removed closed set {p : |(p - center)_axes| <= radius}. With empty `axes`
// every coordinate takes part (a ball); with axes {1, 2} in 3-D it is a solid
// cylinder around the line through `center` along the remaining axis.
struct Exclusion {
    Vec center;
    double radius = 1e-8;
    std::vector<int> axes;  // zero-based

    // Signed chart distance from x to the set (negative inside).
    double distance(const Point& x) const;
    // Closest point of the set to x.
    Point nearest(const Point& x) const;
    // Signed distance from the chord [a, b] to the set.
    double segment_distance(const Point& a, const Point& b) const;
};

// Open chart box minus finitely many excluded sets. Box faces are chart
// artifacts; the excluded sets model the metric boundary (punctures).
class Domain {
public:
    Domain() = default;
    explicit Domain(int dim);

    int dim() const { return static_cast<int>(lo.size()); }
    bool contains(const Point& x) const;
    // Both ends inside and the chord between them misses every excluded set.
    bool segment_inside(const Point& a, const Point& b) const;
    // Chart distance to the nearest box face or excluded set.
    double margin(const Point& x) const;
    // Chart distance to the nearest excluded set (kInf when there is none).
    double boundary_margin(const Point& x) const;
    int nearest_exclusion(const Point& x) const;
    bool has_boundary() const { return !exclusions.empty(); }

    static Domain product(const std::vector<Domain>& factors);

    Vec lo;
    Vec hi;
    std::vector<Exclusion> exclusions;
};

// Metric tensor with first and optionally second coordinate derivatives:
// d1[k] = d_k g, d2[k][l] = d_k d_l g.
struct MetricJet {
    Mat g;
    std::vector<Mat> d1;
    std::vector<std::vector<Mat>> d2;
    bool nonsmooth = false;
};

class MetricField {
public:
    explicit MetricField(Domain domain) : domain_(std::move(domain)) {}
    virtual ~MetricField() = default;

    int dim() const { return domain_.dim(); }
    const Domain& domain() const { return domain_; }

    // Throws DomainError outside the domain or where the matrix is not
    // positive definite.
    Mat operator()(const Point& x) const;
    virtual Mat eval(const Point& x) const = 0;
    // Default: central differences (h = 1e-5 for first, 1e-4 for second
    // derivatives).
    virtual MetricJet jet(const Point& x, int order) const;
    virtual bool is_constant() const { return false; }

protected:
    void require_inside(const Point& x) const;

    Domain domain_;
};

using MetricPtr = std::shared_ptr<const MetricField>;

class ConstantMetric : public MetricField {
public:
    ConstantMetric(Mat g, Domain domain);
    Mat eval(const Point& x) const override;
    MetricJet jet(const Point& x, int order) const override;
    bool is_constant() const override { return true; }

private:
    Mat g_;
};

// Entries g_ij as expressions in x1..xn, differentiated with dual numbers.
class DslMetric : public MetricField {
public:
    // `entries` is n*n row-major and must be symmetric.
    DslMetric(std::vector<dsl::Expr> entries, Domain domain);
    Mat eval(const Point& x) const override;
    MetricJet jet(const Point& x, int order) const override;
    bool is_constant() const override;
    const dsl::Expr& entry(int i, int j) const { return entries_[static_cast<std::size_t>(i * dim() + j)]; }

private:
    std::vector<dsl::Expr> entries_;
};

// Opaque metric; derivatives by central differences.
class CallbackMetric : public MetricField {
public:
    CallbackMetric(std::function<Mat(const Point&)> fn, Domain domain);
    Mat eval(const Point& x) const override { return fn_(x); }

private:
    std::function<Mat(const Point&)> fn_;
};

struct ScalarJet {
    double value = 0.0;
    Vec grad;
    Mat hess;
    bool nonsmooth = false;
};

class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual int dim() const = 0;
    virtual double eval(const Point& x) const = 0;
    virtual ScalarJet jet(const Point& x, int order) const;  // default: central differences
    double operator()(const Point& x) const { return eval(x); }
};

using ScalarPtr = std::shared_ptr<const ScalarField>;

class DslScalar : public ScalarField {
public:
    explicit DslScalar(dsl::Expr e) : e_(std::move(e)) {}
    int dim() const override { return e_.x_dim(); }
    double eval(const Point& x) const override;
    ScalarJet jet(const Point& x, int order) const override;
    const dsl::Expr& expr() const { return e_; }

private:
    dsl::Expr e_;
};

class CallbackScalar : public ScalarField {
public:
    CallbackScalar(int dim, std::function<double(const Point&)> fn) : dim_(dim), fn_(std::move(fn)) {}
    int dim() const override { return dim_; }
    double eval(const Point& x) const override { return fn_(x); }

private:
    int dim_;
    std::function<double(const Point&)> fn_;
};

// exp(2 phi) * g.
class ConformalMetric : public MetricField {
public:
    ConformalMetric(MetricPtr base, ScalarPtr phi);
    Mat eval(const Point& x) const override;
    MetricJet jet(const Point& x, int order) const override;

private:
    MetricPtr base_;
    ScalarPtr phi_;
};

// c * g for a constant c > 0.
class ScaledMetric : public MetricField {
public:
    ScaledMetric(MetricPtr base, double c);
    Mat eval(const Point& x) const override { return c_ * base_->eval(x); }
    MetricJet jet(const Point& x, int order) const override;
    bool is_constant() const override { return base_->is_constant(); }

private:
    MetricPtr base_;
    double c_;
};

// Block-diagonal metric on consecutive coordinate blocks, each block
// depending only on its own coordinates.
class ProductMetric : public MetricField {
public:
    explicit ProductMetric(std::vector<MetricPtr> factors);
    Mat eval(const Point& x) const override;
    MetricJet jet(const Point& x, int order) const override;
    bool is_constant() const override;

    const std::vector<MetricPtr>& factors() const { return factors_; }
    const std::vector<int>& offsets() const { return offsets_; }

private:
    std::vector<MetricPtr> factors_;
    std::vector<int> offsets_;
};

// Convenience builders from expression text in x1..xn (entries row-major; an
// empty domain means all of R^n).
std::shared_ptr<const DslMetric> make_dsl_metric(int n, const std::vector<std::string>& entries, Domain domain = {});
ScalarPtr make_dsl_scalar(int n, const std::string& text);

// Partition of the coordinates into leaf blocks with their factor metrics.
class ProductStructure {
public:
    explicit ProductStructure(std::vector<MetricPtr> factors);

    int blocks() const { return static_cast<int>(factors_.size()); }
    int dim() const { return metric_->dim(); }
    int offset(int b) const { return offsets_[static_cast<std::size_t>(b)]; }
    int block_dim(int b) const { return factors_[static_cast<std::size_t>(b)]->dim(); }
    const MetricPtr& factor(int b) const { return factors_[static_cast<std::size_t>(b)]; }
    const std::shared_ptr<const ProductMetric>& metric() const { return metric_; }

    Vec project(const Vec& x, int b) const { return x.segment(offset(b), block_dim(b)); }
    // Zero outside block b.
    Vec restrict_to(const Vec& v, int b) const;

private:
    std::vector<MetricPtr> factors_;
    std::vector<int> offsets_;
    std::shared_ptr<const ProductMetric> metric_;
};

// Dense rank-3 array indexed (k, i, j), used for Christoffel symbols.
class Tensor3 {
public:
    Tensor3() = default;
    explicit Tensor3(int n) : n_(n), a_(static_cast<std::size_t>(n * n * n), 0.0) {}

    int dim() const { return n_; }
    double& operator()(int k, int i, int j) { return a_[idx(k, i, j)]; }
    double operator()(int k, int i, int j) const { return a_[idx(k, i, j)]; }
    double max_abs() const;
    Tensor3 operator-(const Tensor3& o) const;
    // (Gamma(u, w))^k = Gamma^k_ij u^i w^j
    Vec contract(const Vec& u, const Vec& w) const;

    bool nonsmooth = false;

private:
    std::size_t idx(int k, int i, int j) const { return static_cast<std::size_t>((k * n_ + i) * n_ + j); }
    int n_ = 0;
    std::vector<double> a_;
};

// Rank-4 array indexed (l, i, j, k) for R^l_ijk.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(int n) : n_(n), a_(static_cast<std::size_t>(n * n * n * n), 0.0) {}

    int dim() const { return n_; }
    double& operator()(int l, int i, int j, int k) { return a_[idx(l, i, j, k)]; }
    double operator()(int l, int i, int j, int k) const { return a_[idx(l, i, j, k)]; }
    double max_abs() const;

    bool nonsmooth = false;

private:
    std::size_t idx(int l, int i, int j, int k) const {
        return static_cast<std::size_t>(((l * n_ + i) * n_ + j) * n_ + k);
    }
    int n_ = 0;
    std::vector<double> a_;
};

Tensor3 christoffel(const MetricJet& jet);
Tensor3 christoffel(const MetricField& g, const Point& x);

// delta^k_i d_j phi + delta^k_j d_i phi - g_ij grad^k phi: the difference
// between the Levi-Civita connections of exp(2 phi) g and g.
Tensor3 conformal_difference(const MetricField& g, const ScalarField& phi, const Point& x);

// R^l_ijk = d_i Gamma^l_jk - d_j Gamma^l_ik + Gamma^l_im Gamma^m_jk - Gamma^l_jm Gamma^m_ik,
// so that R(d_i, d_j) d_k = R^l_ijk d_l.
Tensor4 riemann(const MetricJet& jet);
Tensor4 riemann(const MetricField& g, const Point& x);

// R_abcd R^abcd with every index moved by g.
double curvature_norm_sq(const Tensor4& r, const Mat& g);
double curvature_norm_sq(const MetricField& g, const Point& x);

// <R(u, w) w, u> / (|u|^2 |w|^2 - <u, w>^2)
double sectional_curvature(const Tensor4& r, const Mat& g, const Vec& u, const Vec& w);

// Squared curvature norms of the factor metrics at the projected point.
std::vector<double> leaf_curvature_norms(const ProductStructure& ps, const Point& x);

}  // namespace finslerlab
