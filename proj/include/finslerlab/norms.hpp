#pragma once

#include "finslerlab/geometry.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace finslerlab {

class Rng;

// A norm on R^m: positively homogeneous, subadditive, definite. Reversibility
// (F(-v) = F(v)) is declared and checked separately.
class MinkowskiNorm {
public:
    MinkowskiNorm(int dim, bool reversible) : dim_(dim), reversible_(reversible) {}
    virtual ~MinkowskiNorm() = default;

    int dim() const { return dim_; }
    bool declared_reversible() const { return reversible_; }
    virtual double eval(std::span<const double> v) const = 0;
    double operator()(const Vec& v) const { return eval({v.data(), static_cast<std::size_t>(v.size())}); }

private:
    int dim_;
    bool reversible_;
};

using NormPtr = std::shared_ptr<const MinkowskiNorm>;

// Norm given by an expression in v1..vm (or a..f with letter aliases).
class DslNorm : public MinkowskiNorm {
public:
    DslNorm(dsl::Expr e, bool reversible);
    double eval(std::span<const double> v) const override { return e_.eval<double>({}, v); }
    const dsl::Expr& expr() const { return e_; }

private:
    dsl::Expr e_;
};

// sqrt(v^T A v)
class QuadraticNorm : public MinkowskiNorm {
public:
    explicit QuadraticNorm(Mat a);
    double eval(std::span<const double> v) const override;
    const Mat& matrix() const { return a_; }

private:
    Mat a_;
};

class CallbackNorm : public MinkowskiNorm {
public:
    CallbackNorm(int dim, bool reversible, std::function<double(std::span<const double>)> fn)
        : MinkowskiNorm(dim, reversible), fn_(std::move(fn)) {}
    double eval(std::span<const double> v) const override { return fn_(v); }

private:
    std::function<double(std::span<const double>)> fn_;
};

// v -> c * F(L v)
class LinearPullbackNorm : public MinkowskiNorm {
public:
    LinearPullbackNorm(NormPtr base, Mat l, double c = 1.0);
    double eval(std::span<const double> v) const override;

private:
    NormPtr base_;
    Mat l_;
    double c_;
};

NormPtr make_dsl_norm(int dim, const std::string& text, bool reversible, bool letter_aliases = false);
NormPtr euclidean_norm(int dim);

struct AxiomReport {
    std::string axiom;
    double max_violation = 0.0;
    std::vector<double> argmax_sample;  // the (v, u, lambda) triple that realised the maximum, flattened
    bool pass = true;
};

struct NormValidation {
    std::vector<AxiomReport> axioms;  // homogeneity, subadditivity, definiteness, reversibility
    bool reversible = false;          // verified by sampling
    bool pass = false;                // first three axioms, and declared reversibility if declared
    double tolerance = 1e-9;
    int samples = 0;

    const AxiomReport& axiom(const std::string& name) const;
    nlohmann::json to_json() const;
};

NormValidation validate_minkowski(const MinkowskiNorm& n, int samples, std::uint64_t seed, double tol = 1e-9);

// (x, v) -> F_x(v) with F_x a Minkowski norm for every x in the domain.
class FinslerField {
public:
    explicit FinslerField(Domain domain) : domain_(std::move(domain)) {}
    virtual ~FinslerField() = default;

    int dim() const { return domain_.dim(); }
    const Domain& domain() const { return domain_; }

    // The norm on the tangent space at x, with every x-dependent quantity
    // evaluated once.
    virtual NormPtr fiber(const Point& x) const = 0;
    virtual double eval(const Point& x, const Vec& v) const { return (*fiber(x))(v); }
    double operator()(const Point& x, const Vec& v) const { return eval(x, v); }
    virtual bool x_independent() const { return false; }

protected:
    Domain domain_;
};

using FinslerPtr = std::shared_ptr<const FinslerField>;

class ConstantFinsler : public FinslerField {
public:
    ConstantFinsler(NormPtr norm, Domain domain);
    NormPtr fiber(const Point&) const override { return norm_; }
    bool x_independent() const override { return true; }

private:
    NormPtr norm_;
};

// Expression in x1..xn and v1..vn (with `norm(x)`, named sub-norms, ...).
class DslFinsler : public FinslerField {
public:
    DslFinsler(dsl::Expr e, Domain domain, bool reversible);
    NormPtr fiber(const Point& x) const override;
    double eval(const Point& x, const Vec& v) const override;
    bool x_independent() const override { return !e_.depends_on_x(); }
    const dsl::Expr& expr() const { return e_; }

private:
    dsl::Expr e_;
    bool reversible_;
};

// Norm of a Riemannian metric.
class RiemannFinsler : public FinslerField {
public:
    explicit RiemannFinsler(MetricPtr g);
    NormPtr fiber(const Point& x) const override;
    bool x_independent() const override { return g_->is_constant(); }

private:
    MetricPtr g_;
};

// F(x, v) = N(|v_1|_{g_1}, ..., |v_k|_{g_k}) over the blocks of a product.
class ProductFinsler : public FinslerField {
public:
    ProductFinsler(std::shared_ptr<const ProductStructure> ps, NormPtr n);
    NormPtr fiber(const Point& x) const override;
    const ProductStructure& structure() const { return *ps_; }
    const NormPtr& block_norm() const { return n_; }

private:
    std::shared_ptr<const ProductStructure> ps_;
    NormPtr n_;
};

// lam(x) * F(x, v)
class ConformalFinsler : public FinslerField {
public:
    ConformalFinsler(FinslerPtr base, ScalarPtr lam);
    NormPtr fiber(const Point& x) const override;
    double eval(const Point& x, const Vec& v) const override;
    const FinslerPtr& base() const { return base_; }
    const ScalarPtr& factor() const { return lam_; }

private:
    FinslerPtr base_;
    ScalarPtr lam_;
};

// Constant multiple c * F.
FinslerPtr scale_finsler(FinslerPtr f, double c);

// Builds N(|v_1|, ...) after checking dimensions and the reversibility
// requirement on non-flat blocks (SpecError otherwise).
FinslerPtr product_finsler(std::shared_ptr<const ProductStructure> ps, NormPtr n);

FinslerPtr conformal_scale(FinslerPtr f, ScalarPtr lam);

// A chart map with its differential and a declared homothety coefficient.
struct DeckMap {
    std::string description;
    std::function<Point(const Point&)> map;
    std::function<Mat(const Point&)> differential;
    double coefficient = 1.0;

    static DeckMap scale(int n, double q);
    static DeckMap affine(Mat a, Vec b, double coefficient);
    static DeckMap identity(int n);
};

struct DeckCheck {
    double fitted = 0.0;    // best constant c (field) or k (metric homothety)
    double residual = 0.0;  // max absolute deviation from the fitted model
    int samples = 0;
    Point worst_x;
    Vec worst_v;
    nlohmann::json to_json() const;
};

// Fits F(phi(x), D phi v) = c F(x, v) over samples.
DeckCheck deck_isometry_check(const FinslerField& f, const DeckMap& d, int samples, std::uint64_t seed);
// Fits D phi^T g(phi(x)) D phi = k^2 g(x); reports k.
DeckCheck metric_homothety_check(const MetricField& g, const DeckMap& d, int samples, std::uint64_t seed);

struct HopfScene {
    FinslerPtr field;  // (1/|x|) F0(v) on R^n minus the origin
    DeckMap deck;      // x -> q x
    MetricPtr flat;    // reference metric
    double q = 2.0;
};

// Punctured R^n; the puncture is a ball of radius eps.
Domain punctured_space(int n, double eps = 1e-8);

HopfScene hopf_scene(NormPtr f0, double q);

// Random point of the domain: uniform in finite box directions, standard
// normal (scaled by `spread`) in unbounded ones, rejecting excluded points.
Point sample_domain(const Domain& d, Rng& rng, double spread = 1.0);

}  // namespace finslerlab
