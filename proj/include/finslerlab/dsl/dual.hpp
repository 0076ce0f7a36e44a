#pragma once

#include "finslerlab/error.hpp"

#include <cmath>

namespace finslerlab::dsl {

// Forward-mode dual number. Nesting Dual<Dual<double>> carries a mixed second
// derivative: outer.d.d is the derivative along both seed directions.
template <class T>
struct Dual {
    T v{};
    T d{};

    constexpr Dual() = default;
    constexpr Dual(double c) : v(c), d(0.0) {}  // NOLINT: constants promote implicitly
    constexpr Dual(T value, T deriv) : v(value), d(deriv) {}
};

inline double value_of(double a) { return a; }
template <class T>
double value_of(const Dual<T>& a) { return value_of(a.v); }

inline bool is_zero(double a) { return a == 0.0; }
template <class T>
bool is_zero(const Dual<T>& a) { return is_zero(a.v) && is_zero(a.d); }

template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T>
Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) { return {a.v * b.v, a.v * b.d + a.d * b.v}; }
template <class T>
Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
    const T q = a.v / b.v;
    return {q, (a.d - q * b.d) / b.v};
}

// Elementary functions. The double overloads carry the domain checks; the Dual
// overloads recurse into them for the value part.
inline double d_sin(double a) { return std::sin(a); }
inline double d_cos(double a) { return std::cos(a); }
inline double d_exp(double a) { return std::exp(a); }
inline double d_log(double a) {
    if (!(a > 0.0)) throw EvalError("log of non-positive value");
    return std::log(a);
}
inline double d_sqrt(double a) {
    if (a < 0.0) throw EvalError("sqrt of negative value");
    return std::sqrt(a);
}
inline double d_pow_const(double a, double p) {
    if (a < 0.0) throw EvalError("non-integer power of negative value");
    return std::pow(a, p);
}

template <class T> Dual<T> d_sin(const Dual<T>& a);
template <class T> Dual<T> d_cos(const Dual<T>& a);
template <class T> Dual<T> d_exp(const Dual<T>& a);
template <class T> Dual<T> d_log(const Dual<T>& a);
template <class T> Dual<T> d_sqrt(const Dual<T>& a);
template <class T> Dual<T> d_pow_const(const Dual<T>& a, double p);

template <class T>
Dual<T> d_sin(const Dual<T>& a) { return {d_sin(a.v), d_cos(a.v) * a.d}; }
template <class T>
Dual<T> d_cos(const Dual<T>& a) { return {d_cos(a.v), -(d_sin(a.v) * a.d)}; }
template <class T>
Dual<T> d_exp(const Dual<T>& a) {
    const T e = d_exp(a.v);
    return {e, e * a.d};
}
template <class T>
Dual<T> d_log(const Dual<T>& a) { return {d_log(a.v), a.d / a.v}; }
template <class T>
Dual<T> d_sqrt(const Dual<T>& a) {
    const T s = d_sqrt(a.v);
    if (value_of(a) == 0.0) {
        if (is_zero(a.d)) return {s, a.d};
        throw EvalError("sqrt is not differentiable at 0");
    }
    return {s, a.d / (T(2.0) * s)};
}
template <class T>
Dual<T> d_pow_const(const Dual<T>& a, double p) {
    if (value_of(a) == 0.0 && p < 1.0) {
        if (is_zero(a.d)) return {d_pow_const(a.v, p), a.d};
        throw EvalError("fractional power is not differentiable at 0");
    }
    return {d_pow_const(a.v, p), T(p) * d_pow_const(a.v, p - 1.0) * a.d};
}

template <class T>
T d_pow_int(const T& a, int k) {
    if (k < 0) {
        if (value_of(a) == 0.0) throw EvalError("division by zero");
        return T(1.0) / d_pow_int(a, -k);
    }
    T result(1.0);
    T base = a;
    while (k > 0) {
        if (k & 1) result = result * base;
        base = base * base;
        k >>= 1;
    }
    return result;
}

// |a|; at a kink (value 0) the derivative is taken as 0 and `kink` is raised.
inline double d_abs(double a, bool& kink) {
    if (a == 0.0) kink = true;
    return std::fabs(a);
}
template <class T>
Dual<T> d_abs(const Dual<T>& a, bool& kink) {
    const double s = value_of(a);
    if (s > 0.0) return a;
    if (s < 0.0) return -a;
    if (!is_zero(a.d)) kink = true;
    return {d_abs(a.v, kink), T(0.0)};
}

}  // namespace finslerlab::dsl
