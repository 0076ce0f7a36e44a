#include "finslerlab/ode.hpp"

#include "finslerlab/error.hpp"

#include <algorithm>
#include <cmath>

namespace finslerlab {

std::string to_string(Termination t) {
    switch (t) {
    case Termination::Horizon: return "horizon";
    case Termination::DomainExit: return "domain_exit";
    case Termination::StepUnderflow: return "step_underflow";
    }
    return "?";
}

namespace {

Vec hermite(double t0, const Vec& y0, const Vec& d0, double t1, const Vec& y1, const Vec& d1, double s) {
    const double h = t1 - t0;
    if (h == 0.0) return y0;
    const double u = (s - t0) / h;
    const double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * y0 + (u3 - 2 * u2 + u) * h * d0 + (-2 * u3 + 3 * u2) * y1 + (u3 - u2) * h * d1;
}

// Dormand-Prince tableau
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

Vec OdeTrajectory::at(double s) const {
    if (t.empty()) throw NumericError("empty trajectory");
    if (s <= t.front()) return y.front();
    if (s >= t.back()) return y.back();
    const auto it = std::upper_bound(t.begin(), t.end(), s);
    const std::size_t k = static_cast<std::size_t>(it - t.begin());
    return hermite(t[k - 1], y[k - 1], dy[k - 1], t[k], y[k], dy[k], s);
}

OdeTrajectory dopri45(const OdeRhs& f, double t0, const Vec& y0, double t1, const OdeOptions& opt,
                      const OdeValid& valid) {
    OdeTrajectory out;
    if (valid && !valid(y0, y0)) throw DomainError("initial state outside the admissible set");
    Vec k1 = f(t0, y0);
    out.t.push_back(t0);
    out.y.push_back(y0);
    out.dy.push_back(k1);
    if (t1 <= t0) return out;

    double t = t0, h = std::min({opt.h_init, opt.h_max, t1 - t0});
    Vec y = y0;
    bool last_failed_domain = false;
    for (int step = 0; step < opt.max_steps; ++step) {
        if (t1 - t < opt.h_min) {
            out.cause = Termination::Horizon;
            return out;
        }
        h = std::min(h, t1 - t);
        if (h < opt.h_min) {
            out.cause = last_failed_domain ? Termination::DomainExit : Termination::StepUnderflow;
            return out;
        }
        Vec yn, k7, err;
        bool stage_failed = false;
        try {
            const Vec k2 = f(t + c2 * h, y + h * (a21 * k1));
            const Vec k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
            const Vec k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
            const Vec k5 = f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
            const Vec k6 = f(t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
            yn = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
            if (valid && !valid(y, yn)) throw DomainError("step left the admissible set");
            k7 = f(t + h, yn);
            err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
        } catch (const DomainError&) {
            stage_failed = true;
        }
        if (stage_failed) {
            // halving until h_min brackets the exit
            last_failed_domain = true;
            ++out.rejected;
            h *= 0.5;
            continue;
        }
        double e = 0.0;
        for (int i = 0; i < y.size(); ++i) {
            const double sc = opt.atol + opt.rtol * std::max(std::fabs(y[i]), std::fabs(yn[i]));
            e += (err[i] / sc) * (err[i] / sc);
        }
        e = std::sqrt(e / std::max<Eigen::Index>(1, y.size()));
        if (!std::isfinite(e)) {
            ++out.rejected;
            h *= 0.25;
            last_failed_domain = false;
            continue;
        }
        if (e <= 1.0) {
            t += h;
            y = yn;
            k1 = k7;
            out.t.push_back(t);
            out.y.push_back(y);
            out.dy.push_back(k1);
            last_failed_domain = false;
            const double fac = e == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(e, -0.2), 0.2, 5.0);
            h = std::min(h * fac, opt.h_max);
        } else {
            ++out.rejected;
            last_failed_domain = false;
            h *= std::clamp(0.9 * std::pow(e, -0.2), 0.1, 0.9);
        }
    }
    out.cause = Termination::StepUnderflow;
    return out;
}

}  // namespace finslerlab
