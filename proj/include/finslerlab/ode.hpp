#pragma once

#include "finslerlab/linalg.hpp"

#include <functional>
#include <string>
#include <vector>

namespace finslerlab {

enum class Termination { Horizon, DomainExit, StepUnderflow };

std::string to_string(Termination t);

struct OdeOptions {
    double rtol = 1e-11;
    double atol = 1e-12;
    double h_init = 1e-2;
    double h_min = 1e-13;
    double h_max = 0.25;
    int max_steps = 100000;
};

struct OdeTrajectory {
    std::vector<double> t;
    std::vector<Vec> y;
    std::vector<Vec> dy;
    Termination cause = Termination::Horizon;
    int rejected = 0;

    // Cubic Hermite interpolation between accepted steps.
    Vec at(double s) const;
};

using OdeRhs = std::function<Vec(double, const Vec&)>;
// valid(from, to): false once a step from state `from` to `to` has left the
// admissible set.
using OdeValid = std::function<bool(const Vec&, const Vec&)>;

// Dormand-Prince 5(4) with embedded error control from t0 to t1. A right-hand
// side that throws DomainError at a stage, or a step rejected by `valid`, halves
// the step; once it drops below h_min the trajectory ends at the last accepted
// state with cause DomainExit.
OdeTrajectory dopri45(const OdeRhs& f, double t0, const Vec& y0, double t1, const OdeOptions& opt,
                      const OdeValid& valid = {});

}  // namespace finslerlab
