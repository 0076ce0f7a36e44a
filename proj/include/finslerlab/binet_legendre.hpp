#pragma once

#include "finslerlab/norms.hpp"

#include <cstdint>
#include <string>

namespace finslerlab {

// lattice:     nested chords. The outer n-1 axes are sampled at `resolution`
//              midpoints across the exact support of each slice; along the last
//              axis the chord of the unit ball is found by bisection and its
//              moments are integrated exactly.
// monte-carlo: `resolution` uniform samples in the bounding box, 32 batches.
// spherical:   polar form of the moments, g* = n int_S F^-(n+2) u u^T / int_S F^-n,
//              on a fixed product grid (n <= 3). Smooth in the base point, which
//              makes it the default for metric fields that get differentiated.
enum class BLBackend { Lattice, MonteCarlo, Spherical };

std::string to_string(BLBackend b);
BLBackend parse_backend(const std::string& s);

struct BLIntegrator {
    BLBackend mode = BLBackend::Lattice;
    int resolution = 0;  // 0: backend default
    std::uint64_t seed = 0;
    double box_factor = 1.05;
    bool estimate_error = true;  // second pass at r/2 (lattice, spherical)

    // Lattice with 201 points per axis for n <= 3, otherwise 2e6 Monte Carlo samples.
    static BLIntegrator defaults(int n);
    int effective_resolution(int n) const;
};

struct BLResult {
    Mat g_star;
    Mat g_bl;
    double vol = 0.0;
    // lattice/spherical: max entry difference of g_bl between resolutions r and r/2;
    // monte-carlo: max entry standard error of g_bl over batches.
    double error_estimate = 0.0;
    std::string backend;
    int resolution = 0;
    double box_half_width = 0.0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

BLResult bl_of_norm(const MinkowskiNorm& n, const BLIntegrator& integ);
Mat bl_dual_form(const FinslerField& f, const Point& x, const BLIntegrator& integ);
BLResult bl_metric(const FinslerField& f, const Point& x, const BLIntegrator& integ);

// Estimated circumradius of the unit ball: max of 1/F(u) over the 2n axis
// directions and 100 seeded random unit directions.
double circumradius_estimate(const MinkowskiNorm& n, std::uint64_t seed);

// Metric field x -> g_bl(F_x) with a per-point cache. Defaults to the
// spherical backend (n <= 3) since Christoffels are taken by differences.
MetricPtr bl_field(FinslerPtr f, BLIntegrator integ);
MetricPtr bl_field(FinslerPtr f);

}  // namespace finslerlab
