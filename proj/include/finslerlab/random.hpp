#pragma once

#include "finslerlab/linalg.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

namespace finslerlab {

// Seed expansion. One global seed fans out into independent substreams keyed by
// operation name, so adding an experiment never shifts another's randomness.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t substream(std::uint64_t seed, std::string_view name) {
    return splitmix64(seed ^ splitmix64(fnv1a(name)));
}

inline std::uint64_t substream(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) + index);
}

// Portable generator: the conversions below are fixed, unlike the standard
// distributions whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    Vec normal_vector(int n) {
        Vec v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    // Uniform direction on the Euclidean unit sphere.
    Vec unit_vector(int n) {
        Vec v = normal_vector(n);
        double nv = v.norm();
        while (nv < 1e-12) {
            v = normal_vector(n);
            nv = v.norm();
        }
        return v / nv;
    }

    // Uniform point in the Euclidean ball of radius r around c.
    Vec in_ball(const Vec& c, double r) {
        const int n = static_cast<int>(c.size());
        return c + r * std::pow(uniform(), 1.0 / n) * unit_vector(n);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace finslerlab
