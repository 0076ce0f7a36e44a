#pragma once

#include <Eigen/Dense>

#include <json.hpp>
#include <string>
#include <vector>

namespace finslerlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Point in chart coordinates.
using Point = Vec;

inline Vec Vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}
inline Vec Vec3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Largest absolute entry.
inline double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

// Returns true when m is (numerically) symmetric positive definite.
bool is_positive_definite(const Mat& m);

// g-orthonormal frame: columns e_a with e_a^T g e_b = delta_ab.
Mat orthonormal_frame(const Mat& g);

// Orthonormal basis (columns) of the null space of the stacked rows, using
// singular values <= threshold.
Mat null_space(const Mat& a, double threshold);

// Largest principal angle between the column spans of two orthonormal bases
// (w.r.t. the Euclidean inner product).
double max_principal_angle(const Mat& a, const Mat& b);

nlohmann::json to_json(const Vec& v);
// Row-major nested arrays.
nlohmann::json to_json(const Mat& m);
// Column-major: one array per column.
nlohmann::json columns_to_json(const Mat& m);

Vec parse_vector(const std::string& text);

}  // namespace finslerlab
