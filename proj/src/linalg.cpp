#include "finslerlab/linalg.hpp"

#include "finslerlab/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace finslerlab {

bool is_positive_definite(const Mat& m) {
    if (m.rows() != m.cols() || m.rows() == 0) return false;
    if (!m.allFinite()) return false;
    Eigen::LLT<Mat> llt(symmetrize(m));
    return llt.info() == Eigen::Success;
}

Mat orthonormal_frame(const Mat& g) {
    Eigen::LLT<Mat> llt(symmetrize(g));
    if (llt.info() != Eigen::Success) throw DomainError("metric is not positive definite");
    // g = L L^T, so E = L^{-T} satisfies E^T g E = I.
    const Mat l = llt.matrixL();
    return l.transpose().triangularView<Eigen::Upper>().solve(Mat::Identity(g.rows(), g.cols()));
}

Mat null_space(const Mat& a, double threshold) {
    const int n = static_cast<int>(a.cols());
    if (a.rows() == 0) return Mat::Identity(n, n);
    Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeFullV);
    const Vec& s = svd.singularValues();
    const Mat& v = svd.matrixV();
    std::vector<int> idx;
    for (int i = 0; i < n; ++i) {
        const double si = i < s.size() ? s[i] : 0.0;
        if (si <= threshold) idx.push_back(i);
    }
    Mat out(n, static_cast<int>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<int>(k)) = v.col(idx[k]);
    return out;
}

double max_principal_angle(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) return std::numbers::pi / 2;
    if (a.cols() == 0) return 0.0;
    Eigen::JacobiSVD<Mat> svd(a.transpose() * b);
    const double smallest = svd.singularValues().minCoeff();
    return std::acos(std::clamp(smallest, -1.0, 1.0));
}

nlohmann::json to_json(const Vec& v) {
    nlohmann::json out = nlohmann::json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v[i]);
    return out;
}

nlohmann::json to_json(const Mat& m) {
    nlohmann::json out = nlohmann::json::array();
    for (int i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        out.push_back(row);
    }
    return out;
}

nlohmann::json columns_to_json(const Mat& m) {
    nlohmann::json out = nlohmann::json::array();
    for (int j = 0; j < m.cols(); ++j) out.push_back(to_json(Vec(m.col(j))));
    return out;
}

Vec parse_vector(const std::string& text) {
    std::vector<double> vals;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            vals.push_back(std::stod(item, &used));
            if (item.find_first_not_of(" \t", used) != std::string::npos) throw SpecError("bad number");
        } catch (const std::exception&) {
            throw SpecError("cannot parse vector component '" + item + "' in '" + text + "'");
        }
    }
    if (vals.empty()) throw SpecError("empty vector '" + text + "'");
    return Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

}  // namespace finslerlab
