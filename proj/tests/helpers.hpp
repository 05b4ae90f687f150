#pragma once

#include <Eigen/Dense>

#include "diki/numkernel.hpp"

namespace diki::test {

inline Eigen::MatrixXd to_eigen(const Mat& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    return e;
}

/// Random symmetric positive definite matrix A A^T + d I.
inline Mat random_spd(std::size_t d, Rng& rng) {
    const Mat a = rng.normal_mat(d, d, 1.0);
    Mat s = matmul_nt(a, a);
    for (std::size_t i = 0; i < d; ++i) s(i, i) += static_cast<double>(d);
    // exact symmetry
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j) s(j, i) = s(i, j);
    return s;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace diki::test
