#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "aesmo/errors.hpp"

namespace aesmo {

struct EigResult {
    Eigen::VectorXd values;   // ascending
    Eigen::MatrixXd vectors;  // column i pairs with values[i]
};

inline bool is_symmetric(const Eigen::MatrixXd& m, double tol = 1e-10) {
    if (m.rows() != m.cols()) return false;
    const double scale = 1.0 + m.cwiseAbs().maxCoeff();
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Sweeps until the off-diagonal Frobenius norm falls below 1e-12 * ||m||.
inline EigResult eig_sym(const Eigen::MatrixXd& m, bool want_vectors = true) {
    if (!is_symmetric(m))
        throw validation_error("eig_sym: matrix is not symmetric");
    const Eigen::Index n = m.rows();
    Eigen::MatrixXd a = 0.5 * (m + m.transpose());
    Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);

    const double norm = std::max(a.norm(), 1e-300);
    const double target = 1e-12 * norm;

    auto off_norm = [&]() {
        double s = 0.0;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
        return std::sqrt(s);
    };

    for (int sweep = 0; sweep < 100 && off_norm() > target; ++sweep) {
        for (Eigen::Index p = 0; p < n - 1; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) <= 1e-3 * target / double(n)) continue;
                Eigen::JacobiRotation<double> rot;
                rot.makeJacobi(a(p, p), a(p, q), a(q, q));
                a.applyOnTheLeft(p, q, rot.adjoint());
                a.applyOnTheRight(p, q, rot);
                if (want_vectors) v.applyOnTheRight(p, q, rot);
            }
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });

    EigResult r;
    r.values.resize(n);
    if (want_vectors) r.vectors.resize(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
        r.values[k] = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
        if (want_vectors) r.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
    }
    return r;
}

inline double lambda_max_sym(const Eigen::MatrixXd& m) {
    return eig_sym(m, false).values.maxCoeff();
}

inline double lambda_min_sym(const Eigen::MatrixXd& m) {
    return eig_sym(m, false).values.minCoeff();
}

/// Induced-2 norm via eig_sym on m^T m.
inline double spectral_norm(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd g = m.transpose() * m;
    const double lm = lambda_max_sym(0.5 * (g + g.transpose()));
    return std::sqrt(std::max(lm, 0.0));
}

}  // namespace aesmo
