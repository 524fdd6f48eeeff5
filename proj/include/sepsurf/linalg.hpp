#pragma once

#include <Eigen/Dense>

namespace sepsurf {

inline Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) {
    return 0.5 * (m + m.transpose());
}

// Nearest PSD matrix in Frobenius norm: eigenvalues clipped at zero.
Eigen::MatrixXd psd_clipped(const Eigen::MatrixXd& m);

// Factor F with F F^T equal to the PSD-clipped input. min_eigenvalue, when
// requested, receives the smallest unclipped eigenvalue.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& m, double* min_eigenvalue = nullptr);

} // namespace sepsurf
