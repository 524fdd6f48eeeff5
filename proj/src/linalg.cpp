#include "sepsurf/linalg.hpp"

#include "sepsurf/errors.hpp"

namespace sepsurf {

Eigen::MatrixXd psd_clipped(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(m));
    if (es.info() != Eigen::Success) throw FactorizationFailure("eigendecomposition failed");
    Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
    return symmetrized(es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose());
}

Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& m, double* min_eigenvalue) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(m));
    if (es.info() != Eigen::Success) throw FactorizationFailure("eigendecomposition failed");
    if (min_eigenvalue) *min_eigenvalue = es.eigenvalues().minCoeff();
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal();
}

} // namespace sepsurf
