#pragma once

#include "sepsurf/data.hpp"
#include "sepsurf/grid.hpp"
#include "sepsurf/smoothing.hpp"
#include "sepsurf/tensor4.hpp"

#include <Eigen/Dense>

#include <vector>

namespace sepsurf {

// C[i,j,i',j'] = A[i,i'] B[j,j'].
FullCovariance kron_tensor(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

double tensor_fro_norm(const Tensor4& t);

// (1/N) sum of centered outer products of fully observed surfaces.
FullCovariance empirical_covariance(const std::vector<Eigen::MatrixXd>& surfaces,
                                    const Eigen::MatrixXd* mean = nullptr);

// Non-separable baseline: 4D local-linear smoothing of the off-diagonal raw
// covariances of centered gridded samples, unit weights, output averaged with
// its transpose.
FullCovariance smooth4d_covariance(const std::vector<MaskedGridSample>& centered,
                                   const Grid2& grid, const Bandwidths4& bw,
                                   const FallbackPolicy& policy = {});

// One step of the power iteration for the best separable approximation:
// A[i,i'] = sum_{j,j'} B[j,j'] C[i,j,i',j'] / sum_{j,j'} B[j,j']^2.
Eigen::MatrixXd bsa_step(const FullCovariance& C, const Eigen::MatrixXd& B);

// Dual step updating the spatial factor from a fixed temporal one.
Eigen::MatrixXd bsa_step_dual(const FullCovariance& C, const Eigen::MatrixXd& A);

struct BsaResult {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B;
    int iterations = 0;
    bool converged = false;
};

// Alternating partial inner products from B = ones until the product change
// drops below tol (relative Frobenius) or max_iter is hit; trace-normalized.
BsaResult bsa(const FullCovariance& C, double tol = 1e-8, int max_iter = 100);

// Pre-smoothing benchmark: each surface smoothed from its own observations
// only, extrapolating through saturating window doubling.
Eigen::MatrixXd presmooth_predict(const std::vector<SparseObservation>& obs, const Grid2& grid,
                                  const Bandwidths2& bw);

} // namespace sepsurf
