#pragma once

#include "sepsurf/separable.hpp"
#include "sepsurf/tensor4.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace sepsurf {

// Sparse noisy observations of one new surface under the training protocol.
struct NewObservations {
    std::vector<double> t;
    std::vector<double> s;
    std::vector<double> y;

    std::size_t size() const { return y.size(); }
    void validate() const;
};

struct BlupResult {
    Eigen::MatrixXd predicted;              // d1 x d2
    Eigen::MatrixXd cond_var;               // d1 x d2, clamped at zero
    Eigen::MatrixXd pointwise_halfwidth;    // filled by pointwise_band
    Eigen::MatrixXd simultaneous_halfwidth; // filled by simultaneous_band
    double alpha = 0.0;
    double u_quantile = 0.0;
    double z_quantile = 0.0;
    std::uint64_t seed = 0;
    int n_draws = 0;
};

// Best linear unbiased prediction of the latent surface on the model grid,
// with kernels looked up at nearest grid cells. ridge is relative: the solve
// adds ridge * mean(diag(var)) to the diagonal of var(Y).
BlupResult blup(const SeparableModel& model, const NewObservations& obs, double ridge = 1e-8);

// Variant for a non-separable covariance given as a cell-indexed accessor
// cov(i, j, i2, j2); used by the 4D-smoothing comparator.
BlupResult blup_with_covariance(const Grid2& grid, const Eigen::MatrixXd& mean,
                                const std::function<double(int, int, int, int)>& cov,
                                double sigma2, const NewObservations& obs, double ridge = 1e-8);

// Pointwise (1-alpha) band: halfwidth = u_{1-alpha/2} sqrt(cond_var).
void pointwise_band(BlupResult& result, double alpha);

// Simultaneous band via the Gaussian supremum quantile: draws n_draws fields
// with the conditional correlation (eigenvalue-clipped factorization) and
// takes the empirical (1-alpha) quantile of the max-abs statistic. Draws are
// counter-based per draw index, so the quantile is scheduling-independent.
void simultaneous_band(const SeparableModel& model, const NewObservations& obs, BlupResult& result,
                       double alpha, int n_draws, std::uint64_t seed);

// Prediction output document (predicted, cond_var, bands, quantiles, seed).
std::string blup_to_json_string(const BlupResult& result, const std::string& extra_json = "");

} // namespace sepsurf
