#pragma once

#include "sepsurf/bandwidth.hpp"
#include "sepsurf/data.hpp"
#include "sepsurf/grid.hpp"
#include "sepsurf/smoothing.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sepsurf {

struct FitBandwidths {
    Bandwidths2 mean;     // pooled observations -> mu
    Bandwidths2 temporal; // pooled temporal marginal clouds -> A
    Bandwidths2 spatial;  // pooled spatial marginal clouds -> B
    Bandwidths2 diagonal; // diagonal raw covariances -> V (noise step)
};

struct FitOptions {
    int steps = 2; // smoothing updates per component; 1 gives the one-step estimator
    std::optional<FitBandwidths> bandwidths; // nullopt: cross-validated
    bool psd_project = false;                // eigenvalue clipping of A and B at zero
    std::uint64_t seed = 0;
    CvSpec cv;
    FallbackPolicy fallback;
    // Scale of the all-ones spatial weighting that seeds the first sweep. Any
    // positive value yields the same product A x B; it only moves the
    // unidentified scale constant between the factors.
    double init_scale = 1.0;
};

struct NormalizationRecord {
    std::string convention = "trace_one_temporal";
    double trace_before = 1.0; // trace of A before rescaling
    std::string warning;       // set when |trace| was suspiciously small
};

struct ModelMeta {
    int n_surfaces = 0;
    std::uint64_t n_obs = 0;
    std::uint64_t seed = 0;
};

// Fitted separable model: only the product A[i,i'] B[j,j'] is identified; the
// trace-one convention on A pins the split.
struct SeparableModel {
    Grid2 grid;
    Eigen::MatrixXd mean; // d1 x d2
    Eigen::MatrixXd A;    // d1 x d1 temporal kernel
    Eigen::MatrixXd B;    // d2 x d2 spatial kernel
    double sigma2 = 0.0;
    NormalizationRecord normalization;
    FitBandwidths bandwidths;
    ModelMeta meta;
};

// Mean surface on the grid: unit-weight surface smoother of the pooled
// (gridded) observations. Throws DegenerateWindow if a cell stays unresolved
// after the fallback.
Eigen::MatrixXd estimate_mean(const std::vector<MaskedGridSample>& samples, const Grid2& grid,
                              const Bandwidths2& bw, const FallbackPolicy& policy = {});
Eigen::MatrixXd estimate_mean(const SparseDataset& ds, const Grid2& grid, const Bandwidths2& bw,
                              const FallbackPolicy& policy = {});

// Per-surface pooling of raw covariances with the held-fixed kernel zeroed on
// its diagonal: W_n = Q Btilde2 Q^T, Z_n = (Y Btilde Y^T) / W_n entrywise,
// zero where W_n is zero.
struct MarginalClouds {
    std::vector<Eigen::MatrixXd> Z;
    std::vector<Eigen::MatrixXd> W;
};

MarginalClouds marginalize_temporal(const std::vector<MaskedGridSample>& centered,
                                    const Eigen::MatrixXd& B);
MarginalClouds marginalize_spatial(const std::vector<MaskedGridSample>& centered,
                                   const Eigen::MatrixXd& A);

// Noise level: smooth the diagonal raw covariances into V and average
// V - diag(A) diag(B)^T over the cells with midpoints strictly inside
// [1/4,3/4]^2 (all cells if that region is empty), clamped at zero.
double estimate_noise(const std::vector<MaskedGridSample>& centered, const Grid2& grid,
                      const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Bandwidths2& bw,
                      const FallbackPolicy& policy = {});

// Rescales so trace(A) = 1 with the scale pushed into B; the product is
// unchanged. Throws NonPositiveTrace when trace(A) <= 0.
SeparableModel normalize(SeparableModel model);

// The two-step (by default) separable fit: mean, centering, alternating
// temporal/spatial sweeps starting from the all-ones spatial weighting, noise
// level, trace normalization.
SeparableModel fit_separable(const SparseDataset& ds, const Grid2& grid,
                             const FitOptions& opts = {});

// Lossless JSON round-trip of the fitted model. extra_json, when nonempty,
// must be a JSON object whose fields are merged at the top level.
std::string model_to_json_string(const SeparableModel& model, const std::string& extra_json = "");
SeparableModel model_from_json_string(const std::string& text);
void write_model_json(const std::string& path, const SeparableModel& model,
                      const std::string& extra_json = "");
SeparableModel read_model_json(const std::string& path);

} // namespace sepsurf
