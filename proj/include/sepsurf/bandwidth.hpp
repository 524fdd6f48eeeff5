#pragma once

#include "sepsurf/data.hpp"
#include "sepsurf/grid.hpp"
#include "sepsurf/smoothing.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace sepsurf {

// K-fold cross-validation over surfaces. Candidates are symmetric bandwidth
// pairs (h, h); the default ladder is geometric from 1.5 cell widths to half
// the domain.
struct CvSpec {
    int folds = 10;
    std::vector<double> candidates; // empty => default ladder for the grid
    std::uint64_t seed = 0;
};

std::vector<double> default_candidate_ladder(const Grid2& grid, int count = 8);

// Deterministic fold labels in [0, folds) from a seeded shuffle of ids.
std::vector<int> fold_assignment(int n_surfaces, int folds, std::uint64_t seed);

struct CvReport {
    std::vector<double> candidates;
    std::vector<double> scores; // accumulated squared error per candidate
    double chosen = 0.0;
    std::uint64_t fold_seed = 0;
};

// Bandwidth for the mean smoother: held-out squared error of the train-fold
// mean surface at the held-out observations' cells. Ties go to the larger
// bandwidth.
Bandwidths2 cv_mean_bandwidth(const SparseDataset& ds, const Grid2& grid, const CvSpec& spec,
                              CvReport* report = nullptr);

// Bandwidths for the two covariance smoothers: held-out weighted error
// sum W (Z_holdout - smoothed)^2 of the pooled marginal clouds, scored
// separately for the temporal sweep (all-ones weighting) and the spatial
// sweep (weighted by the train fold's preliminary temporal kernel). Centering
// uses the full-data mean with mean_bw (cross-validated here when null).
std::pair<Bandwidths2, Bandwidths2> cv_covariance_bandwidths(const SparseDataset& ds,
                                                             const Grid2& grid, const CvSpec& spec,
                                                             CvReport* report_a = nullptr,
                                                             CvReport* report_b = nullptr,
                                                             const Bandwidths2* mean_bw = nullptr);

// Bandwidth transfer to the 4D baseline: temporal axes get the temporal
// bandwidth, spatial axes the spatial one; asymmetric pairs are averaged.
Bandwidths4 transfer_to_4d(const Bandwidths2& bw_a, const Bandwidths2& bw_b);

} // namespace sepsurf
