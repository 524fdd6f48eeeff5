#pragma once

#include "sepsurf/errors.hpp"
#include "sepsurf/grid.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace sepsurf {

// One noisy measurement of a latent surface at an irregular location.
struct SparseObservation {
    int surface_id = 0;
    double t = 0.0;
    double s = 0.0;
    double y = 0.0;
};

struct SparseDataset {
    std::vector<SparseObservation> observations;
    int n_surfaces = 0;

    void validate() const;
};

// Gridded surface: per-cell averaged values with a 0/1 observation mask.
// Unobserved cells hold exact zeros so the pooling products stay valid.
struct MaskedGridSample {
    Eigen::MatrixXd values; // d1 x d2
    Eigen::MatrixXd mask;   // d1 x d2, entries 0.0 or 1.0
};

// Nearest-cell assignment; several observations in one cell are averaged.
std::vector<MaskedGridSample> grid_dataset(const SparseDataset& ds, const Grid2& grid);

// Subtracts the mean grid on masked cells; mask is unchanged.
std::vector<MaskedGridSample> center(const std::vector<MaskedGridSample>& samples,
                                     const Eigen::MatrixXd& mean_grid);

// CSV with header "surface_id,t,s,y", one observation per row. validate
// enforces the pairing invariant needed by the covariance estimators;
// prediction inputs may skip it.
SparseDataset read_dataset_csv(std::istream& in, bool validate = true);
SparseDataset read_dataset_csv(const std::string& path, bool validate = true);
void write_dataset_csv(std::ostream& out, const SparseDataset& ds);
void write_dataset_csv(const std::string& path, const SparseDataset& ds);

} // namespace sepsurf
