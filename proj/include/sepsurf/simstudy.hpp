#pragma once

#include "sepsurf/baselines.hpp"
#include "sepsurf/data.hpp"
#include "sepsurf/grid.hpp"
#include "sepsurf/prediction.hpp"
#include "sepsurf/separable.hpp"
#include "sepsurf/tensor4.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sepsurf {

enum class ScenarioKind { fourier, brownian, gneiting, fourier_legendre };

ScenarioKind scenario_kind_from_string(const std::string& name);
std::string to_string(ScenarioKind kind);

struct Scenario {
    ScenarioKind kind = ScenarioKind::brownian;
    Grid2 grid;
};

// Univariate building blocks, before trace normalization.
double fourier_kernel(double t, double t2);  // 10 trigonometric eigenfunctions, k^-2 decay
double wiener_kernel(double t, double t2);   // min(t, t2)
double legendre_kernel(double t, double t2); // rank-4 shifted Legendre basis, k^-2 decay
// Gneiting (2002) class with a = b = tau = alpha = gamma = sigma^2 = 1,
// beta = 0.7 and a negative exponent.
double gneiting_covariance(double t, double s, double t2, double s2);

// Covariance operand: either a sum of Kronecker terms or a dense tensor.
// Scenario covariances are standardized to trace one on their grid.
struct ScenarioCovariance {
    std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> terms; // sum_k A_k x B_k
    std::optional<FullCovariance> dense;

    ScenarioCovariance() = default;
    ScenarioCovariance(Eigen::MatrixXd A, Eigen::MatrixXd B) {
        terms.emplace_back(std::move(A), std::move(B));
    }
    explicit ScenarioCovariance(FullCovariance c) : dense(std::move(c)) {}

    bool separable() const { return !dense && terms.size() == 1; }
    double trace() const;
    double value(int i, int j, int i2, int j2) const;
    void scale(double factor); // multiplies the covariance by factor
    FullCovariance to_dense() const;
    int d1() const;
    int d2() const;
};

ScenarioCovariance scenario_covariance(const Scenario& sc);

// Zero-mean matrix-variate Gaussian surfaces on the grid (drawn through the
// Kronecker factors when the covariance is a Kronecker sum), noise added,
// then ceil(p d1 d2) cells retained uniformly at random per surface.
// noise_sigma2 < 0 selects the trace-one default 1/(d1 d2).
struct SimulatedBatch {
    SparseDataset sparse;
    std::vector<Eigen::MatrixXd> latent; // noiseless full surfaces
    double noise_sigma2 = 0.0;
};

SimulatedBatch simulate_batch(const ScenarioCovariance& cov, const Grid2& grid, int n,
                              double noise_sigma2, double sparsity_p, std::uint64_t seed);

SparseDataset sample_surfaces(const ScenarioCovariance& cov, const Grid2& grid, int n,
                              double noise_sigma2, double sparsity_p, std::uint64_t seed);

// Frobenius norm of the difference over the Frobenius norm of the truth;
// Kronecker operands are contracted without materializing the d^2 x d^2
// matrix.
double relative_error(const ScenarioCovariance& estimate, const ScenarioCovariance& truth);

// Reference estimation path that feeds every raw covariance pair to the
// smoother individually; same estimates as fit_separable, quadratically more
// scatter points.
SeparableModel fit_separable_nonmarginalized(const SparseDataset& ds, const Grid2& grid,
                                             const FitOptions& opts = {});

// ---- Hold-out evaluation (leave-one-chain-out and friends) ----

struct HoldoutPattern {
    enum class Kind { chain, itm, otm, short_maturity, long_maturity };
    Kind kind = Kind::chain;
    // Thresholds in grid coordinates: moneyness 1 and the 183-day maturity
    // under the default ingestion scaling.
    double t_threshold = 169.0 / 351.0;
    double s_threshold = 0.5;
};

HoldoutPattern::Kind holdout_kind_from_string(const std::string& name);
std::string to_string(HoldoutPattern::Kind kind);

struct EvalMethod {
    enum class Kind { presmooth, separable, fourd, oracle };
    Kind kind = Kind::separable;
    std::string name;
    FitOptions fit;                       // separable and fourd bandwidth resolution
    std::optional<SeparableModel> oracle; // oracle kind: the true model
    std::optional<Bandwidths4> bw4;       // fourd override; default transfers the CV choice

    static EvalMethod presmooth_benchmark();
    static EvalMethod separable_fit(FitOptions opts = {});
    static EvalMethod fourd_fit(FitOptions opts = {}, std::optional<Bandwidths4> bw = {});
    static EvalMethod oracle_model(SeparableModel model);
};

struct HoldoutOptions {
    int folds = 10;
    Bandwidths2 presmooth_bw{0.15, 0.15}; // the Eq.-(16) benchmark smoother
    double ridge = 1e-8;
    std::uint64_t seed = 0;
};

struct HoldoutRow {
    int fold = 0;
    int surface_id = 0;
    int task = 0;
    std::string method;
    double rmse_ratio = 0.0;
};

struct HoldoutReport {
    std::vector<HoldoutRow> rows;
    std::map<std::string, double> median_ratio;
    std::size_t skipped_surfaces = 0; // discarded or kept part empty
    std::size_t skipped_tasks = 0;    // zero benchmark error
};

HoldoutReport holdout_evaluate(const SparseDataset& ds, const Grid2& grid,
                               const HoldoutPattern& pattern,
                               const std::vector<EvalMethod>& methods,
                               const HoldoutOptions& opts);

// ---- Benchmarks ----

struct ErrorRow {
    std::string scenario;
    double p = 0.0;
    int n = 0;
    std::string method;
    int replicate = 0;
    double rel_error = 0.0;
};

// Relative estimation errors per (p, method, replicate); methods from
// {"onestep", "separable", "fourd", "bsa"}.
std::vector<ErrorRow> error_benchmark(const Scenario& sc, const std::vector<double>& ps, int n,
                                      int replicates, const std::vector<std::string>& methods,
                                      std::uint64_t seed,
                                      const std::optional<FitBandwidths>& fixed_bw = {});

struct TimingRow {
    std::string scenario;
    double p = 0.0;
    int n = 0;
    std::string method;
    int replicate = 0;
    double seconds = 0.0;
};

// Wall times at matched bandwidths for the pooled separable fit, the
// non-marginalized reference path, and 4D smoothing.
std::vector<TimingRow> runtime_benchmark(const Scenario& sc, double p, int n, int replicates,
                                         const FitBandwidths& bw, std::uint64_t seed);

} // namespace sepsurf
