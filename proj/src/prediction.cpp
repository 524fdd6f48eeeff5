#include "sepsurf/prediction.hpp"

#include "sepsurf/errors.hpp"
#include "sepsurf/linalg.hpp"
#include "sepsurf/parallel.hpp"
#include "sepsurf/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace sepsurf {

void NewObservations::validate() const {
    if (y.empty()) throw DataError("prediction requires at least one observation");
    if (t.size() != y.size() || s.size() != y.size())
        throw DataError("observation coordinate/value lengths differ");
    for (std::size_t m = 0; m < y.size(); ++m) {
        if (!(t[m] >= 0.0 && t[m] <= 1.0 && s[m] >= 0.0 && s[m] <= 1.0))
            throw DataError("observation coordinates must lie in [0,1]^2");
        if (!std::isfinite(y[m])) throw DataError("observation values must be finite");
    }
}

namespace {

struct SolvedSystem {
    std::vector<int> oi, oj;      // observation cells
    Eigen::MatrixXd cross;        // (d1*d2) x M cross covariance
    Eigen::VectorXd marginal;     // d1*d2 marginal variances
    Eigen::MatrixXd whitened;     // cross * U * Lambda^{-1/2}
    Eigen::VectorXd alpha;        // var^{-1} (y - mu_obs)
};

SolvedSystem solve_system(const Grid2& grid, const Eigen::MatrixXd& mean,
                          const std::function<double(int, int, int, int)>& cov, double sigma2,
                          const NewObservations& obs, double ridge) {
    obs.validate();
    if (ridge < 0.0) throw DataError("ridge must be nonnegative");
    const int m_new = static_cast<int>(obs.size());

    SolvedSystem sys;
    sys.oi.resize(static_cast<std::size_t>(m_new));
    sys.oj.resize(static_cast<std::size_t>(m_new));
    for (int m = 0; m < m_new; ++m) {
        sys.oi[static_cast<std::size_t>(m)] = grid.t_cell(obs.t[static_cast<std::size_t>(m)]);
        sys.oj[static_cast<std::size_t>(m)] = grid.s_cell(obs.s[static_cast<std::size_t>(m)]);
    }

    Eigen::MatrixXd var(m_new, m_new);
    for (int m = 0; m < m_new; ++m)
        for (int m2 = 0; m2 < m_new; ++m2) {
            var(m, m2) = cov(sys.oi[static_cast<std::size_t>(m)],
                             sys.oj[static_cast<std::size_t>(m)],
                             sys.oi[static_cast<std::size_t>(m2)],
                             sys.oj[static_cast<std::size_t>(m2)]);
            if (m == m2) var(m, m2) += sigma2;
        }
    const double mean_diag = var.diagonal().mean();
    if (ridge > 0.0) var.diagonal().array() += ridge * mean_diag;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrized(var));
    if (es.info() != Eigen::Success)
        throw SingularSystem("eigendecomposition of var(Y_new) failed");
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12)
        throw SingularSystem("var(Y_new) is numerically singular (condition estimate " +
                             std::to_string(lo > 0.0 ? hi / lo : std::nan("")) +
                             "); increase the ridge");

    Eigen::VectorXd resid(m_new);
    for (int m = 0; m < m_new; ++m)
        resid(m) = obs.y[static_cast<std::size_t>(m)] -
                   mean(sys.oi[static_cast<std::size_t>(m)], sys.oj[static_cast<std::size_t>(m)]);
    const Eigen::VectorXd inv_lambda = es.eigenvalues().cwiseInverse();
    sys.alpha = es.eigenvectors() *
                (inv_lambda.asDiagonal() * (es.eigenvectors().transpose() * resid));

    const std::size_t g = grid.cells();
    sys.cross.resize(static_cast<Eigen::Index>(g), m_new);
    sys.marginal.resize(static_cast<Eigen::Index>(g));
    for (int i = 0; i < grid.d1; ++i)
        for (int j = 0; j < grid.d2; ++j) {
            const Eigen::Index cell = static_cast<Eigen::Index>(i) * grid.d2 + j;
            sys.marginal(cell) = cov(i, j, i, j);
            for (int m = 0; m < m_new; ++m)
                sys.cross(cell, m) = cov(i, j, sys.oi[static_cast<std::size_t>(m)],
                                         sys.oj[static_cast<std::size_t>(m)]);
        }
    const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseSqrt().cwiseInverse();
    sys.whitened = sys.cross * es.eigenvectors() * inv_sqrt.asDiagonal();
    return sys;
}

BlupResult result_from_system(const Grid2& grid, const Eigen::MatrixXd& mean,
                              const SolvedSystem& sys) {
    BlupResult res;
    res.predicted.resize(grid.d1, grid.d2);
    res.cond_var.resize(grid.d1, grid.d2);
    const Eigen::VectorXd shift = sys.cross * sys.alpha;
    for (int i = 0; i < grid.d1; ++i)
        for (int j = 0; j < grid.d2; ++j) {
            const Eigen::Index cell = static_cast<Eigen::Index>(i) * grid.d2 + j;
            res.predicted(i, j) = mean(i, j) + shift(cell);
            res.cond_var(i, j) =
                std::max(sys.marginal(cell) - sys.whitened.row(cell).squaredNorm(), 0.0);
        }
    return res;
}

std::function<double(int, int, int, int)> separable_cov(const SeparableModel& model) {
    return [&model](int i, int j, int i2, int j2) { return model.A(i, i2) * model.B(j, j2); };
}

} // namespace

BlupResult blup_with_covariance(const Grid2& grid, const Eigen::MatrixXd& mean,
                                const std::function<double(int, int, int, int)>& cov,
                                double sigma2, const NewObservations& obs, double ridge) {
    const SolvedSystem sys = solve_system(grid, mean, cov, sigma2, obs, ridge);
    return result_from_system(grid, mean, sys);
}

BlupResult blup(const SeparableModel& model, const NewObservations& obs, double ridge) {
    return blup_with_covariance(model.grid, model.mean, separable_cov(model), model.sigma2, obs,
                                ridge);
}

void pointwise_band(BlupResult& result, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must be in (0,1)");
    result.alpha = alpha;
    result.u_quantile = rng::normal_quantile(1.0 - alpha / 2.0);
    result.pointwise_halfwidth = result.u_quantile * result.cond_var.cwiseSqrt();
}

void simultaneous_band(const SeparableModel& model, const NewObservations& obs, BlupResult& result,
                       double alpha, int n_draws, std::uint64_t seed) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("alpha must be in (0,1)");
    if (n_draws < 1) throw DataError("n_draws must be positive");
    const Grid2& grid = model.grid;
    const SolvedSystem sys =
        solve_system(grid, model.mean, separable_cov(model), model.sigma2, obs, 1e-8);

    // Conditional covariance on the grid, then the correlation with zero rows
    // at zero-variance cells.
    const std::size_t g = grid.cells();
    Eigen::MatrixXd cond(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g));
    for (Eigen::Index a = 0; a < cond.rows(); ++a) {
        const int i = static_cast<int>(a) / grid.d2;
        const int j = static_cast<int>(a) % grid.d2;
        for (Eigen::Index b = 0; b <= a; ++b) {
            const int i2 = static_cast<int>(b) / grid.d2;
            const int j2 = static_cast<int>(b) % grid.d2;
            const double v = model.A(i, i2) * model.B(j, j2) -
                             sys.whitened.row(a).dot(sys.whitened.row(b));
            cond(a, b) = v;
            cond(b, a) = v;
        }
    }
    Eigen::VectorXd diag = cond.diagonal().cwiseMax(0.0);
    const double var_floor = 1e-12 * std::max(sys.marginal.maxCoeff(), 0.0);
    Eigen::MatrixXd corr = Eigen::MatrixXd::Zero(cond.rows(), cond.cols());
    for (Eigen::Index a = 0; a < cond.rows(); ++a) {
        if (diag(a) <= var_floor) continue;
        corr(a, a) = 1.0;
        for (Eigen::Index b = 0; b < a; ++b) {
            if (diag(b) <= var_floor) continue;
            // Smoothed kernels need not be PSD, so the raw ratio can leave
            // [-1, 1]; clamp before factorizing.
            const double r =
                std::clamp(cond(a, b) / std::sqrt(diag(a) * diag(b)), -1.0, 1.0);
            corr(a, b) = r;
            corr(b, a) = r;
        }
    }
    if (!corr.allFinite()) throw FactorizationFailure("conditional correlation is not finite");

    // Symmetric factorization with eigenvalue clipping; jitter escalates only
    // if the eigensolver itself gives up.
    Eigen::MatrixXd factor;
    double jitter = 0.0;
    for (;;) {
        try {
            factor = psd_factor(jitter > 0.0
                                    ? (corr + jitter * Eigen::MatrixXd::Identity(
                                                           corr.rows(), corr.cols()))
                                          .eval()
                                    : corr);
            break;
        } catch (const FactorizationFailure&) {
            jitter = (jitter == 0.0) ? 1e-10 : jitter * 10.0;
            if (jitter > 1e-6) throw;
        }
    }
    // Eigenvalue clipping inflates the diagonal wherever negative directions
    // were removed; rescale rows so the simulated field has exactly unit
    // variance on active cells, as the correlation target requires.
    for (Eigen::Index a = 0; a < factor.rows(); ++a) {
        const double norm = factor.row(a).norm();
        if (norm > 0.0) factor.row(a) /= norm;
    }

    // Empirical quantile of the max-abs statistic over the grid. Draw r uses
    // counters [r*g, (r+1)*g), so any thread layout yields the same fields.
    std::vector<double> sups(static_cast<std::size_t>(n_draws), 0.0);
    const Eigen::Index dim = factor.cols();
    parallel_for(static_cast<std::size_t>(n_draws), [&](std::size_t begin, std::size_t end) {
        constexpr std::size_t block = 64;
        Eigen::MatrixXd xi(dim, static_cast<Eigen::Index>(block));
        for (std::size_t r0 = begin; r0 < end; r0 += block) {
            const std::size_t nb = std::min(block, end - r0);
            for (std::size_t c = 0; c < nb; ++c) {
                const std::uint64_t base =
                    static_cast<std::uint64_t>(r0 + c) * static_cast<std::uint64_t>(g);
                for (Eigen::Index k = 0; k < dim; ++k)
                    xi(k, static_cast<Eigen::Index>(c)) = rng::normal(
                        seed, rng::stream::band_draws, base + static_cast<std::uint64_t>(k));
            }
            const Eigen::MatrixXd fields =
                factor * xi.leftCols(static_cast<Eigen::Index>(nb));
            for (std::size_t c = 0; c < nb; ++c)
                sups[r0 + c] = fields.col(static_cast<Eigen::Index>(c)).cwiseAbs().maxCoeff();
        }
    });
    std::sort(sups.begin(), sups.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::min<long long>(n_draws - 1,
                            std::max<long long>(0, static_cast<long long>(std::ceil(
                                                       (1.0 - alpha) * n_draws)) -
                                                       1)));
    const double z = sups[rank];

    result.alpha = alpha;
    result.z_quantile = z;
    result.seed = seed;
    result.n_draws = n_draws;
    result.simultaneous_halfwidth = z * result.cond_var.cwiseSqrt();
}

std::string blup_to_json_string(const BlupResult& result, const std::string& extra_json) {
    using json = nlohmann::json;
    auto mat = [](const Eigen::MatrixXd& m) {
        json arr = json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
        return arr;
    };
    json doc;
    doc["predicted"] = mat(result.predicted);
    doc["cond_var"] = mat(result.cond_var);
    doc["pointwise_halfwidth"] = mat(result.pointwise_halfwidth);
    doc["simultaneous_halfwidth"] = mat(result.simultaneous_halfwidth);
    doc["alpha"] = result.alpha;
    doc["u_quantile"] = result.u_quantile;
    doc["z_quantile"] = result.z_quantile;
    doc["seed"] = result.seed;
    doc["n_draws"] = result.n_draws;
    if (!extra_json.empty()) {
        const json extra = json::parse(extra_json);
        for (const auto& [key, value] : extra.items()) doc[key] = value;
    }
    return doc.dump(2);
}

} // namespace sepsurf
