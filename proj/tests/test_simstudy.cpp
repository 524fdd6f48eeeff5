#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "sepsurf/baselines.hpp"
#include "sepsurf/errors.hpp"
#include "sepsurf/simstudy.hpp"

#include <chrono>
#include <cmath>
#include <set>

using namespace sepsurf;

TEST_CASE("scenario covariances are standardized to trace one") {
    const Grid2 grid(12, 12);
    for (ScenarioKind kind : {ScenarioKind::fourier, ScenarioKind::brownian,
                              ScenarioKind::gneiting, ScenarioKind::fourier_legendre}) {
        const ScenarioCovariance cov = scenario_covariance({kind, grid});
        CHECK(std::abs(cov.trace() - 1.0) < 1e-10);
    }
}

TEST_CASE("separable scenarios factor exactly") {
    const Grid2 grid(10, 10);
    for (ScenarioKind kind : {ScenarioKind::fourier, ScenarioKind::brownian}) {
        const ScenarioCovariance cov = scenario_covariance({kind, grid});
        REQUIRE(cov.separable());
        const auto& [a, b] = cov.terms[0];
        for (std::uint64_t k = 0; k < 8; ++k) {
            const int i = static_cast<int>(oracles::runif(60 + k, 0) * 10);
            const int j = static_cast<int>(oracles::runif(60 + k, 1) * 10);
            const int i2 = static_cast<int>(oracles::runif(60 + k, 2) * 10);
            const int j2 = static_cast<int>(oracles::runif(60 + k, 3) * 10);
            CHECK(std::abs(cov.value(i, j, i2, j2) - a(i, i2) * b(j, j2)) < 1e-12);
        }
    }
}

TEST_CASE("kernel building blocks") {
    CHECK(wiener_kernel(0.3, 0.7) == 0.3);
    CHECK(wiener_kernel(0.7, 0.3) == 0.3);

    // Zero lag equals sigma^2 = 1; unit spatial lag at zero temporal lag
    // decays to exp(-1) under the negative-exponent convention.
    CHECK(gneiting_covariance(0.4, 0.2, 0.4, 0.2) == doctest::Approx(1.0));
    CHECK(gneiting_covariance(0.5, 0.0, 0.5, 1.0) == doctest::Approx(std::exp(-1.0)));

    // Fourier kernel: symmetric, unit-integral eigenfunctions give trace
    // sum k^-2 on the diagonal integral; spot-check symmetry and positivity
    // of the diagonal.
    CHECK(fourier_kernel(0.3, 0.8) == doctest::Approx(fourier_kernel(0.8, 0.3)));
    CHECK(fourier_kernel(0.25, 0.25) > 0.0);
    CHECK(legendre_kernel(0.3, 0.8) == doctest::Approx(legendre_kernel(0.8, 0.3)));
}

TEST_CASE("gneiting scenario is strictly non-separable") {
    const Grid2 grid(8, 8);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::gneiting, grid});
    const BsaResult res = bsa(cov.to_dense());
    CHECK(relative_error(ScenarioCovariance(res.A, res.B), cov) > 0.01);
}

TEST_CASE("subsampling retains exactly ceil(p d1 d2) cells") {
    const Grid2 grid(20, 20);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::brownian, grid});
    const SparseDataset ds = sample_surfaces(cov, grid, 5, -1.0, 0.02, 11);
    std::vector<int> counts(5, 0);
    for (const auto& obs : ds.observations) ++counts[static_cast<std::size_t>(obs.surface_id)];
    for (int c : counts) CHECK(c == 8); // 0.02 * 400

    // Distinct cells per surface (no replacement).
    std::set<std::pair<double, double>> locs;
    for (const auto& obs : ds.observations)
        if (obs.surface_id == 0) locs.emplace(obs.t, obs.s);
    CHECK(locs.size() == 8);
}

TEST_CASE("simulation is deterministic in the seed") {
    const Grid2 grid(10, 10);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::fourier, grid});
    const SparseDataset a = sample_surfaces(cov, grid, 7, -1.0, 0.3, 5);
    const SparseDataset b = sample_surfaces(cov, grid, 7, -1.0, 0.3, 5);
    REQUIRE(a.observations.size() == b.observations.size());
    for (std::size_t k = 0; k < a.observations.size(); ++k) {
        CHECK(a.observations[k].t == b.observations[k].t);
        CHECK(a.observations[k].y == b.observations[k].y);
    }
    const SparseDataset c = sample_surfaces(cov, grid, 7, -1.0, 0.3, 6);
    bool same = a.observations.size() == c.observations.size();
    if (same)
        for (std::size_t k = 0; k < a.observations.size(); ++k)
            same = same && a.observations[k].y == c.observations[k].y;
    CHECK_FALSE(same);
}

TEST_CASE("empirical covariance of many full draws approaches the truth") {
    const Grid2 grid(10, 10);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::brownian, grid});
    const SimulatedBatch batch = simulate_batch(cov, grid, 10000, 0.0, 1.0, 123);
    const FullCovariance emp = empirical_covariance(batch.latent);
    CHECK(relative_error(ScenarioCovariance(emp), cov) < 0.1);
}

TEST_CASE("relative error normalization") {
    const Grid2 grid(6, 6);
    const ScenarioCovariance truth = scenario_covariance({ScenarioKind::fourier, grid});
    CHECK(relative_error(truth, truth) == 0.0);

    ScenarioCovariance zero(Eigen::MatrixXd::Zero(6, 6), Eigen::MatrixXd::Zero(6, 6));
    CHECK(relative_error(zero, truth) == doctest::Approx(1.0));

    ScenarioCovariance twice = truth;
    for (auto& [a, b] : twice.terms) a *= 2.0;
    CHECK(relative_error(twice, truth) == doctest::Approx(1.0));

    const Grid2 other(5, 5);
    CHECK_THROWS_AS(relative_error(scenario_covariance({ScenarioKind::fourier, other}), truth),
                    DataError);
}

TEST_CASE("indefinite covariances are rejected") {
    const Grid2 grid(2, 2);
    Eigen::MatrixXd bad(2, 2);
    bad << 1.0, 2.0, 2.0, 1.0; // eigenvalues 3 and -1
    const ScenarioCovariance cov(bad, Eigen::MatrixXd::Identity(2, 2));
    CHECK_THROWS_AS(sample_surfaces(cov, grid, 3, 0.0, 1.0, 1), NonPsdCovariance);
}

TEST_CASE("non-marginalized reference path reproduces the pooled fit") {
    const Grid2 grid(8, 8);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::fourier, grid});
    const SimulatedBatch batch = simulate_batch(cov, grid, 30, -1.0, 0.3, 44);
    FitOptions opts;
    FitBandwidths bw;
    bw.mean = bw.temporal = bw.spatial = bw.diagonal = Bandwidths2(0.25, 0.25);
    opts.bandwidths = bw;
    const SeparableModel pooled = fit_separable(batch.sparse, grid, opts);
    const SeparableModel unpooled = fit_separable_nonmarginalized(batch.sparse, grid, opts);
    double max_diff = 0.0;
    for (int i = 0; i < 8; ++i)
        for (int i2 = 0; i2 < 8; ++i2)
            for (int j = 0; j < 8; ++j)
                for (int j2 = 0; j2 < 8; ++j2)
                    max_diff = std::max(max_diff,
                                        std::abs(pooled.A(i, i2) * pooled.B(j, j2) -
                                                 unpooled.A(i, i2) * unpooled.B(j, j2)));
    CHECK(max_diff < 1e-10);
    CHECK(pooled.sigma2 == doctest::Approx(unpooled.sigma2).epsilon(1e-10));
}

TEST_CASE("hold-out harness: self-ratio, oracle gain, skip accounting") {
    const Grid2 grid(8, 8);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::brownian, grid});
    const SimulatedBatch batch = simulate_batch(cov, grid, 40, -1.0, 0.4, 314);

    SeparableModel oracle;
    oracle.grid = grid;
    oracle.mean = Eigen::MatrixXd::Zero(8, 8);
    oracle.A = cov.terms[0].first;
    oracle.B = cov.terms[0].second;
    oracle.sigma2 = batch.noise_sigma2;

    HoldoutPattern pattern;
    pattern.kind = HoldoutPattern::Kind::itm;
    HoldoutOptions opts;
    opts.folds = 5;
    opts.seed = 2;
    const HoldoutReport report = holdout_evaluate(
        batch.sparse, grid, pattern,
        {EvalMethod::presmooth_benchmark(), EvalMethod::oracle_model(oracle)}, opts);

    for (const auto& row : report.rows)
        if (row.method == "presmooth") CHECK(row.rmse_ratio == 1.0);
    CHECK(report.median_ratio.at("presmooth") == 1.0);
    CHECK(report.median_ratio.at("oracle") < 1.0);
}

TEST_CASE("hold-out pattern construction and skips") {
    const Grid2 grid(6, 6);
    SparseDataset ds;
    ds.n_surfaces = 6;
    // Surfaces 0-3: observations in two maturities rows; 4-5: only one row.
    for (int surf = 0; surf < 4; ++surf)
        for (int j = 0; j < 6; ++j) {
            ds.observations.push_back({surf, grid.t_mid(1), grid.s_mid(j), 1.0 + j});
            ds.observations.push_back({surf, grid.t_mid(4), grid.s_mid(j), 2.0 + j});
        }
    for (int surf = 4; surf < 6; ++surf)
        for (int j = 0; j < 6; ++j)
            ds.observations.push_back({surf, grid.t_mid(2), grid.s_mid(j), 1.0});

    HoldoutPattern chain;
    chain.kind = HoldoutPattern::Kind::chain;
    HoldoutOptions opts;
    opts.folds = 2;
    opts.seed = 1;
    const HoldoutReport report =
        holdout_evaluate(ds, grid, chain, {EvalMethod::presmooth_benchmark()}, opts);
    CHECK(report.skipped_surfaces == 2); // single-chain surfaces cannot be split
    // Two tasks per remaining surface.
    CHECK(report.rows.size() == 8);

    // A moneyness pattern with every observation strictly on one side skips
    // all surfaces.
    SparseDataset one_sided;
    one_sided.n_surfaces = 4;
    for (int surf = 0; surf < 4; ++surf)
        for (int j = 4; j < 6; ++j) // s > 0.5 only
            one_sided.observations.push_back({surf, grid.t_mid(surf), grid.s_mid(j), 1.0 + j});
    HoldoutPattern itm;
    itm.kind = HoldoutPattern::Kind::itm;
    const HoldoutReport skipped =
        holdout_evaluate(one_sided, grid, itm, {EvalMethod::presmooth_benchmark()}, opts);
    CHECK(skipped.skipped_surfaces == 4);
    CHECK(skipped.rows.empty());
}

TEST_CASE("error benchmark emits one row per (p, method, replicate)") {
    const Grid2 grid(6, 6);
    FitBandwidths bw;
    bw.mean = bw.temporal = bw.spatial = bw.diagonal = Bandwidths2(0.3, 0.3);
    const auto rows = error_benchmark({ScenarioKind::brownian, grid}, {0.2, 0.5}, 20, 3,
                                      {"onestep", "separable", "bsa"}, 9, bw);
    CHECK(rows.size() == 2 * 3 * 3);
    for (const auto& row : rows) {
        CHECK(row.rel_error >= 0.0);
        CHECK(std::isfinite(row.rel_error));
    }
    // Bit-identical rerun under the same seed.
    const auto again = error_benchmark({ScenarioKind::brownian, grid}, {0.2, 0.5}, 20, 3,
                                       {"onestep", "separable", "bsa"}, 9, bw);
    for (std::size_t k = 0; k < rows.size(); ++k)
        CHECK(rows[k].rel_error == again[k].rel_error);
}

TEST_CASE("runtime benchmark smoke run finishes quickly") {
    const Grid2 grid(4, 4);
    FitBandwidths bw;
    bw.mean = bw.temporal = bw.spatial = bw.diagonal = Bandwidths2(0.4, 0.4);
    const auto start = std::chrono::steady_clock::now();
    const auto rows = runtime_benchmark({ScenarioKind::brownian, grid}, 0.5, 5, 1, bw, 1);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(rows.size() == 3);
    CHECK(elapsed < 1.0);
}
