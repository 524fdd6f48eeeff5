#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "sepsurf/baselines.hpp"
#include "sepsurf/errors.hpp"
#include "sepsurf/separable.hpp"
#include "sepsurf/simstudy.hpp"

#include <cmath>

using namespace sepsurf;

namespace {

Eigen::MatrixXd random_sym(int d, std::uint64_t seed) {
    Eigen::MatrixXd m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            m(i, j) = oracles::runif(seed, static_cast<std::uint64_t>(i * d + j), -1.0, 1.0);
    return 0.5 * (m + m.transpose()).eval();
}

Tensor4 random_tensor(int d1, int d2, std::uint64_t seed) {
    Tensor4 t(d1, d2, d1, d2);
    std::uint64_t k = 0;
    for (double& v : t.flat()) v = oracles::runif(seed, k++, -1.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("bsa_step: fixed point, partial trace, brute force") {
    const Eigen::MatrixXd a0 = random_sym(3, 1);
    const Eigen::MatrixXd b = random_sym(2, 2);
    const FullCovariance c = kron_tensor(a0, b);

    // Exactly separable input returns the temporal factor unchanged.
    const Eigen::MatrixXd back = bsa_step(c, b);
    CHECK((back - a0).cwiseAbs().maxCoeff() < 1e-12);

    // All-ones weighting averages the spatial slices.
    const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(2, 2);
    const Eigen::MatrixXd avg = bsa_step(c, ones);
    for (int i = 0; i < 3; ++i)
        for (int i2 = 0; i2 < 3; ++i2) {
            double acc = 0.0;
            for (int j = 0; j < 2; ++j)
                for (int j2 = 0; j2 < 2; ++j2) acc += c(i, j, i2, j2);
            CHECK(avg(i, i2) == doctest::Approx(acc / 4.0).epsilon(1e-13));
        }

    // Random tensor against an independent quadruple-loop summation.
    const Tensor4 r = random_tensor(3, 2, 5);
    const Eigen::MatrixXd w = random_sym(2, 6);
    const Eigen::MatrixXd ours = bsa_step(r, w);
    const double denom = w.squaredNorm();
    for (int i = 0; i < 3; ++i)
        for (int i2 = 0; i2 < 3; ++i2) {
            double acc = 0.0;
            for (int j2 = 0; j2 < 2; ++j2)
                for (int j = 0; j < 2; ++j) acc += w(j, j2) * r(i, j, i2, j2);
            CHECK(std::abs(ours(i, i2) - acc / denom) < 1e-12);
        }

    // Homogeneity in the weight matrix.
    const Eigen::MatrixXd scaled = bsa_step(r, (4.0 * w).eval());
    CHECK((scaled - ours / 4.0).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(bsa_step(r, Eigen::MatrixXd::Zero(2, 2)), ZeroDenominator);
}

TEST_CASE("bsa recovers separable tensors immediately") {
    Eigen::MatrixXd a0 = random_sym(4, 11);
    a0 = (a0 * a0.transpose()).eval(); // SPD so the trace is positive
    Eigen::MatrixXd b0 = random_sym(3, 12);
    b0 = (b0 * b0.transpose()).eval();
    const FullCovariance c = kron_tensor(a0, b0);
    const BsaResult res = bsa(c);
    CHECK(res.converged);
    CHECK(res.iterations <= 2);
    CHECK(relative_error(ScenarioCovariance(res.A, res.B), ScenarioCovariance(a0, b0)) < 1e-8);
}

TEST_CASE("bsa on a two-term orthogonal sum finds the dominant term") {
    // Orthogonal rank-one factors; the first term carries most of the mass.
    Eigen::VectorXd u1(3), u2(3), v1(2), v2(2);
    u1 << 1, 1, 1;
    u2 << 1, -1, 0;
    v1 << 1, 1;
    v2 << 1, -1;
    const Eigen::MatrixXd a1 = u1 * u1.transpose();
    const Eigen::MatrixXd a2 = u2 * u2.transpose();
    const Eigen::MatrixXd b1 = v1 * v1.transpose();
    const Eigen::MatrixXd b2 = v2 * v2.transpose();
    Tensor4 c = kron_tensor(a1, b1);
    {
        const Tensor4 minor = kron_tensor(a2, b2);
        for (std::size_t k = 0; k < c.flat().size(); ++k) c.flat()[k] += 0.2 * minor.flat()[k];
    }
    const BsaResult res = bsa(c);
    CHECK(res.converged);

    // Residual mass equals the subdominant term, and the product agrees with
    // the rearrangement-SVD rank-one solution.
    const auto [a_svd, b_svd] = oracles::kron_rank_one(c);
    CHECK(relative_error(ScenarioCovariance(res.A, res.B), ScenarioCovariance(a_svd, b_svd)) <
          1e-7);
    const double minor_mass = 0.2 * a2.norm() * b2.norm();
    Tensor4 resid = c;
    const Tensor4 fitted = kron_tensor(res.A, res.B);
    for (std::size_t k = 0; k < resid.flat().size(); ++k) resid.flat()[k] -= fitted.flat()[k];
    CHECK(tensor_fro_norm(resid) == doctest::Approx(minor_mass).epsilon(1e-6));

    // Local optimality: random perturbations never beat the fixed point.
    const double best = tensor_fro_norm(resid);
    for (std::uint64_t k = 0; k < 100; ++k) {
        Eigen::MatrixXd ap = res.A;
        Eigen::MatrixXd bp = res.B;
        for (int i = 0; i < ap.size(); ++i)
            ap.data()[i] += 0.02 * (oracles::runif(800, 64 * k + static_cast<std::uint64_t>(i)) -
                                    0.5);
        for (int i = 0; i < bp.size(); ++i)
            bp.data()[i] += 0.02 * (oracles::runif(801, 64 * k + static_cast<std::uint64_t>(i)) -
                                    0.5);
        Tensor4 r2 = c;
        const Tensor4 f2 = kron_tensor(ap, bp);
        for (std::size_t kk = 0; kk < r2.flat().size(); ++kk) r2.flat()[kk] -= f2.flat()[kk];
        CHECK(tensor_fro_norm(r2) >= best - 1e-9);
    }

    CHECK_THROWS_AS(bsa(Tensor4(2, 2, 2, 2)), ZeroDenominator);

    BsaResult truncated = bsa(c, 1e-16, 1);
    CHECK_FALSE(truncated.converged);
    CHECK(truncated.iterations == 1);
}

TEST_CASE("presmooth predictor") {
    const Grid2 grid(6, 6);
    // Single observation saturates to a constant surface.
    std::vector<SparseObservation> one = {{0, 0.1, 0.9, 2.5}};
    const Eigen::MatrixXd constant = presmooth_predict(one, grid, Bandwidths2(0.1, 0.1));
    CHECK((constant.array() - 2.5).abs().maxCoeff() < 1e-12);

    // Observations on the line t = 0.5: defined along the band and filled
    // elsewhere by widened windows.
    std::vector<SparseObservation> line;
    for (int j = 0; j < 6; ++j) line.push_back({0, 0.5, grid.s_mid(j), 1.0 + j});
    const Eigen::MatrixXd banded = presmooth_predict(line, grid, Bandwidths2(0.2, 0.2));
    CHECK(banded.allFinite());

    // Dense noiseless surface z = t s is reproduced at interior cells with a
    // two-cell bandwidth.
    std::vector<SparseObservation> dense;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            dense.push_back({0, grid.t_mid(i), grid.s_mid(j), grid.t_mid(i) * grid.s_mid(j)});
    const Eigen::MatrixXd fitted = presmooth_predict(dense, grid, Bandwidths2(2.0 / 6, 2.0 / 6));
    for (int i = 1; i < 5; ++i)
        for (int j = 1; j < 5; ++j)
            CHECK(std::abs(fitted(i, j) - grid.t_mid(i) * grid.s_mid(j)) < 1e-3);

    CHECK_THROWS_AS(presmooth_predict({}, grid, Bandwidths2(0.1, 0.1)), EmptySurface);
}

TEST_CASE("4d covariance smoother: constants and single-pair windows") {
    const Grid2 grid(4, 4);
    std::vector<MaskedGridSample> flat(3);
    for (auto& s : flat) {
        s.values = Eigen::MatrixXd::Ones(4, 4);
        s.mask = Eigen::MatrixXd::Ones(4, 4);
    }
    const FullCovariance constant =
        smooth4d_covariance(flat, grid, Bandwidths4(0.4, 0.4, 0.4, 0.4));
    for (double v : constant.flat()) CHECK(v == doctest::Approx(1.0).epsilon(1e-10));

    // One surface, two isolated observations: with a window catching exactly
    // that pair, the estimate at the pair's location is the raw product.
    MaskedGridSample sparse;
    sparse.values = Eigen::MatrixXd::Zero(4, 4);
    sparse.mask = Eigen::MatrixXd::Zero(4, 4);
    sparse.values(0, 0) = 2.0;
    sparse.mask(0, 0) = 1.0;
    sparse.values(3, 3) = -1.5;
    sparse.mask(3, 3) = 1.0;
    sparse.values(0, 3) = 0.7;
    sparse.mask(0, 3) = 1.0;
    sparse.values(3, 0) = 0.9;
    sparse.mask(3, 0) = 1.0;
    const std::vector<ScatterPoint4> pair_cloud = {
        {grid.t_mid(0), grid.s_mid(0), grid.t_mid(3), grid.s_mid(3), 2.0 * -1.5, 1.0}};
    const double at_pair = smooth4d_at(pair_cloud, Bandwidths4(0.2, 0.2, 0.2, 0.2),
                                       grid.t_mid(0), grid.s_mid(0), grid.t_mid(3),
                                       grid.s_mid(3));
    CHECK(at_pair == doctest::Approx(-3.0));
}

TEST_CASE("4d covariance smoother matches direct weighted least squares") {
    const Grid2 grid(5, 5);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::brownian, grid});
    const SimulatedBatch batch = simulate_batch(cov, grid, 20, -1.0, 0.5, 31);
    const auto samples = grid_dataset(batch.sparse, grid);
    const Eigen::MatrixXd mean = estimate_mean(samples, grid, Bandwidths2(0.4, 0.4));
    const auto centered = center(samples, mean);
    const Bandwidths4 bw(0.45, 0.45, 0.45, 0.45);
    const FullCovariance fitted = smooth4d_covariance(centered, grid, bw);

    // Oracle cloud: every ordered pair of distinct observed cells separately.
    std::vector<ScatterPoint4> cloud;
    for (const auto& s : centered)
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                if (s.mask(i, j) == 0.0) continue;
                for (int i2 = 0; i2 < 5; ++i2)
                    for (int j2 = 0; j2 < 5; ++j2) {
                        if (s.mask(i2, j2) == 0.0 || (i == i2 && j == j2)) continue;
                        cloud.push_back({grid.t_mid(i), grid.s_mid(j), grid.t_mid(i2),
                                         grid.s_mid(j2), s.values(i, j) * s.values(i2, j2),
                                         1.0});
                    }
            }
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            for (int i2 = 0; i2 < 5; ++i2)
                for (int j2 = 0; j2 < 5; ++j2) {
                    const double ref =
                        0.5 * (oracles::wls_smooth4d(cloud, bw, grid.t_mid(i), grid.s_mid(j),
                                                     grid.t_mid(i2), grid.s_mid(j2)) +
                               oracles::wls_smooth4d(cloud, bw, grid.t_mid(i2), grid.s_mid(j2),
                                                     grid.t_mid(i), grid.s_mid(j)));
                    CHECK(std::abs(fitted(i, j, i2, j2) - ref) < 1e-8);
                }
}

TEST_CASE("4d smoother of separable dense data matches the separable fit") {
    const Grid2 grid(8, 8);
    const ScenarioCovariance cov = scenario_covariance({ScenarioKind::brownian, grid});
    const SimulatedBatch batch = simulate_batch(cov, grid, 80, 0.0, 1.0, 77);
    FitOptions opts;
    FitBandwidths bw;
    bw.mean = bw.temporal = bw.spatial = bw.diagonal = Bandwidths2(0.2, 0.2);
    opts.bandwidths = bw;
    const SeparableModel model = fit_separable(batch.sparse, grid, opts);

    const auto samples = grid_dataset(batch.sparse, grid);
    const Eigen::MatrixXd mean = estimate_mean(samples, grid, bw.mean);
    const auto centered = center(samples, mean);
    const FullCovariance c4 =
        smooth4d_covariance(centered, grid, transfer_to_4d(bw.temporal, bw.spatial));
    CHECK(relative_error(ScenarioCovariance(c4), ScenarioCovariance(model.A, model.B)) < 0.05);
}
