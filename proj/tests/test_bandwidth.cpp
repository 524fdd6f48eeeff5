#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "sepsurf/bandwidth.hpp"
#include "sepsurf/errors.hpp"
#include "sepsurf/parallel.hpp"
#include "sepsurf/separable.hpp"
#include "sepsurf/simstudy.hpp"

#include <algorithm>
#include <cmath>

using namespace sepsurf;

namespace {

SparseDataset mean_only_dataset(int n, double (*mu)(double, double), double noise,
                                std::uint64_t seed) {
    SparseDataset ds;
    ds.n_surfaces = n;
    for (int surf = 0; surf < n; ++surf)
        for (int m = 0; m < 50; ++m) {
            const std::uint64_t k =
                (static_cast<std::uint64_t>(surf) << 16) + static_cast<std::uint64_t>(m);
            SparseObservation obs;
            obs.surface_id = surf;
            obs.t = rng::uniform01(seed, 1, 3 * k);
            obs.s = rng::uniform01(seed, 2, 3 * k + 1);
            obs.y = mu(obs.t, obs.s) + noise * rng::normal(seed, 3, 3 * k + 2);
            ds.observations.push_back(obs);
        }
    return ds;
}

// Same design but with locations snapped to grid midpoints, where linear
// means are represented without discretization error.
SparseDataset mean_only_dataset_on_grid(int n, const Grid2& grid, double (*mu)(double, double),
                                        double noise, std::uint64_t seed) {
    SparseDataset ds = mean_only_dataset(n, mu, 0.0, seed);
    for (auto& obs : ds.observations) {
        obs.t = grid.t_mid(grid.t_cell(obs.t));
        obs.s = grid.s_mid(grid.s_cell(obs.s));
        obs.y = mu(obs.t, obs.s);
        if (noise > 0.0) obs.y += noise;
    }
    return ds;
}

double flat_mu(double t, double s) { return 1.0 + 0.2 * t + 0.1 * s; }
double wiggly_mu(double t, double s) {
    return std::sin(4 * M_PI * t) * std::sin(4 * M_PI * s);
}

} // namespace

TEST_CASE("default candidate ladder spans 1.5 cells to half the domain") {
    const Grid2 grid(20, 20);
    const auto ladder = default_candidate_ladder(grid);
    REQUIRE(ladder.size() == 8);
    CHECK(ladder.front() == doctest::Approx(1.5 / 20.0));
    CHECK(ladder.back() == doctest::Approx(0.5));
    CHECK(std::is_sorted(ladder.begin(), ladder.end()));
    // Geometric spacing: constant ratio.
    const double ratio = ladder[1] / ladder[0];
    for (std::size_t k = 2; k < ladder.size(); ++k)
        CHECK(ladder[k] / ladder[k - 1] == doctest::Approx(ratio).epsilon(1e-9));
}

TEST_CASE("fold assignment is a deterministic balanced shuffle") {
    const auto a = fold_assignment(23, 5, 7);
    const auto b = fold_assignment(23, 5, 7);
    CHECK(a == b);
    const auto c = fold_assignment(23, 5, 8);
    CHECK(a != c);
    std::vector<int> counts(5, 0);
    for (int f : a) {
        REQUIRE(f >= 0);
        REQUIRE(f < 5);
        ++counts[static_cast<std::size_t>(f)];
    }
    CHECK(*std::max_element(counts.begin(), counts.end()) -
              *std::min_element(counts.begin(), counts.end()) <=
          1);
}

TEST_CASE("linear mean gives a flat CV objective") {
    const Grid2 grid(10, 10);
    const SparseDataset ds = mean_only_dataset_on_grid(30, grid, flat_mu, 0.0, 101);
    CvSpec spec;
    spec.seed = 101;
    CvReport report;
    const Bandwidths2 bw = cv_mean_bandwidth(ds, grid, spec, &report);
    // Selected bandwidth is a ladder member.
    CHECK(std::find(report.candidates.begin(), report.candidates.end(), bw.h1) !=
          report.candidates.end());
    const double best = *std::min_element(report.scores.begin(), report.scores.end());
    for (double score : report.scores) CHECK(score <= best + 0.01 * std::max(best, 1e-12) + 1e-9);
}

TEST_CASE("wiggly means select smaller bandwidths than flat means") {
    const Grid2 grid(10, 10);
    std::vector<double> flat_choice, wiggly_choice;
    for (std::uint64_t rep = 0; rep < 10; ++rep) {
        CvSpec spec;
        spec.seed = 300 + rep;
        flat_choice.push_back(
            cv_mean_bandwidth(mean_only_dataset(40, flat_mu, 0.1, 300 + rep), grid, spec).h1);
        wiggly_choice.push_back(
            cv_mean_bandwidth(mean_only_dataset(40, wiggly_mu, 0.1, 300 + rep), grid, spec).h1);
    }
    std::sort(flat_choice.begin(), flat_choice.end());
    std::sort(wiggly_choice.begin(), wiggly_choice.end());
    CHECK(wiggly_choice[5] < flat_choice[5]);
}

TEST_CASE("preconditions and degenerate ladders") {
    const Grid2 grid(10, 10);
    const SparseDataset ds = mean_only_dataset(5, flat_mu, 0.0, 1);
    CvSpec spec; // folds = 10 > 5 surfaces
    CHECK_THROWS_AS(cv_mean_bandwidth(ds, grid, spec), DataError);

    const SparseDataset ok = mean_only_dataset(15, flat_mu, 0.0, 2);
    CvSpec single;
    single.candidates = {0.33};
    single.seed = 4;
    CHECK(cv_mean_bandwidth(ok, grid, single).h1 == 0.33);

    CvSpec unsorted;
    unsorted.candidates = {0.4, 0.2};
    CHECK_THROWS_AS(cv_mean_bandwidth(ok, grid, unsorted), DataError);
}

TEST_CASE("covariance CV lands near the ladder's oracle-best candidate") {
    const Grid2 grid(10, 10);
    const ScenarioCovariance truth = scenario_covariance({ScenarioKind::brownian, grid});
    std::vector<double> ratios;
    for (std::uint64_t rep = 0; rep < 10; ++rep) {
        const SimulatedBatch batch = simulate_batch(truth, grid, 40, -1.0, 0.4, 1000 + rep);
        CvSpec spec;
        spec.seed = 1000 + rep;
        const Bandwidths2 mean_bw(0.25, 0.25);
        const auto [bwa, bwb] =
            cv_covariance_bandwidths(batch.sparse, grid, spec, nullptr, nullptr, &mean_bw);

        auto fit_error = [&](const Bandwidths2& ta, const Bandwidths2& tb) {
            FitOptions opts;
            FitBandwidths bw;
            bw.mean = mean_bw;
            bw.diagonal = mean_bw;
            bw.temporal = ta;
            bw.spatial = tb;
            opts.bandwidths = bw;
            const SeparableModel model = fit_separable(batch.sparse, grid, opts);
            return relative_error(ScenarioCovariance(model.A, model.B), truth);
        };

        double best = std::numeric_limits<double>::infinity();
        for (double h : default_candidate_ladder(grid))
            best = std::min(best, fit_error(Bandwidths2(h, h), Bandwidths2(h, h)));
        ratios.push_back(fit_error(bwa, bwb) / best);
    }
    std::sort(ratios.begin(), ratios.end());
    CHECK(ratios[5] <= 1.2);
}

TEST_CASE("cross-validation is reproducible given the seed") {
    const Grid2 grid(8, 8);
    const SparseDataset ds = mean_only_dataset(20, wiggly_mu, 0.05, 9);
    CvSpec spec;
    spec.seed = 9;
    CvReport r1, r2;
    set_threads(1);
    const Bandwidths2 b1 = cv_mean_bandwidth(ds, grid, spec, &r1);
    set_threads(4);
    const Bandwidths2 b2 = cv_mean_bandwidth(ds, grid, spec, &r2);
    set_threads(0);
    CHECK(b1.h1 == b2.h1);
    CHECK(r1.scores == r2.scores);
}

TEST_CASE("bandwidth transfer to the 4D smoother") {
    const Bandwidths4 a = transfer_to_4d(Bandwidths2(0.1, 0.1), Bandwidths2(0.2, 0.2));
    CHECK(a.h1 == doctest::Approx(0.1));
    CHECK(a.h2 == doctest::Approx(0.2));
    CHECK(a.h3 == doctest::Approx(0.1));
    CHECK(a.h4 == doctest::Approx(0.2));

    const Bandwidths4 b = transfer_to_4d(Bandwidths2(0.15, 0.15), Bandwidths2(0.15, 0.15));
    CHECK(b.h1 == b.h2);
    CHECK(b.h2 == b.h3);
    CHECK(b.h3 == b.h4);

    const Bandwidths4 c = transfer_to_4d(Bandwidths2(0.1, 0.15), Bandwidths2(0.3, 0.3));
    CHECK(c.h1 == doctest::Approx(0.125));
    CHECK(c.h3 == doctest::Approx(0.125));
    CHECK(c.h2 == doctest::Approx(0.3));
}
