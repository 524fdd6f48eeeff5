#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "sepsurf/black_scholes.hpp"
#include "sepsurf/data.hpp"
#include "sepsurf/errors.hpp"

#include <cmath>
#include <sstream>

using namespace sepsurf;

TEST_CASE("gridding assigns to the nearest cell and averages duplicates") {
    const Grid2 grid(2, 2); // midpoints 0.25, 0.75
    SparseDataset ds;
    ds.n_surfaces = 3;
    ds.observations = {
        {0, 0.26, 0.74, 5.0},
        {1, 0.10, 0.10, 2.0},
        {1, 0.20, 0.20, 4.0}, // same cell as above
        {1, 0.9, 0.9, 1.0},
    };
    const auto samples = grid_dataset(ds, grid);
    REQUIRE(samples.size() == 3);

    CHECK(samples[0].values(0, 1) == 5.0);
    CHECK(samples[0].mask(0, 1) == 1.0);
    CHECK(samples[0].mask.sum() == 1.0);

    CHECK(samples[1].values(0, 0) == doctest::Approx(3.0));
    CHECK(samples[1].mask(0, 0) == 1.0);
    CHECK(samples[1].mask.sum() == 2.0);

    // Surface 2 has no observations: all-zero mask.
    CHECK(samples[2].mask.sum() == 0.0);
    CHECK(samples[2].values.cwiseAbs().sum() == 0.0);

    // Populated cells never exceed observation count; mask sums count them.
    CHECK(samples[0].mask.sum() + samples[1].mask.sum() + samples[2].mask.sum() <=
          static_cast<double>(ds.observations.size()));
}

TEST_CASE("centering subtracts on masked cells and inverts exactly") {
    MaskedGridSample s;
    s.values = Eigen::MatrixXd::Zero(2, 2);
    s.mask = Eigen::MatrixXd::Zero(2, 2);
    s.values(0, 0) = 5.0;
    s.mask(0, 0) = 1.0;
    Eigen::MatrixXd mean(2, 2);
    mean << 2.0, 9.0, 9.0, 9.0;

    const auto centered = center({s}, mean);
    CHECK(centered[0].values(0, 0) == 3.0);
    CHECK(centered[0].values(0, 1) == 0.0); // unmasked cells untouched
    CHECK(centered[0].mask(0, 0) == 1.0);

    // Zero mean is the identity.
    const auto same = center({s}, Eigen::MatrixXd::Zero(2, 2));
    CHECK(same[0].values == s.values);

    // Involution on a dyadic lattice is bit-exact.
    MaskedGridSample r;
    r.values = Eigen::MatrixXd(2, 2);
    r.mask = Eigen::MatrixXd::Ones(2, 2);
    Eigen::MatrixXd m2(2, 2);
    auto lattice = [](std::uint64_t k) {
        return std::floor(oracles::runif(77, k, -8.0, 8.0) * 1048576.0) / 1048576.0;
    };
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            r.values(i, j) = lattice(static_cast<std::uint64_t>(4 * i + j));
            m2(i, j) = lattice(static_cast<std::uint64_t>(100 + 4 * i + j));
        }
    const auto fwd = center({r}, m2);
    const auto back = center(fwd, (-m2).eval());
    CHECK(back[0].values == r.values);
}

TEST_CASE("dimension mismatch is rejected") {
    MaskedGridSample s;
    s.values = Eigen::MatrixXd::Zero(2, 2);
    s.mask = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(center({s}, Eigen::MatrixXd::Zero(3, 2)), DataError);
}

TEST_CASE("dataset CSV round-trips") {
    SparseDataset ds;
    ds.n_surfaces = 2;
    ds.observations = {{0, 0.125, 0.25, 1.5}, {0, 0.5, 0.75, -0.375}, {1, 0.1, 0.9, 2.25}};
    std::stringstream ss;
    write_dataset_csv(ss, ds);
    const SparseDataset back = read_dataset_csv(ss);
    REQUIRE(back.observations.size() == ds.observations.size());
    CHECK(back.n_surfaces == 2);
    for (std::size_t k = 0; k < ds.observations.size(); ++k) {
        CHECK(back.observations[k].surface_id == ds.observations[k].surface_id);
        CHECK(back.observations[k].t == ds.observations[k].t);
        CHECK(back.observations[k].y == ds.observations[k].y);
    }
    std::stringstream bad("surface_id,t,s\n");
    CHECK_THROWS_AS(read_dataset_csv(bad), DataError);
}

TEST_CASE("Black-Scholes call price") {
    // Vanishing volatility approaches the intrinsic value.
    CHECK(bs_call_price(110.0, 100.0, 1.0, 0.0, 1e-9) == doctest::Approx(10.0).epsilon(1e-9));

    // At the money: 100 (F(0.1) - F(-0.1)).
    const double atm = bs_call_price(100.0, 100.0, 1.0, 0.0, 0.2);
    CHECK(atm == doctest::Approx(100.0 * (norm_cdf(0.1) - norm_cdf(-0.1))).epsilon(1e-12));

    // Against payoff quadrature under the lognormal terminal law.
    CHECK(atm == doctest::Approx(oracles::bs_call_by_quadrature(100, 100, 1.0, 0.0, 0.2))
                     .epsilon(1e-8));
    CHECK(bs_call_price(95.0, 107.0, 0.7, 0.03, 0.45) ==
          doctest::Approx(oracles::bs_call_by_quadrature(95, 107, 0.7, 0.03, 0.45)).epsilon(1e-8));

    // Strictly increasing in sigma.
    double prev = 0.0;
    for (int k = 1; k <= 20; ++k) {
        const double price = bs_call_price(100.0, 105.0, 0.5, 0.01, 0.05 * k);
        CHECK(price > prev);
        prev = price;
    }

    CHECK_THROWS_AS(bs_call_price(-1.0, 100.0, 1.0, 0.0, 0.2), std::domain_error);
    CHECK_THROWS_AS(bs_call_price(100.0, 100.0, 0.0, 0.0, 0.2), std::domain_error);
}

TEST_CASE("implied volatility inverts the price") {
    const double price = bs_call_price(100.0, 103.0, 0.75, 0.02, 0.3);
    CHECK(std::abs(implied_vol(price, 100.0, 103.0, 0.75, 0.02) - 0.3) < 1e-8);

    // Extreme small volatility at the money still round-trips.
    const double tiny = bs_call_price(100.0, 100.0, 1.0, 0.0, 1e-3);
    CHECK(std::abs(implied_vol(tiny, 100.0, 100.0, 1.0, 0.0) - 1e-3) < 1e-8);

    // Out-of-bracket prices are rejected.
    CHECK_THROWS_AS(implied_vol(101.0, 100.0, 100.0, 1.0, 0.0), PriceOutOfBracket);
    CHECK_THROWS_AS(implied_vol(9.0, 110.0, 100.0, 1.0, 0.0), PriceOutOfBracket);
}

TEST_CASE("round-trip identity over random parameters") {
    int tested = 0;
    for (std::uint64_t k = 0; tested < 60; ++k) {
        const double spot = oracles::runif(500, 5 * k, 50.0, 150.0);
        const double logm = oracles::runif(500, 5 * k + 1, -0.5, 0.5);
        const double strike = spot * std::exp(logm);
        const double tau = oracles::runif(500, 5 * k + 2, 14.0 / 365.0, 1.0);
        const double rate = oracles::runif(500, 5 * k + 3, 0.0, 0.05);
        const double sigma = oracles::runif(500, 5 * k + 4, 1e-3, 3.0);
        const double price = bs_call_price(spot, strike, tau, rate, sigma);
        const double intrinsic = std::max(spot - strike * std::exp(-rate * tau), 0.0);
        if (!(price - intrinsic > 1e-9 * spot) || !(spot - price > 1e-9 * spot))
            continue; // numerically at the arbitrage bound: inverse undefined
        ++tested;
        CHECK(std::abs(implied_vol(price, spot, strike, tau, rate) - sigma) < 1e-8);
    }
}

TEST_CASE("option-chain ingestion converts and filters") {
    std::vector<OptionQuote> quotes;
    // One usable quote, one out-of-domain, one out-of-bracket.
    quotes.push_back({0, 100.0, 100.0, 182.0, 0.01,
                      bs_call_price(100.0, 100.0, 182.0 / 365.0, 0.01, 0.25)});
    quotes.push_back({0, 100.0, 300.0, 182.0, 0.01, 1.0});   // log-moneyness > 0.5
    quotes.push_back({0, 100.0, 100.0, 182.0, 0.01, 150.0}); // above spot
    const IngestResult res = ingest_option_chains(quotes);
    CHECK(res.data.observations.size() == 1);
    CHECK(res.skipped_domain == 1);
    CHECK(res.skipped_bracket == 1);
    const auto& obs = res.data.observations[0];
    CHECK(obs.t == doctest::Approx((182.0 - 14.0) / 351.0));
    CHECK(obs.s == doctest::Approx(0.5));
    CHECK(obs.y == doctest::Approx(std::log(0.25)).epsilon(1e-7));

    IngestScaling raw;
    raw.log_vol = false;
    const IngestResult res2 = ingest_option_chains(quotes, raw);
    CHECK(res2.data.observations[0].y == doctest::Approx(0.25).epsilon(1e-7));
}
