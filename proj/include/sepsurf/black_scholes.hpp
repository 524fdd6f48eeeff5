#pragma once

#include "sepsurf/data.hpp"

#include <cstddef>
#include <vector>

namespace sepsurf {

double norm_cdf(double x);

// European call value S F(d1) - K e^{-r tau} F(d2), tau in years.
double bs_call_price(double spot, double strike, double tau, double rate, double sigma);

// Unique sigma with bs_call_price(sigma) = price, by bisection until the
// bracketing interval is narrower than 1e-10. The price must lie strictly
// inside the no-arbitrage bracket (max(spot - strike e^{-r tau}, 0), spot).
double implied_vol(double price, double spot, double strike, double tau, double rate);

// Option-chain ingestion: quotes in (spot, strike, tau_days, rate, price)
// become observations (t, s, y) with t = scaled time to expiration,
// s = scaled log-moneyness, y = (log) implied volatility.
struct OptionQuote {
    int surface_id = 0;
    double spot = 0.0;
    double strike = 0.0;
    double tau_days = 0.0;
    double rate = 0.0;
    double price = 0.0;
};

struct IngestScaling {
    double tau_min_days = 14.0;
    double tau_max_days = 365.0;
    double logm_min = -0.5;
    double logm_max = 0.5;
    bool log_vol = true;
};

struct IngestResult {
    SparseDataset data;
    IngestScaling scaling;
    std::size_t skipped_domain = 0;  // quotes outside the (tau, log-moneyness) box
    std::size_t skipped_bracket = 0; // prices outside the no-arbitrage bracket
};

IngestResult ingest_option_chains(const std::vector<OptionQuote>& quotes,
                                  const IngestScaling& scaling = {});

std::vector<OptionQuote> read_option_csv(const std::string& path);

} // namespace sepsurf
