#include "sepsurf/black_scholes.hpp"

#include "sepsurf/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace sepsurf {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double bs_call_price(double spot, double strike, double tau, double rate, double sigma) {
    if (!(spot > 0.0)) throw std::domain_error("spot must be positive");
    if (!(strike > 0.0)) throw std::domain_error("strike must be positive");
    if (!(tau > 0.0)) throw std::domain_error("time to expiration must be positive");
    if (!(sigma > 0.0)) throw std::domain_error("volatility must be positive");
    const double vol = sigma * std::sqrt(tau);
    const double d1 = (std::log(spot / strike) + (rate + 0.5 * sigma * sigma) * tau) / vol;
    const double d2 = d1 - vol;
    return spot * norm_cdf(d1) - strike * std::exp(-rate * tau) * norm_cdf(d2);
}

double implied_vol(double price, double spot, double strike, double tau, double rate) {
    if (!(price > 0.0)) throw std::domain_error("price must be positive");
    if (!(spot > 0.0 && strike > 0.0 && tau > 0.0)) throw std::domain_error("invalid parameters");
    const double intrinsic = std::max(spot - strike * std::exp(-rate * tau), 0.0);
    if (!(price > intrinsic))
        throw PriceOutOfBracket("price " + std::to_string(price) +
                                " at or below intrinsic value " + std::to_string(intrinsic));
    if (!(price < spot))
        throw PriceOutOfBracket("price " + std::to_string(price) + " at or above spot " +
                                std::to_string(spot));

    double lo = 0.0;
    double hi = 1.0;
    while (bs_call_price(spot, strike, tau, rate, hi) < price) {
        hi *= 2.0;
        if (hi > 1e6) throw PriceOutOfBracket("could not bracket the implied volatility");
    }
    while (hi - lo > 1e-10) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (bs_call_price(spot, strike, tau, rate, mid) < price)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

IngestResult ingest_option_chains(const std::vector<OptionQuote>& quotes,
                                  const IngestScaling& scaling) {
    IngestResult res;
    res.scaling = scaling;
    int max_id = -1;
    for (const auto& q : quotes) {
        if (q.surface_id < 0) throw DataError("negative surface_id in option quotes");
        if (!(q.spot > 0.0 && q.strike > 0.0 && q.tau_days > 0.0))
            throw DataError("option quote must have positive spot, strike and tau");
        const double t =
            (q.tau_days - scaling.tau_min_days) / (scaling.tau_max_days - scaling.tau_min_days);
        const double logm = std::log(q.strike / q.spot);
        const double s = (logm - scaling.logm_min) / (scaling.logm_max - scaling.logm_min);
        if (t < 0.0 || t > 1.0 || s < 0.0 || s > 1.0) {
            ++res.skipped_domain;
            continue;
        }
        double iv;
        try {
            iv = implied_vol(q.price, q.spot, q.strike, q.tau_days / 365.0, q.rate);
        } catch (const PriceOutOfBracket&) {
            ++res.skipped_bracket;
            continue;
        }
        SparseObservation obs;
        obs.surface_id = q.surface_id;
        obs.t = t;
        obs.s = s;
        obs.y = scaling.log_vol ? std::log(iv) : iv;
        res.data.observations.push_back(obs);
        max_id = std::max(max_id, q.surface_id);
    }
    res.data.n_surfaces = max_id + 1;
    if (res.data.observations.empty()) throw DataError("no usable option quotes after filtering");
    return res;
}

std::vector<OptionQuote> read_option_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty option file");
    std::vector<OptionQuote> quotes;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        OptionQuote q;
        double id = 0.0;
        double* fields[6] = {&id, &q.spot, &q.strike, &q.tau_days, &q.rate, &q.price};
        const char* ptr = line.data();
        const char* end = line.data() + line.size();
        for (int f = 0; f < 6; ++f) {
            const auto res = std::from_chars(ptr, end, *fields[f]);
            if (res.ec != std::errc())
                throw DataError("line " + std::to_string(line_no) + ": bad option quote");
            ptr = res.ptr;
            if (f < 5) {
                if (ptr == end || *ptr != ',')
                    throw DataError("line " + std::to_string(line_no) + ": expected 6 fields");
                ++ptr;
            }
        }
        q.surface_id = static_cast<int>(id);
        quotes.push_back(q);
    }
    return quotes;
}

} // namespace sepsurf
