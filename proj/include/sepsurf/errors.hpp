#pragma once

#include <stdexcept>
#include <string>

namespace sepsurf {

// Input/format problems (bad CSV, shape mismatch, invalid arguments).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A smoothing window stayed empty even after the bandwidth-doubling fallback.
struct DegenerateWindow : std::runtime_error {
    DegenerateWindow(double x_, double y_)
        : std::runtime_error("degenerate smoothing window at (" + std::to_string(x_) + ", " +
                             std::to_string(y_) + ")"),
          x(x_), y(y_) {}
    double x;
    double y;
};

// No off-diagonal raw covariances available for the covariance sweeps.
struct InsufficientPairs : std::runtime_error {
    InsufficientPairs() : std::runtime_error("no off-diagonal raw covariance pairs in the data") {}
};

struct NonPositiveTrace : std::runtime_error {
    explicit NonPositiveTrace(double tr)
        : std::runtime_error("temporal kernel has non-positive trace " + std::to_string(tr)) {}
};

struct ZeroDenominator : std::runtime_error {
    ZeroDenominator() : std::runtime_error("partial inner product denominator is zero") {}
};

struct PriceOutOfBracket : std::runtime_error {
    explicit PriceOutOfBracket(const std::string& msg) : std::runtime_error(msg) {}
};

struct SingularSystem : std::runtime_error {
    explicit SingularSystem(const std::string& msg) : std::runtime_error(msg) {}
};

struct FactorizationFailure : std::runtime_error {
    explicit FactorizationFailure(const std::string& msg) : std::runtime_error(msg) {}
};

struct NonPsdCovariance : std::runtime_error {
    explicit NonPsdCovariance(const std::string& msg) : std::runtime_error(msg) {}
};

struct AllCandidatesDegenerate : std::runtime_error {
    AllCandidatesDegenerate()
        : std::runtime_error("every bandwidth candidate produced a degenerate fit") {}
};

struct EmptySurface : std::runtime_error {
    explicit EmptySurface(int surface_id)
        : std::runtime_error("surface " + std::to_string(surface_id) + " has no observations") {}
};

} // namespace sepsurf
