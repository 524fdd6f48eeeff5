#pragma once

#include "sepsurf/errors.hpp"
#include "sepsurf/grid.hpp"
#include "sepsurf/tensor4.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace sepsurf {

struct Bandwidths2 {
    double h1 = 0.1;
    double h2 = 0.1;

    Bandwidths2() = default;
    Bandwidths2(double h1_, double h2_) : h1(h1_), h2(h2_) {
        if (!(h1 > 0.0) || !(h2 > 0.0)) throw DataError("bandwidths must be positive");
    }
};

struct ScatterPoint {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;
    double w = 1.0;
};

// Weighted 2D scatter {(x_k, y_k, z_k, w_k)} feeding the surface smoother.
using ScatterCloud = std::vector<ScatterPoint>;

struct ScatterPoint4 {
    double x = 0.0, y = 0.0, x2 = 0.0, y2 = 0.0;
    double z = 0.0;
    double w = 1.0;
};

struct Bandwidths4 {
    double h1 = 0.1, h2 = 0.1, h3 = 0.1, h4 = 0.1;

    Bandwidths4() = default;
    Bandwidths4(double a, double b, double c, double d) : h1(a), h2(b), h3(c), h4(d) {
        if (!(h1 > 0.0 && h2 > 0.0 && h3 > 0.0 && h4 > 0.0))
            throw DataError("bandwidths must be positive");
    }
    std::array<double, 4> as_array() const { return {h1, h2, h3, h4}; }
};

// Window fallback for sparse designs: an empty window doubles both bandwidths
// for that evaluation point only, up to max_doublings, after which the point
// is reported missing (NaN). A nonempty window whose local-linear system is
// singular degrades to the locally constant (kernel-weighted mean) estimate.
struct FallbackPolicy {
    int max_doublings = 5;
};

inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool is_missing(double v) { return std::isnan(v); }

// Epanechnikov kernel (3/4)(1-u^2) on |u| < 1, zero outside.
inline double epanechnikov(double u) {
    const double a = std::abs(u);
    return a < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
}

// Local-linear estimate at a single point via the closed-form moment solution.
// Relative singularity threshold follows |Psi2| <= 1e-12 * |Phi1 * S00|.
double smooth2d_at(const ScatterCloud& cloud, const Bandwidths2& bw, double x, double y,
                   const FallbackPolicy& policy = {});

// Local-linear fit evaluated on the grid; result(i, j) corresponds to
// (xs[i], ys[j]). Missing entries are NaN (window empty after fallback).
Eigen::MatrixXd smooth2d(const ScatterCloud& cloud, const Bandwidths2& bw, const EvalGrid2& grid,
                         const FallbackPolicy& policy = {});

double smooth4d_at(const std::vector<ScatterPoint4>& cloud, const Bandwidths4& bw, double x,
                   double y, double x2, double y2, const FallbackPolicy& policy = {});

// 5-parameter local-linear fit with product Epanechnikov kernel, evaluated on
// the product grid (first.xs × first.ys × second.xs × second.ys).
Tensor4 smooth4d(const std::vector<ScatterPoint4>& cloud, const Bandwidths4& bw,
                 const EvalGrid2& first, const EvalGrid2& second,
                 const FallbackPolicy& policy = {});

} // namespace sepsurf
