#pragma once

#include "sepsurf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace sepsurf {

// Equispaced d1 x d2 grid over [0,1]^2 with cell midpoints (i+1/2)/d1, (j+1/2)/d2.
struct Grid2 {
    int d1 = 2;
    int d2 = 2;

    Grid2() = default;
    Grid2(int d1_, int d2_) : d1(d1_), d2(d2_) {
        if (d1 < 2 || d2 < 2) throw DataError("grid dimensions must be at least 2");
    }

    double t_mid(int i) const { return (i + 0.5) / d1; }
    double s_mid(int j) const { return (j + 0.5) / d2; }

    // Index of the cell whose midpoint is nearest to the coordinate.
    int t_cell(double t) const { return std::clamp(static_cast<int>(t * d1), 0, d1 - 1); }
    int s_cell(double s) const { return std::clamp(static_cast<int>(s * d2), 0, d2 - 1); }

    std::vector<double> t_mids() const {
        std::vector<double> v(static_cast<std::size_t>(d1));
        for (int i = 0; i < d1; ++i) v[static_cast<std::size_t>(i)] = t_mid(i);
        return v;
    }
    std::vector<double> s_mids() const {
        std::vector<double> v(static_cast<std::size_t>(d2));
        for (int j = 0; j < d2; ++j) v[static_cast<std::size_t>(j)] = s_mid(j);
        return v;
    }

    std::size_t cells() const { return static_cast<std::size_t>(d1) * static_cast<std::size_t>(d2); }
};

// Evaluation grid for the surface smoother: strictly increasing, nonempty axes.
struct EvalGrid2 {
    std::vector<double> xs;
    std::vector<double> ys;

    EvalGrid2() = default;
    EvalGrid2(std::vector<double> xs_, std::vector<double> ys_)
        : xs(std::move(xs_)), ys(std::move(ys_)) {
        validate();
    }

    void validate() const {
        auto check = [](const std::vector<double>& v, const char* name) {
            if (v.empty()) throw DataError(std::string(name) + " axis of evaluation grid is empty");
            for (std::size_t k = 1; k < v.size(); ++k)
                if (!(v[k] > v[k - 1]))
                    throw DataError(std::string(name) + " axis must be strictly increasing");
        };
        check(xs, "x");
        check(ys, "y");
    }
};

} // namespace sepsurf
