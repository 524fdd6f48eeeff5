#include "sepsurf/smoothing.hpp"

#include "sepsurf/parallel.hpp"

#include <Eigen/Dense>

namespace sepsurf {

namespace {

struct Moments2 {
    double s00 = 0, s10 = 0, s01 = 0, s20 = 0, s11 = 0, s02 = 0;
    double q00 = 0, q10 = 0, q01 = 0;
    bool empty = true;
};

Moments2 accumulate2(const ScatterCloud& cloud, double x, double y, double h1, double h2) {
    Moments2 m;
    for (const auto& p : cloud) {
        if (p.w == 0.0) continue;
        const double u = (x - p.x) / h1;
        if (std::abs(u) >= 1.0) continue;
        const double v = (y - p.y) / h2;
        if (std::abs(v) >= 1.0) continue;
        const double k = 0.75 * (1.0 - u * u) * 0.75 * (1.0 - v * v) * p.w;
        if (k == 0.0) continue;
        m.empty = false;
        m.s00 += k;
        m.s10 += k * u;
        m.s01 += k * v;
        m.s20 += k * u * u;
        m.s11 += k * u * v;
        m.s02 += k * v * v;
        const double kz = k * p.z;
        m.q00 += kz;
        m.q10 += kz * u;
        m.q01 += kz * v;
    }
    return m;
}

// gamma0 = Psi1 / Psi2 with Phi/Psi assembled from the kernel moments; the
// normalization constants of S_pq/Q_pq cancel in the ratio. The singularity
// scale uses the non-cancelling magnitude of Phi1 * S00, so rank-deficient
// windows whose Phi1 is pure rounding noise are still flagged.
double solve2(const Moments2& m, bool& singular) {
    const double phi1 = m.s20 * m.s02 - m.s11 * m.s11;
    const double phi2 = m.s10 * m.s02 - m.s01 * m.s11;
    const double phi3 = m.s01 * m.s20 - m.s10 * m.s11;
    const double psi1 = phi1 * m.q00 - phi2 * m.q10 - phi3 * m.q01;
    const double psi2 = phi1 * m.s00 - phi2 * m.s10 - phi3 * m.s01;
    const double scale = (m.s20 * m.s02 + m.s11 * m.s11) * m.s00;
    if (std::abs(psi2) <= 1e-12 * scale) {
        singular = true;
        return 0.0;
    }
    singular = false;
    return psi1 / psi2;
}

} // namespace

double smooth2d_at(const ScatterCloud& cloud, const Bandwidths2& bw, double x, double y,
                   const FallbackPolicy& policy) {
    double h1 = bw.h1;
    double h2 = bw.h2;
    for (int attempt = 0; attempt <= policy.max_doublings; ++attempt) {
        const Moments2 m = accumulate2(cloud, x, y, h1, h2);
        if (!m.empty) {
            bool singular = false;
            const double gamma0 = solve2(m, singular);
            if (!singular) return gamma0;
            return m.q00 / m.s00; // locally constant estimate
        }
        h1 *= 2.0;
        h2 *= 2.0;
    }
    return missing_value();
}

Eigen::MatrixXd smooth2d(const ScatterCloud& cloud, const Bandwidths2& bw, const EvalGrid2& grid,
                         const FallbackPolicy& policy) {
    grid.validate();
    const std::size_t nx = grid.xs.size();
    const std::size_t ny = grid.ys.size();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(nx), static_cast<Eigen::Index>(ny));
    parallel_for(nx * ny, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t i = idx / ny;
            const std::size_t j = idx % ny;
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                smooth2d_at(cloud, bw, grid.xs[i], grid.ys[j], policy);
        }
    });
    return out;
}

namespace {

struct Moments4 {
    // Symmetric 5x5 moment matrix in scaled coordinates plus right-hand side.
    Eigen::Matrix<double, 5, 5> m = Eigen::Matrix<double, 5, 5>::Zero();
    Eigen::Matrix<double, 5, 1> rhs = Eigen::Matrix<double, 5, 1>::Zero();
    bool empty = true;
};

Moments4 accumulate4(const std::vector<ScatterPoint4>& cloud, const std::array<double, 4>& h,
                     double x, double y, double x2, double y2) {
    Moments4 acc;
    for (const auto& p : cloud) {
        if (p.w == 0.0) continue;
        const double u1 = (x - p.x) / h[0];
        if (std::abs(u1) >= 1.0) continue;
        const double u2 = (y - p.y) / h[1];
        if (std::abs(u2) >= 1.0) continue;
        const double u3 = (x2 - p.x2) / h[2];
        if (std::abs(u3) >= 1.0) continue;
        const double u4 = (y2 - p.y2) / h[3];
        if (std::abs(u4) >= 1.0) continue;
        const double k = epanechnikov(u1) * epanechnikov(u2) * epanechnikov(u3) *
                         epanechnikov(u4) * p.w;
        if (k == 0.0) continue;
        acc.empty = false;
        const Eigen::Matrix<double, 5, 1> r{1.0, u1, u2, u3, u4};
        acc.m.noalias() += k * r * r.transpose();
        acc.rhs.noalias() += (k * p.z) * r;
    }
    return acc;
}

} // namespace

double smooth4d_at(const std::vector<ScatterPoint4>& cloud, const Bandwidths4& bw, double x,
                   double y, double x2, double y2, const FallbackPolicy& policy) {
    std::array<double, 4> h = bw.as_array();
    for (int attempt = 0; attempt <= policy.max_doublings; ++attempt) {
        const Moments4 acc = accumulate4(cloud, h, x, y, x2, y2);
        if (!acc.empty) {
            Eigen::FullPivLU<Eigen::Matrix<double, 5, 5>> lu(acc.m);
            lu.setThreshold(1e-12);
            if (lu.rank() == 5) {
                const Eigen::Matrix<double, 5, 1> gamma = lu.solve(acc.rhs);
                return gamma(0);
            }
            return acc.rhs(0) / acc.m(0, 0); // locally constant estimate
        }
        for (double& hv : h) hv *= 2.0;
    }
    return missing_value();
}

Tensor4 smooth4d(const std::vector<ScatterPoint4>& cloud, const Bandwidths4& bw,
                 const EvalGrid2& first, const EvalGrid2& second, const FallbackPolicy& policy) {
    first.validate();
    second.validate();
    const std::size_t n1 = first.xs.size();
    const std::size_t n2 = first.ys.size();
    const std::size_t n3 = second.xs.size();
    const std::size_t n4 = second.ys.size();
    Tensor4 out(static_cast<int>(n1), static_cast<int>(n2), static_cast<int>(n3),
                static_cast<int>(n4));
    const std::size_t total = n1 * n2 * n3 * n4;
    parallel_for(total, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            std::size_t rest = idx;
            const std::size_t l = rest % n4;
            rest /= n4;
            const std::size_t k = rest % n3;
            rest /= n3;
            const std::size_t j = rest % n2;
            const std::size_t i = rest / n2;
            out.flat()[idx] = smooth4d_at(cloud, bw, first.xs[i], first.ys[j], second.xs[k],
                                          second.ys[l], policy);
        }
    });
    return out;
}

} // namespace sepsurf
