#include "sepsurf/baselines.hpp"

#include "sepsurf/errors.hpp"
#include "sepsurf/linalg.hpp"

#include <cmath>

namespace sepsurf {

FullCovariance kron_tensor(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    FullCovariance c(static_cast<int>(A.rows()), static_cast<int>(B.rows()),
                     static_cast<int>(A.cols()), static_cast<int>(B.cols()));
    for (int i = 0; i < c.n1(); ++i)
        for (int j = 0; j < c.n2(); ++j)
            for (int i2 = 0; i2 < c.n3(); ++i2)
                for (int j2 = 0; j2 < c.n4(); ++j2) c(i, j, i2, j2) = A(i, i2) * B(j, j2);
    return c;
}

double tensor_fro_norm(const Tensor4& t) {
    double acc = 0.0;
    for (double v : t.flat()) acc += v * v;
    return std::sqrt(acc);
}

FullCovariance empirical_covariance(const std::vector<Eigen::MatrixXd>& surfaces,
                                    const Eigen::MatrixXd* mean) {
    if (surfaces.empty()) throw DataError("no surfaces");
    const int d1 = static_cast<int>(surfaces[0].rows());
    const int d2 = static_cast<int>(surfaces[0].cols());
    FullCovariance c(d1, d2, d1, d2);
    for (const auto& surface : surfaces) {
        const Eigen::MatrixXd y = mean ? (surface - *mean).eval() : surface;
        for (int i = 0; i < d1; ++i)
            for (int j = 0; j < d2; ++j) {
                const double yij = y(i, j);
                if (yij == 0.0) continue;
                for (int i2 = 0; i2 < d1; ++i2)
                    for (int j2 = 0; j2 < d2; ++j2) c(i, j, i2, j2) += yij * y(i2, j2);
            }
    }
    const double inv_n = 1.0 / static_cast<double>(surfaces.size());
    for (double& v : c.flat()) v *= inv_n;
    return c;
}

FullCovariance smooth4d_covariance(const std::vector<MaskedGridSample>& centered,
                                   const Grid2& grid, const Bandwidths4& bw,
                                   const FallbackPolicy& policy) {
    if (centered.empty()) throw DataError("no samples");
    // Raw covariances of all ordered pairs of distinct observed cells, pooled
    // per location tuple (exact for the smoother: coincident points merge).
    Tensor4 sum(grid.d1, grid.d2, grid.d1, grid.d2);
    Tensor4 count(grid.d1, grid.d2, grid.d1, grid.d2);
    for (const auto& sample : centered) {
        std::vector<std::pair<int, int>> cells;
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j)
                if (sample.mask(i, j) > 0.0) cells.emplace_back(i, j);
        for (const auto& [i, j] : cells)
            for (const auto& [i2, j2] : cells) {
                if (i == i2 && j == j2) continue;
                sum(i, j, i2, j2) += sample.values(i, j) * sample.values(i2, j2);
                count(i, j, i2, j2) += 1.0;
            }
    }
    std::vector<ScatterPoint4> cloud;
    for (int i = 0; i < grid.d1; ++i)
        for (int j = 0; j < grid.d2; ++j)
            for (int i2 = 0; i2 < grid.d1; ++i2)
                for (int j2 = 0; j2 < grid.d2; ++j2) {
                    const double c = count(i, j, i2, j2);
                    if (c > 0.0)
                        cloud.push_back({grid.t_mid(i), grid.s_mid(j), grid.t_mid(i2),
                                         grid.s_mid(j2), sum(i, j, i2, j2) / c, c});
                }
    if (cloud.empty()) throw InsufficientPairs();

    const EvalGrid2 eval(grid.t_mids(), grid.s_mids());
    Tensor4 smoothed = smooth4d(cloud, bw, eval, eval, policy);
    for (int i = 0; i < grid.d1; ++i)
        for (int j = 0; j < grid.d2; ++j)
            for (int i2 = 0; i2 < grid.d1; ++i2)
                for (int j2 = 0; j2 < grid.d2; ++j2) {
                    if (is_missing(smoothed(i, j, i2, j2)))
                        throw DegenerateWindow(grid.t_mid(i), grid.s_mid(j));
                }
    Tensor4 out = smoothed;
    for (int i = 0; i < grid.d1; ++i)
        for (int j = 0; j < grid.d2; ++j)
            for (int i2 = 0; i2 < grid.d1; ++i2)
                for (int j2 = 0; j2 < grid.d2; ++j2)
                    out(i, j, i2, j2) =
                        0.5 * (smoothed(i, j, i2, j2) + smoothed(i2, j2, i, j));
    return out;
}

Eigen::MatrixXd bsa_step(const FullCovariance& C, const Eigen::MatrixXd& B) {
    const int d1 = C.n1();
    const int d2 = C.n2();
    if (B.rows() != d2 || B.cols() != d2) throw DataError("B dimension mismatch");
    const double denom = B.cwiseProduct(B).sum();
    if (!(denom > 0.0)) throw ZeroDenominator();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d1, d1);
    for (int i = 0; i < d1; ++i)
        for (int i2 = 0; i2 < d1; ++i2) {
            double acc = 0.0;
            for (int j = 0; j < d2; ++j)
                for (int j2 = 0; j2 < d2; ++j2) acc += B(j, j2) * C(i, j, i2, j2);
            A(i, i2) = acc / denom;
        }
    return A;
}

Eigen::MatrixXd bsa_step_dual(const FullCovariance& C, const Eigen::MatrixXd& A) {
    const int d1 = C.n1();
    const int d2 = C.n2();
    if (A.rows() != d1 || A.cols() != d1) throw DataError("A dimension mismatch");
    const double denom = A.cwiseProduct(A).sum();
    if (!(denom > 0.0)) throw ZeroDenominator();
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d2, d2);
    for (int j = 0; j < d2; ++j)
        for (int j2 = 0; j2 < d2; ++j2) {
            double acc = 0.0;
            for (int i = 0; i < d1; ++i)
                for (int i2 = 0; i2 < d1; ++i2) acc += A(i, i2) * C(i, j, i2, j2);
            B(j, j2) = acc / denom;
        }
    return B;
}

BsaResult bsa(const FullCovariance& C, double tol, int max_iter) {
    BsaResult res;
    res.B = Eigen::MatrixXd::Ones(C.n2(), C.n2());
    double prev_a2 = 0.0, prev_b2 = 0.0;
    Eigen::MatrixXd prev_a, prev_b;
    for (int iter = 1; iter <= max_iter; ++iter) {
        res.A = bsa_step(C, res.B);
        res.B = bsa_step_dual(C, res.A);
        res.iterations = iter;
        const double a2 = res.A.squaredNorm();
        const double b2 = res.B.squaredNorm();
        if (iter > 1) {
            // || A x B - A' x B' ||_F^2 via Kronecker inner products.
            const double cross = res.A.cwiseProduct(prev_a).sum() *
                                 res.B.cwiseProduct(prev_b).sum();
            const double diff2 = std::max(a2 * b2 - 2.0 * cross + prev_a2 * prev_b2, 0.0);
            if (std::sqrt(diff2) <= tol * std::sqrt(a2 * b2)) {
                res.converged = true;
                break;
            }
        }
        prev_a = res.A;
        prev_b = res.B;
        prev_a2 = a2;
        prev_b2 = b2;
    }
    const double tr = res.A.trace();
    if (!(tr > 0.0)) throw NonPositiveTrace(tr);
    res.A /= tr;
    res.B *= tr;
    return res;
}

Eigen::MatrixXd presmooth_predict(const std::vector<SparseObservation>& obs, const Grid2& grid,
                                  const Bandwidths2& bw) {
    if (obs.empty()) throw EmptySurface(-1);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
    Eigen::MatrixXd count = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
    for (const auto& o : obs) {
        sum(grid.t_cell(o.t), grid.s_cell(o.s)) += o.y;
        count(grid.t_cell(o.t), grid.s_cell(o.s)) += 1.0;
    }
    ScatterCloud cloud;
    for (int i = 0; i < grid.d1; ++i)
        for (int j = 0; j < grid.d2; ++j)
            if (count(i, j) > 0.0)
                cloud.push_back(
                    {grid.t_mid(i), grid.s_mid(j), sum(i, j) / count(i, j), count(i, j)});

    // Saturating fallback: enough doublings that the window always reaches
    // every observation, so single-point surfaces extrapolate to a constant.
    FallbackPolicy policy;
    const double hmin = std::min(bw.h1, bw.h2);
    policy.max_doublings =
        std::max(5, static_cast<int>(std::ceil(std::log2(2.0 / hmin))) + 1);
    return smooth2d(cloud, bw, EvalGrid2(grid.t_mids(), grid.s_mids()), policy);
}

} // namespace sepsurf
