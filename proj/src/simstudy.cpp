#include "sepsurf/simstudy.hpp"

#include "sepsurf/bandwidth.hpp"
#include "sepsurf/errors.hpp"
#include "sepsurf/linalg.hpp"
#include "sepsurf/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace sepsurf {

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Eigen::MatrixXd kernel_matrix(const std::vector<double>& mids, double (*kernel)(double, double)) {
    const Eigen::Index d = static_cast<Eigen::Index>(mids.size());
    Eigen::MatrixXd m(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            m(i, j) = kernel(mids[static_cast<std::size_t>(i)], mids[static_cast<std::size_t>(j)]);
    return m;
}

double legendre_poly(int k, double x) {
    // Bonnet recurrence on [-1, 1].
    double p0 = 1.0;
    double p1 = x;
    if (k == 0) return p0;
    for (int n = 1; n < k; ++n) {
        const double p2 = ((2.0 * n + 1.0) * x * p1 - n * p0) / (n + 1.0);
        p0 = p1;
        p1 = p2;
    }
    return p1;
}

} // namespace

ScenarioKind scenario_kind_from_string(const std::string& name) {
    if (name == "fourier") return ScenarioKind::fourier;
    if (name == "brownian") return ScenarioKind::brownian;
    if (name == "gneiting") return ScenarioKind::gneiting;
    if (name == "fourier_legendre" || name == "fourier-legendre")
        return ScenarioKind::fourier_legendre;
    throw DataError("unknown scenario '" + name + "'");
}

std::string to_string(ScenarioKind kind) {
    switch (kind) {
    case ScenarioKind::fourier: return "fourier";
    case ScenarioKind::brownian: return "brownian";
    case ScenarioKind::gneiting: return "gneiting";
    case ScenarioKind::fourier_legendre: return "fourier_legendre";
    }
    return "?";
}

double fourier_kernel(double t, double t2) {
    // Eigenfunctions 1, sqrt2 sin(2 pi t), sqrt2 cos(2 pi t), sqrt2 sin(4 pi t), ...
    // with eigenvalue k^-2 for the k-th function, k = 1..10.
    const double sqrt2 = std::sqrt(2.0);
    double acc = 0.0;
    for (int k = 1; k <= 10; ++k) {
        double phi_t, phi_t2;
        if (k == 1) {
            phi_t = 1.0;
            phi_t2 = 1.0;
        } else {
            const int m = k / 2;
            const double w = 2.0 * M_PI * m;
            if (k % 2 == 0) {
                phi_t = sqrt2 * std::sin(w * t);
                phi_t2 = sqrt2 * std::sin(w * t2);
            } else {
                phi_t = sqrt2 * std::cos(w * t);
                phi_t2 = sqrt2 * std::cos(w * t2);
            }
        }
        acc += phi_t * phi_t2 / (static_cast<double>(k) * k);
    }
    return acc;
}

double wiener_kernel(double t, double t2) { return std::min(t, t2); }

double legendre_kernel(double t, double t2) {
    // Orthonormal shifted Legendre polynomials of degree 1..4 with k^-2 decay.
    double acc = 0.0;
    for (int k = 1; k <= 4; ++k) {
        const double norm = std::sqrt(2.0 * k + 1.0);
        const double phi_t = norm * legendre_poly(k, 2.0 * t - 1.0);
        const double phi_t2 = norm * legendre_poly(k, 2.0 * t2 - 1.0);
        acc += phi_t * phi_t2 / (static_cast<double>(k) * k);
    }
    return acc;
}

double gneiting_covariance(double t, double s, double t2, double s2) {
    const double beta = 0.7;
    const double dt2 = (t - t2) * (t - t2);
    const double ds2 = (s - s2) * (s - s2);
    const double base = dt2 + 1.0;
    return std::exp(-ds2 / std::pow(base, beta)) / base;
}

double ScenarioCovariance::trace() const {
    if (dense) {
        double acc = 0.0;
        for (int i = 0; i < dense->n1(); ++i)
            for (int j = 0; j < dense->n2(); ++j) acc += (*dense)(i, j, i, j);
        return acc;
    }
    double acc = 0.0;
    for (const auto& [a, b] : terms) acc += a.trace() * b.trace();
    return acc;
}

double ScenarioCovariance::value(int i, int j, int i2, int j2) const {
    if (dense) return (*dense)(i, j, i2, j2);
    double acc = 0.0;
    for (const auto& [a, b] : terms) acc += a(i, i2) * b(j, j2);
    return acc;
}

void ScenarioCovariance::scale(double factor) {
    if (dense) {
        for (double& v : dense->flat()) v *= factor;
        return;
    }
    for (auto& [a, b] : terms) a *= factor;
}

FullCovariance ScenarioCovariance::to_dense() const {
    if (dense) return *dense;
    FullCovariance c(d1(), d2(), d1(), d2());
    for (int i = 0; i < c.n1(); ++i)
        for (int j = 0; j < c.n2(); ++j)
            for (int i2 = 0; i2 < c.n3(); ++i2)
                for (int j2 = 0; j2 < c.n4(); ++j2) c(i, j, i2, j2) = value(i, j, i2, j2);
    return c;
}

int ScenarioCovariance::d1() const {
    return dense ? dense->n1() : static_cast<int>(terms.at(0).first.rows());
}

int ScenarioCovariance::d2() const {
    return dense ? dense->n2() : static_cast<int>(terms.at(0).second.rows());
}

ScenarioCovariance scenario_covariance(const Scenario& sc) {
    const auto mids_t = sc.grid.t_mids();
    const auto mids_s = sc.grid.s_mids();
    ScenarioCovariance cov;
    switch (sc.kind) {
    case ScenarioKind::fourier:
        cov = ScenarioCovariance(kernel_matrix(mids_t, fourier_kernel),
                                 kernel_matrix(mids_s, fourier_kernel));
        break;
    case ScenarioKind::brownian:
        cov = ScenarioCovariance(kernel_matrix(mids_t, wiener_kernel),
                                 kernel_matrix(mids_s, wiener_kernel));
        break;
    case ScenarioKind::gneiting: {
        FullCovariance c(sc.grid.d1, sc.grid.d2, sc.grid.d1, sc.grid.d2);
        for (int i = 0; i < sc.grid.d1; ++i)
            for (int j = 0; j < sc.grid.d2; ++j)
                for (int i2 = 0; i2 < sc.grid.d1; ++i2)
                    for (int j2 = 0; j2 < sc.grid.d2; ++j2)
                        c(i, j, i2, j2) =
                            gneiting_covariance(mids_t[static_cast<std::size_t>(i)],
                                                mids_s[static_cast<std::size_t>(j)],
                                                mids_t[static_cast<std::size_t>(i2)],
                                                mids_s[static_cast<std::size_t>(j2)]);
        cov = ScenarioCovariance(std::move(c));
        break;
    }
    case ScenarioKind::fourier_legendre:
        cov = ScenarioCovariance(kernel_matrix(mids_t, fourier_kernel),
                                 kernel_matrix(mids_s, fourier_kernel));
        // Second term carries weight 1/2 before the joint normalization.
        cov.terms.emplace_back(0.5 * kernel_matrix(mids_t, legendre_kernel),
                               kernel_matrix(mids_s, legendre_kernel));
        break;
    }
    const double tr = cov.trace();
    if (!(tr > 0.0)) throw NonPsdCovariance("scenario covariance has non-positive trace");
    cov.scale(1.0 / tr);
    return cov;
}

SimulatedBatch simulate_batch(const ScenarioCovariance& cov, const Grid2& grid, int n,
                              double noise_sigma2, double sparsity_p, std::uint64_t seed) {
    if (n < 1) throw DataError("need at least one surface");
    if (!(sparsity_p > 0.0 && sparsity_p <= 1.0)) throw DataError("sparsity p must be in (0,1]");
    if (cov.d1() != grid.d1 || cov.d2() != grid.d2)
        throw DataError("covariance grid does not match the requested grid");
    const double sigma2 = noise_sigma2 < 0.0 ? 1.0 / grid.cells() : noise_sigma2;
    const double sigma = std::sqrt(sigma2);

    // Factor either each Kronecker term or the dense covariance once.
    std::vector<std::pair<Eigen::MatrixXd, Eigen::MatrixXd>> term_factors;
    Eigen::MatrixXd dense_factor;
    const double psd_tol = 1e-8;
    if (cov.dense) {
        const std::size_t g = grid.cells();
        Eigen::MatrixXd c(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g));
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j)
                for (int i2 = 0; i2 < grid.d1; ++i2)
                    for (int j2 = 0; j2 < grid.d2; ++j2)
                        c(static_cast<Eigen::Index>(i) * grid.d2 + j,
                          static_cast<Eigen::Index>(i2) * grid.d2 + j2) =
                            cov.value(i, j, i2, j2);
        double min_eig = 0.0;
        dense_factor = psd_factor(c, &min_eig);
        if (min_eig < -psd_tol * std::max(1.0, c.diagonal().maxCoeff()))
            throw NonPsdCovariance("covariance has eigenvalue " + std::to_string(min_eig));
    } else {
        for (const auto& [a, b] : cov.terms) {
            double min_a = 0.0, min_b = 0.0;
            Eigen::MatrixXd fa = psd_factor(a, &min_a);
            Eigen::MatrixXd fb = psd_factor(b, &min_b);
            const double tol_a = psd_tol * std::max(1.0, a.diagonal().cwiseAbs().maxCoeff());
            const double tol_b = psd_tol * std::max(1.0, b.diagonal().cwiseAbs().maxCoeff());
            if (min_a < -tol_a || min_b < -tol_b)
                throw NonPsdCovariance("Kronecker factor has a negative eigenvalue");
            term_factors.emplace_back(std::move(fa), std::move(fb));
        }
    }

    const std::size_t cells = grid.cells();
    const int m_obs = static_cast<int>(
        std::min<double>(static_cast<double>(cells), std::ceil(sparsity_p * cells)));

    SimulatedBatch batch;
    batch.noise_sigma2 = sigma2;
    batch.latent.reserve(static_cast<std::size_t>(n));
    batch.sparse.n_surfaces = n;

    std::vector<int> cell_ids(cells);
    for (int surf = 0; surf < n; ++surf) {
        const std::uint64_t base = static_cast<std::uint64_t>(surf) << 32;
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
        if (cov.dense) {
            Eigen::VectorXd xi(static_cast<Eigen::Index>(cells));
            for (std::size_t k = 0; k < cells; ++k)
                xi(static_cast<Eigen::Index>(k)) =
                    rng::normal(seed, rng::stream::surface_values, base + k);
            const Eigen::VectorXd v = dense_factor * xi;
            for (int i = 0; i < grid.d1; ++i)
                for (int j = 0; j < grid.d2; ++j)
                    x(i, j) = v(static_cast<Eigen::Index>(i) * grid.d2 + j);
        } else {
            std::uint64_t counter = base;
            for (const auto& [fa, fb] : term_factors) {
                Eigen::MatrixXd g(grid.d1, grid.d2);
                for (int i = 0; i < grid.d1; ++i)
                    for (int j = 0; j < grid.d2; ++j)
                        g(i, j) = rng::normal(seed, rng::stream::surface_values, counter++);
                x.noalias() += fa * g * fb.transpose();
            }
        }

        // Uniform subsample of exactly m_obs cells (partial Fisher-Yates).
        std::iota(cell_ids.begin(), cell_ids.end(), 0);
        for (int k = 0; k < m_obs; ++k) {
            const double u = rng::uniform01(seed, rng::stream::subsample,
                                            base + static_cast<std::uint64_t>(k));
            const int j = k + std::min(static_cast<int>(u * (static_cast<double>(cells) - k)),
                                       static_cast<int>(cells) - k - 1);
            std::swap(cell_ids[static_cast<std::size_t>(k)], cell_ids[static_cast<std::size_t>(j)]);
        }
        for (int k = 0; k < m_obs; ++k) {
            const int cell = cell_ids[static_cast<std::size_t>(k)];
            const int i = cell / grid.d2;
            const int j = cell % grid.d2;
            SparseObservation obs;
            obs.surface_id = surf;
            obs.t = grid.t_mid(i);
            obs.s = grid.s_mid(j);
            obs.y = x(i, j) + sigma * rng::normal(seed, rng::stream::noise,
                                                  base + static_cast<std::uint64_t>(k));
            batch.sparse.observations.push_back(obs);
        }
        batch.latent.push_back(std::move(x));
    }
    return batch;
}

SparseDataset sample_surfaces(const ScenarioCovariance& cov, const Grid2& grid, int n,
                              double noise_sigma2, double sparsity_p, std::uint64_t seed) {
    return simulate_batch(cov, grid, n, noise_sigma2, sparsity_p, seed).sparse;
}

namespace {

double kron_inner(const ScenarioCovariance& a, const ScenarioCovariance& b) {
    double acc = 0.0;
    for (const auto& [a1, b1] : a.terms)
        for (const auto& [a2, b2] : b.terms)
            acc += a1.cwiseProduct(a2).sum() * b1.cwiseProduct(b2).sum();
    return acc;
}

double dense_kron_inner(const FullCovariance& c, const ScenarioCovariance& s) {
    double acc = 0.0;
    for (int i = 0; i < c.n1(); ++i)
        for (int j = 0; j < c.n2(); ++j)
            for (int i2 = 0; i2 < c.n3(); ++i2)
                for (int j2 = 0; j2 < c.n4(); ++j2) acc += c(i, j, i2, j2) * s.value(i, j, i2, j2);
    return acc;
}

double dense_inner(const FullCovariance& a, const FullCovariance& b) {
    double acc = 0.0;
    const auto& fa = a.flat();
    const auto& fb = b.flat();
    for (std::size_t k = 0; k < fa.size(); ++k) acc += fa[k] * fb[k];
    return acc;
}

double self_inner(const ScenarioCovariance& c) {
    return c.dense ? dense_inner(*c.dense, *c.dense) : kron_inner(c, c);
}

double cross_inner(const ScenarioCovariance& a, const ScenarioCovariance& b) {
    if (!a.dense && !b.dense) return kron_inner(a, b);
    if (a.dense && b.dense) return dense_inner(*a.dense, *b.dense);
    if (a.dense) return dense_kron_inner(*a.dense, b);
    return dense_kron_inner(*b.dense, a);
}

} // namespace

double relative_error(const ScenarioCovariance& estimate, const ScenarioCovariance& truth) {
    if (estimate.d1() != truth.d1() || estimate.d2() != truth.d2())
        throw DataError("covariance shapes do not match");
    const double t2 = self_inner(truth);
    if (!(t2 > 0.0)) throw DataError("truth covariance has zero norm");
    const double e2 = self_inner(estimate);
    const double x = cross_inner(estimate, truth);
    const double diff2 = std::max(e2 - 2.0 * x + t2, 0.0);
    return std::sqrt(diff2 / t2);
}

namespace {

// One half-sweep of the non-marginalized reference path: every raw covariance
// pair is a separate scatter point.
Eigen::MatrixXd unpooled_sweep(const std::vector<MaskedGridSample>& centered, const Grid2& grid,
                               const Eigen::MatrixXd& fixed, bool temporal, const Bandwidths2& bw,
                               const FallbackPolicy& policy) {
    ScatterCloud cloud;
    for (const auto& sample : centered) {
        std::vector<std::pair<int, int>> cells;
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j)
                if (sample.mask(i, j) > 0.0) cells.emplace_back(i, j);
        for (const auto& [i, j] : cells)
            for (const auto& [i2, j2] : cells) {
                const int fixed_a = temporal ? j : i;
                const int fixed_b = temporal ? j2 : i2;
                if (fixed_a == fixed_b) continue; // diagonal of the held-fixed kernel
                const double denom = fixed(fixed_a, fixed_b);
                if (denom == 0.0) continue;
                const double g = sample.values(i, j) * sample.values(i2, j2);
                ScatterPoint pt;
                pt.x = temporal ? grid.t_mid(i) : grid.s_mid(j);
                pt.y = temporal ? grid.t_mid(i2) : grid.s_mid(j2);
                pt.z = g / denom;
                pt.w = denom * denom;
                cloud.push_back(pt);
            }
    }
    if (cloud.empty()) throw InsufficientPairs();
    const auto mids = temporal ? grid.t_mids() : grid.s_mids();
    Eigen::MatrixXd out = smooth2d(cloud, bw, EvalGrid2(mids, mids), policy);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        for (Eigen::Index j = 0; j < out.cols(); ++j)
            if (is_missing(out(i, j)))
                throw DegenerateWindow(mids[static_cast<std::size_t>(i)],
                                       mids[static_cast<std::size_t>(j)]);
    return symmetrized(out);
}

} // namespace

SeparableModel fit_separable_nonmarginalized(const SparseDataset& ds, const Grid2& grid,
                                             const FitOptions& opts) {
    ds.validate();
    if (!opts.bandwidths)
        throw DataError("the non-marginalized reference path requires explicit bandwidths");
    const FitBandwidths& bw = *opts.bandwidths;
    const auto samples = grid_dataset(ds, grid);
    Eigen::MatrixXd mean = estimate_mean(samples, grid, bw.mean, opts.fallback);
    const auto centered = center(samples, mean);

    Eigen::MatrixXd b_cur = opts.init_scale * Eigen::MatrixXd::Ones(grid.d2, grid.d2);
    Eigen::MatrixXd a_cur;
    for (int step = 0; step < opts.steps; ++step) {
        a_cur = unpooled_sweep(centered, grid, b_cur, true, bw.temporal, opts.fallback);
        b_cur = unpooled_sweep(centered, grid, a_cur, false, bw.spatial, opts.fallback);
    }

    SeparableModel model;
    model.grid = grid;
    model.mean = std::move(mean);
    model.A = std::move(a_cur);
    model.B = std::move(b_cur);
    model.sigma2 = estimate_noise(centered, grid, model.A, model.B, bw.diagonal, opts.fallback);
    model.bandwidths = bw;
    model.meta.n_surfaces = ds.n_surfaces;
    model.meta.n_obs = ds.observations.size();
    model.meta.seed = opts.seed;
    return normalize(std::move(model));
}

// ---- Hold-out evaluation ----

HoldoutPattern::Kind holdout_kind_from_string(const std::string& name) {
    if (name == "chain") return HoldoutPattern::Kind::chain;
    if (name == "itm") return HoldoutPattern::Kind::itm;
    if (name == "otm") return HoldoutPattern::Kind::otm;
    if (name == "short") return HoldoutPattern::Kind::short_maturity;
    if (name == "long") return HoldoutPattern::Kind::long_maturity;
    throw DataError("unknown hold-out pattern '" + name + "'");
}

std::string to_string(HoldoutPattern::Kind kind) {
    switch (kind) {
    case HoldoutPattern::Kind::chain: return "chain";
    case HoldoutPattern::Kind::itm: return "itm";
    case HoldoutPattern::Kind::otm: return "otm";
    case HoldoutPattern::Kind::short_maturity: return "short";
    case HoldoutPattern::Kind::long_maturity: return "long";
    }
    return "?";
}

EvalMethod EvalMethod::presmooth_benchmark() {
    EvalMethod m;
    m.kind = Kind::presmooth;
    m.name = "presmooth";
    return m;
}

EvalMethod EvalMethod::separable_fit(FitOptions opts) {
    EvalMethod m;
    m.kind = Kind::separable;
    m.name = "separable";
    m.fit = std::move(opts);
    // Smoothed kernels need not be PSD; prediction-facing fits clip the
    // eigenvalues so the BLUP systems stay solvable.
    m.fit.psd_project = true;
    return m;
}

EvalMethod EvalMethod::fourd_fit(FitOptions opts, std::optional<Bandwidths4> bw) {
    EvalMethod m;
    m.kind = Kind::fourd;
    m.name = "4d";
    m.fit = std::move(opts);
    m.bw4 = bw;
    return m;
}

EvalMethod EvalMethod::oracle_model(SeparableModel model) {
    EvalMethod m;
    m.kind = Kind::oracle;
    m.name = "oracle";
    m.oracle = std::move(model);
    return m;
}

namespace {

struct Task {
    std::vector<const SparseObservation*> kept;
    std::vector<const SparseObservation*> discarded;
};

// Splits one surface's observations under the pattern; empty result means the
// surface is skipped.
std::vector<Task> make_tasks(const std::vector<const SparseObservation*>& obs, const Grid2& grid,
                             const HoldoutPattern& pattern) {
    std::vector<Task> tasks;
    using Kind = HoldoutPattern::Kind;
    if (pattern.kind == Kind::chain) {
        // A chain is the set of observations sharing a time-to-expiration row.
        std::vector<int> rows;
        for (const auto* o : obs) {
            const int r = grid.t_cell(o->t);
            if (std::find(rows.begin(), rows.end(), r) == rows.end()) rows.push_back(r);
        }
        if (rows.size() < 2) return tasks;
        std::sort(rows.begin(), rows.end());
        for (int r : rows) {
            Task task;
            for (const auto* o : obs)
                (grid.t_cell(o->t) == r ? task.discarded : task.kept).push_back(o);
            tasks.push_back(std::move(task));
        }
        return tasks;
    }
    Task task;
    for (const auto* o : obs) {
        bool discard = false;
        switch (pattern.kind) {
        case Kind::itm: discard = o->s <= pattern.s_threshold; break;
        case Kind::otm: discard = o->s >= pattern.s_threshold; break;
        case Kind::short_maturity: discard = o->t < pattern.t_threshold; break;
        case Kind::long_maturity: discard = o->t > pattern.t_threshold; break;
        case Kind::chain: break;
        }
        (discard ? task.discarded : task.kept).push_back(o);
    }
    if (!task.discarded.empty() && !task.kept.empty()) tasks.push_back(std::move(task));
    return tasks;
}

struct FittedMethod {
    const EvalMethod* method = nullptr;
    std::optional<SeparableModel> model; // separable / oracle
    std::optional<FullCovariance> cov4;  // fourd
    Eigen::MatrixXd mean4;
    double sigma2_4 = 0.0;
};

FittedMethod fit_method_on(const EvalMethod& method, const SparseDataset& train,
                           const Grid2& grid) {
    FittedMethod fitted;
    fitted.method = &method;
    switch (method.kind) {
    case EvalMethod::Kind::presmooth: break;
    case EvalMethod::Kind::oracle: fitted.model = method.oracle.value(); break;
    case EvalMethod::Kind::separable: fitted.model = fit_separable(train, grid, method.fit); break;
    case EvalMethod::Kind::fourd: {
        FitBandwidths bw;
        if (method.fit.bandwidths) {
            bw = *method.fit.bandwidths;
        } else {
            CvSpec cv = method.fit.cv;
            if (cv.candidates.empty()) cv.candidates = default_candidate_ladder(grid);
            if (cv.seed == 0) cv.seed = method.fit.seed;
            bw.mean = cv_mean_bandwidth(train, grid, cv);
            bw.diagonal = bw.mean;
            auto [bwa, bwb] = cv_covariance_bandwidths(train, grid, cv, nullptr, nullptr,
                                                       &bw.mean);
            bw.temporal = bwa;
            bw.spatial = bwb;
        }
        const Bandwidths4 bw4 =
            method.bw4 ? *method.bw4 : transfer_to_4d(bw.temporal, bw.spatial);
        const auto samples = grid_dataset(train, grid);
        fitted.mean4 = estimate_mean(samples, grid, bw.mean, method.fit.fallback);
        const auto centered = center(samples, fitted.mean4);
        fitted.cov4 = smooth4d_covariance(centered, grid, bw4, method.fit.fallback);
        // Prediction needs a usable covariance: clip the cell-indexed matrix
        // to PSD before it enters any BLUP system.
        {
            const std::size_t g = grid.cells();
            Eigen::MatrixXd m(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(g));
            for (int i = 0; i < grid.d1; ++i)
                for (int j = 0; j < grid.d2; ++j)
                    for (int i2 = 0; i2 < grid.d1; ++i2)
                        for (int j2 = 0; j2 < grid.d2; ++j2)
                            m(static_cast<Eigen::Index>(i) * grid.d2 + j,
                              static_cast<Eigen::Index>(i2) * grid.d2 + j2) =
                                (*fitted.cov4)(i, j, i2, j2);
            m = psd_clipped(m);
            for (int i = 0; i < grid.d1; ++i)
                for (int j = 0; j < grid.d2; ++j)
                    for (int i2 = 0; i2 < grid.d1; ++i2)
                        for (int j2 = 0; j2 < grid.d2; ++j2)
                            (*fitted.cov4)(i, j, i2, j2) =
                                m(static_cast<Eigen::Index>(i) * grid.d2 + j,
                                  static_cast<Eigen::Index>(i2) * grid.d2 + j2);
        }
        // Noise level: diagonal smoother against the 4D estimate's diagonal,
        // averaged over the middle region.
        const auto mids_ok = [](double c) { return c > 0.25 && c < 0.75; };
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
        Eigen::MatrixXd count = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
        for (const auto& sample : centered) {
            sum += sample.values.cwiseProduct(sample.values).cwiseProduct(sample.mask);
            count += sample.mask;
        }
        ScatterCloud cloud;
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j)
                if (count(i, j) > 0.0)
                    cloud.push_back(
                        {grid.t_mid(i), grid.s_mid(j), sum(i, j) / count(i, j), count(i, j)});
        const Eigen::MatrixXd v =
            smooth2d(cloud, bw.diagonal, EvalGrid2(grid.t_mids(), grid.s_mids()),
                     method.fit.fallback);
        double acc = 0.0;
        std::size_t cells = 0;
        for (int pass = 0; pass < 2 && cells == 0; ++pass) {
            acc = 0.0;
            for (int i = 0; i < grid.d1; ++i)
                for (int j = 0; j < grid.d2; ++j) {
                    if (pass == 0 && !(mids_ok(grid.t_mid(i)) && mids_ok(grid.s_mid(j))))
                        continue;
                    if (is_missing(v(i, j)))
                        throw DegenerateWindow(grid.t_mid(i), grid.s_mid(j));
                    acc += v(i, j) - (*fitted.cov4)(i, j, i, j);
                    ++cells;
                }
        }
        fitted.sigma2_4 = std::max(acc / static_cast<double>(cells), 0.0);
        break;
    }
    }
    return fitted;
}

} // namespace

HoldoutReport holdout_evaluate(const SparseDataset& ds, const Grid2& grid,
                               const HoldoutPattern& pattern,
                               const std::vector<EvalMethod>& methods,
                               const HoldoutOptions& opts) {
    ds.validate();
    if (methods.empty()) throw DataError("no methods to evaluate");
    const auto labels = fold_assignment(ds.n_surfaces, opts.folds, opts.seed);

    std::vector<std::vector<const SparseObservation*>> per_surface(
        static_cast<std::size_t>(ds.n_surfaces));
    for (const auto& obs : ds.observations)
        per_surface[static_cast<std::size_t>(obs.surface_id)].push_back(&obs);

    HoldoutReport report;
    std::map<std::string, std::vector<double>> ratios;

    for (int fold = 0; fold < opts.folds; ++fold) {
        // Train dataset with contiguous surface ids.
        SparseDataset train;
        {
            std::vector<int> remap(static_cast<std::size_t>(ds.n_surfaces), -1);
            int next = 0;
            for (int s = 0; s < ds.n_surfaces; ++s)
                if (labels[static_cast<std::size_t>(s)] != fold) remap[static_cast<std::size_t>(s)] = next++;
            train.n_surfaces = next;
            for (const auto& obs : ds.observations) {
                if (labels[static_cast<std::size_t>(obs.surface_id)] == fold) continue;
                SparseObservation o = obs;
                o.surface_id = remap[static_cast<std::size_t>(obs.surface_id)];
                train.observations.push_back(o);
            }
        }

        std::vector<FittedMethod> fitted;
        fitted.reserve(methods.size());
        for (const auto& method : methods) fitted.push_back(fit_method_on(method, train, grid));

        for (int surf = 0; surf < ds.n_surfaces; ++surf) {
            if (labels[static_cast<std::size_t>(surf)] != fold) continue;
            const auto& obs = per_surface[static_cast<std::size_t>(surf)];
            if (obs.empty()) {
                ++report.skipped_surfaces;
                continue;
            }
            const auto tasks = make_tasks(obs, grid, pattern);
            if (tasks.empty()) {
                ++report.skipped_surfaces;
                continue;
            }
            int task_id = 0;
            for (const auto& task : tasks) {
                // Pre-smoothing benchmark from the kept observations.
                std::vector<SparseObservation> kept_obs;
                kept_obs.reserve(task.kept.size());
                for (const auto* o : task.kept) kept_obs.push_back(*o);
                const Eigen::MatrixXd bench =
                    presmooth_predict(kept_obs, grid, opts.presmooth_bw);
                double bench_sse = 0.0;
                for (const auto* o : task.discarded) {
                    const double r = bench(grid.t_cell(o->t), grid.s_cell(o->s)) - o->y;
                    bench_sse += r * r;
                }
                if (!(bench_sse > 0.0)) {
                    ++report.skipped_tasks;
                    ++task_id;
                    continue;
                }

                NewObservations kept;
                for (const auto* o : task.kept) {
                    kept.t.push_back(o->t);
                    kept.s.push_back(o->s);
                    kept.y.push_back(o->y);
                }

                for (const auto& fm : fitted) {
                    double sse = 0.0;
                    if (fm.method->kind == EvalMethod::Kind::presmooth) {
                        sse = bench_sse;
                    } else if (fm.cov4) {
                        const FullCovariance& c4 = *fm.cov4;
                        const BlupResult pred = blup_with_covariance(
                            grid, fm.mean4,
                            [&c4](int i, int j, int i2, int j2) { return c4(i, j, i2, j2); },
                            fm.sigma2_4, kept, opts.ridge);
                        for (const auto* o : task.discarded) {
                            const double r =
                                pred.predicted(grid.t_cell(o->t), grid.s_cell(o->s)) - o->y;
                            sse += r * r;
                        }
                    } else {
                        const BlupResult pred = blup(*fm.model, kept, opts.ridge);
                        for (const auto* o : task.discarded) {
                            const double r =
                                pred.predicted(grid.t_cell(o->t), grid.s_cell(o->s)) - o->y;
                            sse += r * r;
                        }
                    }
                    HoldoutRow row;
                    row.fold = fold;
                    row.surface_id = surf;
                    row.task = task_id;
                    row.method = fm.method->name;
                    row.rmse_ratio = std::sqrt(sse / bench_sse);
                    ratios[row.method].push_back(row.rmse_ratio);
                    report.rows.push_back(std::move(row));
                }
                ++task_id;
            }
        }
    }
    for (const auto& [name, values] : ratios) report.median_ratio[name] = median(values);
    return report;
}

// ---- Benchmarks ----

std::vector<ErrorRow> error_benchmark(const Scenario& sc, const std::vector<double>& ps, int n,
                                      int replicates, const std::vector<std::string>& methods,
                                      std::uint64_t seed,
                                      const std::optional<FitBandwidths>& fixed_bw) {
    const ScenarioCovariance truth = scenario_covariance(sc);
    std::vector<ErrorRow> rows;
    for (std::size_t pi = 0; pi < ps.size(); ++pi) {
        for (int rep = 0; rep < replicates; ++rep) {
            const std::uint64_t batch_seed =
                rng::key(seed, rng::stream::generic,
                         (static_cast<std::uint64_t>(pi) << 32) | static_cast<std::uint64_t>(rep));
            const SimulatedBatch batch =
                simulate_batch(truth, sc.grid, n, -1.0, ps[pi], batch_seed);
            for (const auto& method : methods) {
                ErrorRow row;
                row.scenario = to_string(sc.kind);
                row.p = ps[pi];
                row.n = n;
                row.method = method;
                row.replicate = rep;
                FitOptions fit;
                fit.bandwidths = fixed_bw;
                fit.seed = batch_seed;
                if (method == "onestep" || method == "separable") {
                    fit.steps = method == "onestep" ? 1 : 2;
                    const SeparableModel model = fit_separable(batch.sparse, sc.grid, fit);
                    row.rel_error =
                        relative_error(ScenarioCovariance(model.A, model.B), truth);
                } else if (method == "bsa") {
                    const BsaResult res = bsa(empirical_covariance(batch.latent));
                    row.rel_error = relative_error(ScenarioCovariance(res.A, res.B), truth);
                } else if (method == "fourd") {
                    FitBandwidths bw;
                    if (fixed_bw) {
                        bw = *fixed_bw;
                    } else {
                        CvSpec cv;
                        cv.candidates = default_candidate_ladder(sc.grid);
                        cv.seed = batch_seed;
                        bw.mean = cv_mean_bandwidth(batch.sparse, sc.grid, cv);
                        bw.diagonal = bw.mean;
                        auto [bwa, bwb] = cv_covariance_bandwidths(batch.sparse, sc.grid, cv,
                                                                   nullptr, nullptr, &bw.mean);
                        bw.temporal = bwa;
                        bw.spatial = bwb;
                    }
                    const auto samples = grid_dataset(batch.sparse, sc.grid);
                    const Eigen::MatrixXd mean = estimate_mean(samples, sc.grid, bw.mean);
                    const auto centered = center(samples, mean);
                    const FullCovariance c4 = smooth4d_covariance(
                        centered, sc.grid, transfer_to_4d(bw.temporal, bw.spatial));
                    row.rel_error = relative_error(ScenarioCovariance(c4), truth);
                } else {
                    throw DataError("unknown benchmark method '" + method + "'");
                }
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

std::vector<TimingRow> runtime_benchmark(const Scenario& sc, double p, int n, int replicates,
                                         const FitBandwidths& bw, std::uint64_t seed) {
    using clock = std::chrono::steady_clock;
    const ScenarioCovariance truth = scenario_covariance(sc);
    std::vector<TimingRow> rows;
    for (int rep = 0; rep < replicates; ++rep) {
        const std::uint64_t batch_seed =
            rng::key(seed, rng::stream::generic, static_cast<std::uint64_t>(rep));
        const SimulatedBatch batch = simulate_batch(truth, sc.grid, n, -1.0, p, batch_seed);
        FitOptions fit;
        fit.bandwidths = bw;

        auto timed = [&](const std::string& method, auto&& fn) {
            const auto start = clock::now();
            fn();
            const auto stop = clock::now();
            TimingRow row;
            row.scenario = to_string(sc.kind);
            row.p = p;
            row.n = n;
            row.method = method;
            row.replicate = rep;
            row.seconds = std::chrono::duration<double>(stop - start).count();
            rows.push_back(std::move(row));
        };

        timed("separable", [&] { (void)fit_separable(batch.sparse, sc.grid, fit); });
        timed("separable_nomarg",
              [&] { (void)fit_separable_nonmarginalized(batch.sparse, sc.grid, fit); });
        timed("fourd", [&] {
            const auto samples = grid_dataset(batch.sparse, sc.grid);
            const Eigen::MatrixXd mean = estimate_mean(samples, sc.grid, bw.mean);
            const auto centered = center(samples, mean);
            (void)smooth4d_covariance(centered, sc.grid,
                                      transfer_to_4d(bw.temporal, bw.spatial));
        });
    }
    return rows;
}

} // namespace sepsurf
