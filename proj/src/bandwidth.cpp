#include "sepsurf/bandwidth.hpp"

#include "sepsurf/errors.hpp"
#include "sepsurf/parallel.hpp"
#include "sepsurf/rng.hpp"
#include "sepsurf/separable.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sepsurf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> resolve_candidates(const CvSpec& spec, const Grid2& grid) {
    std::vector<double> c = spec.candidates.empty() ? default_candidate_ladder(grid)
                                                    : spec.candidates;
    for (std::size_t k = 0; k < c.size(); ++k) {
        if (!(c[k] > 0.0)) throw DataError("bandwidth candidates must be positive");
        if (k > 0 && !(c[k] > c[k - 1])) throw DataError("bandwidth candidates must be sorted");
    }
    return c;
}

// Smallest score wins; equal scores go to the larger bandwidth.
std::size_t pick_candidate(const std::vector<double>& scores) {
    std::size_t best = 0;
    bool found = false;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (std::isinf(scores[k]) || std::isnan(scores[k])) continue;
        if (!found || scores[k] <= scores[best]) {
            best = k;
            found = true;
        }
    }
    if (!found) throw AllCandidatesDegenerate();
    return best;
}

struct PooledCells {
    Eigen::MatrixXd sum_w;
    Eigen::MatrixXd sum_num;

    ScatterCloud cloud(const std::vector<double>& mids) const {
        ScatterCloud c;
        for (Eigen::Index i = 0; i < sum_w.rows(); ++i)
            for (Eigen::Index j = 0; j < sum_w.cols(); ++j)
                if (sum_w(i, j) > 0.0)
                    c.push_back({mids[static_cast<std::size_t>(i)],
                                 mids[static_cast<std::size_t>(j)], sum_num(i, j) / sum_w(i, j),
                                 sum_w(i, j)});
        return c;
    }
};

// Holdout aggregates per cell: sum W, sum W Z, sum W Z^2, so the weighted
// squared error against any smoothed surface is a cellwise expression.
struct HoldoutCells {
    Eigen::MatrixXd w;
    Eigen::MatrixXd wz;
    Eigen::MatrixXd wz2;

    double score_against(const Eigen::MatrixXd& fitted) const {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                if (w(i, j) <= 0.0) continue;
                if (is_missing(fitted(i, j))) return kInf;
                const double f = fitted(i, j);
                acc += wz2(i, j) - 2.0 * f * wz(i, j) + f * f * w(i, j);
            }
        return acc;
    }
};

void accumulate_marginal(const MarginalClouds& clouds, const std::vector<int>& labels, int fold,
                         bool train, PooledCells* pooled, HoldoutCells* holdout) {
    const Eigen::Index rows = clouds.W.at(0).rows();
    const Eigen::Index cols = clouds.W.at(0).cols();
    if (pooled) {
        pooled->sum_w = Eigen::MatrixXd::Zero(rows, cols);
        pooled->sum_num = Eigen::MatrixXd::Zero(rows, cols);
    }
    if (holdout) {
        holdout->w = Eigen::MatrixXd::Zero(rows, cols);
        holdout->wz = Eigen::MatrixXd::Zero(rows, cols);
        holdout->wz2 = Eigen::MatrixXd::Zero(rows, cols);
    }
    for (std::size_t n = 0; n < clouds.W.size(); ++n) {
        const bool in_train = labels[n] != fold;
        if (train && in_train && pooled) {
            pooled->sum_w += clouds.W[n];
            pooled->sum_num += clouds.W[n].cwiseProduct(clouds.Z[n]);
        } else if (!in_train && holdout) {
            holdout->w += clouds.W[n];
            holdout->wz += clouds.W[n].cwiseProduct(clouds.Z[n]);
            holdout->wz2 += clouds.W[n].cwiseProduct(clouds.Z[n]).cwiseProduct(clouds.Z[n]);
        }
    }
}

} // namespace

std::vector<double> default_candidate_ladder(const Grid2& grid, int count) {
    const double lo = 1.5 / std::min(grid.d1, grid.d2);
    const double hi = 0.5;
    if (count < 1) throw DataError("candidate count must be positive");
    if (lo >= hi) return {hi};
    std::vector<double> out(static_cast<std::size_t>(count));
    const double ratio = std::pow(hi / lo, 1.0 / (count - 1));
    double h = lo;
    for (int k = 0; k < count; ++k) {
        out[static_cast<std::size_t>(k)] = (k == count - 1) ? hi : h;
        h *= ratio;
    }
    return out;
}

std::vector<int> fold_assignment(int n_surfaces, int folds, std::uint64_t seed) {
    if (folds < 2) throw DataError("need at least two folds");
    std::vector<int> ids(static_cast<std::size_t>(n_surfaces));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = n_surfaces - 1; i > 0; --i) {
        const auto u = rng::uniform01(seed, rng::stream::folds, static_cast<std::uint64_t>(i));
        const int j = std::min(i, static_cast<int>(u * (i + 1)));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    std::vector<int> labels(static_cast<std::size_t>(n_surfaces));
    for (int k = 0; k < n_surfaces; ++k)
        labels[static_cast<std::size_t>(ids[static_cast<std::size_t>(k)])] = k % folds;
    return labels;
}

Bandwidths2 cv_mean_bandwidth(const SparseDataset& ds, const Grid2& grid, const CvSpec& spec,
                              CvReport* report) {
    ds.validate();
    if (ds.n_surfaces < spec.folds)
        throw DataError("cross-validation needs at least as many surfaces as folds");
    const auto candidates = resolve_candidates(spec, grid);
    const auto labels = fold_assignment(ds.n_surfaces, spec.folds, spec.seed);
    const auto samples = grid_dataset(ds, grid);
    const auto mids_t = grid.t_mids();
    const auto mids_s = grid.s_mids();

    // Per-fold pooled mean clouds over the train surfaces.
    std::vector<ScatterCloud> train_clouds(static_cast<std::size_t>(spec.folds));
    for (int f = 0; f < spec.folds; ++f) {
        Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
        Eigen::MatrixXd count = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
        for (std::size_t n = 0; n < samples.size(); ++n) {
            if (labels[n] == f) continue;
            sum += samples[n].values.cwiseProduct(samples[n].mask);
            count += samples[n].mask;
        }
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j)
                if (count(i, j) > 0.0)
                    train_clouds[static_cast<std::size_t>(f)].push_back(
                        {grid.t_mid(i), grid.s_mid(j), sum(i, j) / count(i, j), count(i, j)});
    }

    const std::size_t n_pairs = candidates.size() * static_cast<std::size_t>(spec.folds);
    std::vector<double> partial(n_pairs, 0.0);
    parallel_for(n_pairs, [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::size_t c = idx / static_cast<std::size_t>(spec.folds);
            const int f = static_cast<int>(idx % static_cast<std::size_t>(spec.folds));
            const Bandwidths2 bw(candidates[c], candidates[c]);
            const Eigen::MatrixXd mu =
                smooth2d(train_clouds[static_cast<std::size_t>(f)], bw, EvalGrid2(mids_t, mids_s));
            double acc = 0.0;
            for (const auto& obs : ds.observations) {
                if (labels[static_cast<std::size_t>(obs.surface_id)] != f) continue;
                const double fitted = mu(grid.t_cell(obs.t), grid.s_cell(obs.s));
                if (is_missing(fitted)) {
                    acc = kInf;
                    break;
                }
                const double r = obs.y - fitted;
                acc += r * r;
            }
            partial[idx] = acc;
        }
    });

    std::vector<double> scores(candidates.size(), 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c)
        for (int f = 0; f < spec.folds; ++f)
            scores[c] += partial[c * static_cast<std::size_t>(spec.folds) +
                                 static_cast<std::size_t>(f)];

    const std::size_t best = pick_candidate(scores);
    if (report) {
        report->candidates = candidates;
        report->scores = scores;
        report->chosen = candidates[best];
        report->fold_seed = spec.seed;
    }
    return Bandwidths2(candidates[best], candidates[best]);
}

std::pair<Bandwidths2, Bandwidths2> cv_covariance_bandwidths(const SparseDataset& ds,
                                                             const Grid2& grid, const CvSpec& spec,
                                                             CvReport* report_a,
                                                             CvReport* report_b,
                                                             const Bandwidths2* mean_bw) {
    ds.validate();
    if (ds.n_surfaces < spec.folds)
        throw DataError("cross-validation needs at least as many surfaces as folds");
    const auto candidates = resolve_candidates(spec, grid);
    const auto labels = fold_assignment(ds.n_surfaces, spec.folds, spec.seed);

    const Bandwidths2 bw_mean = mean_bw ? *mean_bw : cv_mean_bandwidth(ds, grid, spec);
    const auto samples = grid_dataset(ds, grid);
    const Eigen::MatrixXd mean = estimate_mean(samples, grid, bw_mean);
    const auto centered = center(samples, mean);

    const auto mids_t = grid.t_mids();
    const auto mids_s = grid.s_mids();
    const Eigen::MatrixXd ones_b = Eigen::MatrixXd::Ones(grid.d2, grid.d2);
    const MarginalClouds temporal = marginalize_temporal(centered, ones_b);

    std::vector<PooledCells> train_t(static_cast<std::size_t>(spec.folds));
    std::vector<HoldoutCells> hold_t(static_cast<std::size_t>(spec.folds));
    for (int f = 0; f < spec.folds; ++f)
        accumulate_marginal(temporal, labels, f, true, &train_t[static_cast<std::size_t>(f)],
                            &hold_t[static_cast<std::size_t>(f)]);

    auto score_phase = [&](const std::vector<PooledCells>& train,
                           const std::vector<HoldoutCells>& hold,
                           const std::vector<double>& mids) {
        const std::size_t n_pairs = candidates.size() * static_cast<std::size_t>(spec.folds);
        std::vector<double> partial(n_pairs, 0.0);
        parallel_for(n_pairs, [&](std::size_t begin, std::size_t end) {
            for (std::size_t idx = begin; idx < end; ++idx) {
                const std::size_t c = idx / static_cast<std::size_t>(spec.folds);
                const std::size_t f = idx % static_cast<std::size_t>(spec.folds);
                const Bandwidths2 bw(candidates[c], candidates[c]);
                const ScatterCloud cloud = train[f].cloud(mids);
                if (cloud.empty()) {
                    partial[idx] = kInf;
                    continue;
                }
                const Eigen::MatrixXd fitted = smooth2d(cloud, bw, EvalGrid2(mids, mids));
                partial[idx] = hold[f].score_against(fitted);
            }
        });
        std::vector<double> scores(candidates.size(), 0.0);
        for (std::size_t c = 0; c < candidates.size(); ++c)
            for (int f = 0; f < spec.folds; ++f)
                scores[c] += partial[c * static_cast<std::size_t>(spec.folds) +
                                     static_cast<std::size_t>(f)];
        return scores;
    };

    const std::vector<double> scores_a = score_phase(train_t, hold_t, mids_t);
    const std::size_t best_a = pick_candidate(scores_a);
    const Bandwidths2 bw_a(candidates[best_a], candidates[best_a]);

    // Spatial phase: each fold re-estimates the preliminary temporal kernel at
    // the chosen temporal bandwidth, then weights its spatial clouds with it.
    std::vector<PooledCells> train_s(static_cast<std::size_t>(spec.folds));
    std::vector<HoldoutCells> hold_s(static_cast<std::size_t>(spec.folds));
    for (int f = 0; f < spec.folds; ++f) {
        const ScatterCloud cloud = train_t[static_cast<std::size_t>(f)].cloud(mids_t);
        if (cloud.empty()) throw InsufficientPairs();
        Eigen::MatrixXd a0 = smooth2d(cloud, bw_a, EvalGrid2(mids_t, mids_t));
        for (Eigen::Index i = 0; i < a0.rows(); ++i)
            for (Eigen::Index j = 0; j < a0.cols(); ++j)
                if (is_missing(a0(i, j))) throw DegenerateWindow(mids_t[0], mids_t[0]);
        a0 = 0.5 * (a0 + a0.transpose());
        const MarginalClouds spatial = marginalize_spatial(centered, a0);
        accumulate_marginal(spatial, labels, f, true, &train_s[static_cast<std::size_t>(f)],
                            &hold_s[static_cast<std::size_t>(f)]);
    }

    const std::vector<double> scores_b = score_phase(train_s, hold_s, mids_s);
    const std::size_t best_b = pick_candidate(scores_b);

    if (report_a) {
        report_a->candidates = candidates;
        report_a->scores = scores_a;
        report_a->chosen = candidates[best_a];
        report_a->fold_seed = spec.seed;
    }
    if (report_b) {
        report_b->candidates = candidates;
        report_b->scores = scores_b;
        report_b->chosen = candidates[best_b];
        report_b->fold_seed = spec.seed;
    }
    return {bw_a, Bandwidths2(candidates[best_b], candidates[best_b])};
}

Bandwidths4 transfer_to_4d(const Bandwidths2& bw_a, const Bandwidths2& bw_b) {
    const double ht = 0.5 * (bw_a.h1 + bw_a.h2);
    const double hs = 0.5 * (bw_b.h1 + bw_b.h2);
    return Bandwidths4(ht, hs, ht, hs);
}

} // namespace sepsurf
