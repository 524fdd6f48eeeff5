#include "sepsurf/separable.hpp"

#include "sepsurf/linalg.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace sepsurf {

namespace {

using json = nlohmann::json;

// Points sharing a location can be merged exactly: the smoother's moments only
// see sum(w) and sum(w z) per location.
ScatterCloud pooled_mean_cloud(const std::vector<MaskedGridSample>& samples, const Grid2& grid) {
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
    Eigen::MatrixXd count = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
    for (const auto& sample : samples) {
        sum += sample.values.cwiseProduct(sample.mask);
        count += sample.mask;
    }
    ScatterCloud cloud;
    cloud.reserve(grid.cells());
    for (int i = 0; i < grid.d1; ++i)
        for (int j = 0; j < grid.d2; ++j) {
            const double c = count(i, j);
            if (c > 0.0)
                cloud.push_back({grid.t_mid(i), grid.s_mid(j), sum(i, j) / c, c});
        }
    return cloud;
}

void require_all_resolved(const Eigen::MatrixXd& m, const std::vector<double>& xs,
                          const std::vector<double>& ys) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            if (is_missing(m(i, j)))
                throw DegenerateWindow(xs[static_cast<std::size_t>(i)],
                                       ys[static_cast<std::size_t>(j)]);
}

struct PooledMarginal {
    Eigen::MatrixXd sum_w;   // total pooling weight per cell pair
    Eigen::MatrixXd sum_num; // total weighted value per cell pair
};

Eigen::MatrixXd zero_diagonal(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    out.diagonal().setZero();
    return out;
}

PooledMarginal pool_temporal(const std::vector<MaskedGridSample>& centered,
                             const Eigen::MatrixXd& B) {
    const Eigen::MatrixXd bt = zero_diagonal(B);
    const Eigen::MatrixXd bt2 = bt.cwiseProduct(bt);
    const Eigen::Index d1 = centered.at(0).values.rows();
    PooledMarginal pooled;
    pooled.sum_w = Eigen::MatrixXd::Zero(d1, d1);
    pooled.sum_num = Eigen::MatrixXd::Zero(d1, d1);
    for (const auto& sample : centered) {
        pooled.sum_w.noalias() += sample.mask * bt2 * sample.mask.transpose();
        pooled.sum_num.noalias() += sample.values * bt * sample.values.transpose();
    }
    return pooled;
}

PooledMarginal pool_spatial(const std::vector<MaskedGridSample>& centered,
                            const Eigen::MatrixXd& A) {
    const Eigen::MatrixXd at = zero_diagonal(A);
    const Eigen::MatrixXd at2 = at.cwiseProduct(at);
    const Eigen::Index d2 = centered.at(0).values.cols();
    PooledMarginal pooled;
    pooled.sum_w = Eigen::MatrixXd::Zero(d2, d2);
    pooled.sum_num = Eigen::MatrixXd::Zero(d2, d2);
    for (const auto& sample : centered) {
        pooled.sum_w.noalias() += sample.mask.transpose() * at2 * sample.mask;
        pooled.sum_num.noalias() += sample.values.transpose() * at * sample.values;
    }
    return pooled;
}

// Smooths a pooled marginal over the (mids x mids) square and symmetrizes.
Eigen::MatrixXd smooth_marginal(const PooledMarginal& pooled, const std::vector<double>& mids,
                                const Bandwidths2& bw, const FallbackPolicy& policy) {
    if (!(pooled.sum_w.array() > 0.0).any()) throw InsufficientPairs();
    ScatterCloud cloud;
    cloud.reserve(static_cast<std::size_t>(pooled.sum_w.size()));
    for (Eigen::Index i = 0; i < pooled.sum_w.rows(); ++i)
        for (Eigen::Index j = 0; j < pooled.sum_w.cols(); ++j) {
            const double w = pooled.sum_w(i, j);
            if (w > 0.0)
                cloud.push_back({mids[static_cast<std::size_t>(i)],
                                 mids[static_cast<std::size_t>(j)], pooled.sum_num(i, j) / w, w});
        }
    const EvalGrid2 eval(mids, mids);
    Eigen::MatrixXd smoothed = smooth2d(cloud, bw, eval, policy);
    require_all_resolved(smoothed, mids, mids);
    return symmetrized(smoothed);
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
    return arr;
}

Eigen::MatrixXd matrix_from_json(const json& arr, Eigen::Index rows, Eigen::Index cols) {
    if (!arr.is_array() || static_cast<Eigen::Index>(arr.size()) != rows * cols)
        throw DataError("matrix field has wrong length");
    Eigen::MatrixXd m(rows, cols);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = arr[static_cast<std::size_t>(k++)];
    return m;
}

json bw_to_json(const Bandwidths2& bw) { return json{{"h1", bw.h1}, {"h2", bw.h2}}; }

Bandwidths2 bw_from_json(const json& j) {
    return Bandwidths2(j.at("h1").get<double>(), j.at("h2").get<double>());
}

} // namespace

Eigen::MatrixXd estimate_mean(const std::vector<MaskedGridSample>& samples, const Grid2& grid,
                              const Bandwidths2& bw, const FallbackPolicy& policy) {
    if (samples.empty()) throw DataError("no samples");
    const ScatterCloud cloud = pooled_mean_cloud(samples, grid);
    if (cloud.empty()) throw DataError("no observed cells");
    const auto mids_t = grid.t_mids();
    const auto mids_s = grid.s_mids();
    Eigen::MatrixXd mean = smooth2d(cloud, bw, EvalGrid2(mids_t, mids_s), policy);
    require_all_resolved(mean, mids_t, mids_s);
    return mean;
}

Eigen::MatrixXd estimate_mean(const SparseDataset& ds, const Grid2& grid, const Bandwidths2& bw,
                              const FallbackPolicy& policy) {
    ds.validate();
    return estimate_mean(grid_dataset(ds, grid), grid, bw, policy);
}

MarginalClouds marginalize_temporal(const std::vector<MaskedGridSample>& centered,
                                    const Eigen::MatrixXd& B) {
    MarginalClouds out;
    const Eigen::MatrixXd bt = zero_diagonal(B);
    const Eigen::MatrixXd bt2 = bt.cwiseProduct(bt);
    for (const auto& sample : centered) {
        if (sample.values.cols() != B.rows()) throw DataError("B dimension mismatch");
        Eigen::MatrixXd w = sample.mask * bt2 * sample.mask.transpose();
        Eigen::MatrixXd num = sample.values * bt * sample.values.transpose();
        Eigen::MatrixXd z = (w.array() > 0.0).select(num.array() / w.array(), 0.0);
        out.W.push_back(std::move(w));
        out.Z.push_back(std::move(z));
    }
    return out;
}

MarginalClouds marginalize_spatial(const std::vector<MaskedGridSample>& centered,
                                   const Eigen::MatrixXd& A) {
    MarginalClouds out;
    const Eigen::MatrixXd at = zero_diagonal(A);
    const Eigen::MatrixXd at2 = at.cwiseProduct(at);
    for (const auto& sample : centered) {
        if (sample.values.rows() != A.rows()) throw DataError("A dimension mismatch");
        Eigen::MatrixXd w = sample.mask.transpose() * at2 * sample.mask;
        Eigen::MatrixXd num = sample.values.transpose() * at * sample.values;
        Eigen::MatrixXd z = (w.array() > 0.0).select(num.array() / w.array(), 0.0);
        out.W.push_back(std::move(w));
        out.Z.push_back(std::move(z));
    }
    return out;
}

double estimate_noise(const std::vector<MaskedGridSample>& centered, const Grid2& grid,
                      const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Bandwidths2& bw,
                      const FallbackPolicy& policy) {
    // Diagonal raw covariances pooled per cell.
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
    if (cloud.empty()) throw DataError("no observed cells for the noise estimator");

    const auto mids_t = grid.t_mids();
    const auto mids_s = grid.s_mids();
    const Eigen::MatrixXd v = smooth2d(cloud, bw, EvalGrid2(mids_t, mids_s), policy);

    auto middle = [](double coord) { return coord > 0.25 && coord < 0.75; };
    double acc = 0.0;
    std::size_t cells = 0;
    for (int pass = 0; pass < 2 && cells == 0; ++pass) {
        acc = 0.0;
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j) {
                if (pass == 0 && !(middle(grid.t_mid(i)) && middle(grid.s_mid(j)))) continue;
                if (is_missing(v(i, j))) throw DegenerateWindow(grid.t_mid(i), grid.s_mid(j));
                acc += v(i, j) - A(i, i) * B(j, j);
                ++cells;
            }
    }
    return std::max(acc / static_cast<double>(cells), 0.0);
}

SeparableModel normalize(SeparableModel model) {
    const double tr = model.A.trace();
    if (!(tr > 0.0)) throw NonPositiveTrace(tr);
    model.normalization.convention = "trace_one_temporal";
    model.normalization.trace_before = tr;
    if (std::abs(tr) < 1e-8)
        model.normalization.warning = "temporal kernel trace below 1e-8; the separable "
                                      "scale constant is ill-determined";
    model.A /= tr;
    model.B *= tr;
    return model;
}

SeparableModel fit_separable(const SparseDataset& ds, const Grid2& grid, const FitOptions& opts) {
    ds.validate();
    if (opts.steps < 1) throw DataError("steps must be at least 1");

    FitBandwidths bw;
    if (opts.bandwidths) {
        bw = *opts.bandwidths;
    } else {
        CvSpec cv = opts.cv;
        if (cv.candidates.empty()) cv.candidates = default_candidate_ladder(grid);
        if (cv.seed == 0) cv.seed = opts.seed;
        bw.mean = cv_mean_bandwidth(ds, grid, cv);
        bw.diagonal = bw.mean;
        auto [bwa, bwb] = cv_covariance_bandwidths(ds, grid, cv);
        bw.temporal = bwa;
        bw.spatial = bwb;
    }

    const auto samples = grid_dataset(ds, grid);
    Eigen::MatrixXd mean = estimate_mean(samples, grid, bw.mean, opts.fallback);
    const auto centered = center(samples, mean);

    const auto mids_t = grid.t_mids();
    const auto mids_s = grid.s_mids();

    Eigen::MatrixXd b_cur = opts.init_scale * Eigen::MatrixXd::Ones(grid.d2, grid.d2);
    Eigen::MatrixXd a_cur;
    for (int step = 0; step < opts.steps; ++step) {
        a_cur = smooth_marginal(pool_temporal(centered, b_cur), mids_t, bw.temporal,
                                opts.fallback);
        b_cur = smooth_marginal(pool_spatial(centered, a_cur), mids_s, bw.spatial, opts.fallback);
    }

    if (opts.psd_project) {
        a_cur = psd_clipped(a_cur);
        b_cur = psd_clipped(b_cur);
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

std::string model_to_json_string(const SeparableModel& model, const std::string& extra_json) {
    json doc;
    doc["grid"] = {{"d1", model.grid.d1}, {"d2", model.grid.d2}};
    doc["mean"] = matrix_to_json(model.mean);
    doc["A"] = matrix_to_json(model.A);
    doc["B"] = matrix_to_json(model.B);
    doc["sigma2"] = model.sigma2;
    doc["normalization"] = {{"convention", model.normalization.convention},
                            {"trace_before", model.normalization.trace_before}};
    if (!model.normalization.warning.empty())
        doc["normalization"]["warning"] = model.normalization.warning;
    doc["bandwidths"] = {{"mean", bw_to_json(model.bandwidths.mean)},
                         {"temporal", bw_to_json(model.bandwidths.temporal)},
                         {"spatial", bw_to_json(model.bandwidths.spatial)},
                         {"diagonal", bw_to_json(model.bandwidths.diagonal)}};
    doc["meta"] = {{"n_surfaces", model.meta.n_surfaces},
                   {"n_obs", model.meta.n_obs},
                   {"seed", model.meta.seed}};
    if (!extra_json.empty()) {
        const json extra = json::parse(extra_json);
        for (const auto& [key, value] : extra.items()) doc[key] = value;
    }
    return doc.dump(2);
}

SeparableModel model_from_json_string(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("model JSON parse error: ") + e.what());
    }
    SeparableModel model;
    try {
        model.grid = Grid2(doc.at("grid").at("d1").get<int>(), doc.at("grid").at("d2").get<int>());
        model.mean = matrix_from_json(doc.at("mean"), model.grid.d1, model.grid.d2);
        model.A = matrix_from_json(doc.at("A"), model.grid.d1, model.grid.d1);
        model.B = matrix_from_json(doc.at("B"), model.grid.d2, model.grid.d2);
        model.sigma2 = doc.at("sigma2").get<double>();
        const auto& norm = doc.at("normalization");
        model.normalization.convention = norm.at("convention").get<std::string>();
        model.normalization.trace_before = norm.at("trace_before").get<double>();
        if (norm.contains("warning"))
            model.normalization.warning = norm.at("warning").get<std::string>();
        const auto& bws = doc.at("bandwidths");
        model.bandwidths.mean = bw_from_json(bws.at("mean"));
        model.bandwidths.temporal = bw_from_json(bws.at("temporal"));
        model.bandwidths.spatial = bw_from_json(bws.at("spatial"));
        model.bandwidths.diagonal = bw_from_json(bws.at("diagonal"));
        const auto& meta = doc.at("meta");
        model.meta.n_surfaces = meta.at("n_surfaces").get<int>();
        model.meta.n_obs = meta.at("n_obs").get<std::uint64_t>();
        model.meta.seed = meta.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw DataError(std::string("model JSON missing or malformed field: ") + e.what());
    }
    return model;
}

void write_model_json(const std::string& path, const SeparableModel& model,
                      const std::string& extra_json) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << model_to_json_string(model, extra_json) << '\n';
}

SeparableModel read_model_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return model_from_json_string(ss.str());
}

} // namespace sepsurf
