// Command-line front end: simulate / estimate / predict / evaluate /
// benchmark / ingest-options, with reproducible JSON configs.
#include "sepsurf/bandwidth.hpp"
#include "sepsurf/baselines.hpp"
#include "sepsurf/black_scholes.hpp"
#include "sepsurf/data.hpp"
#include "sepsurf/errors.hpp"
#include "sepsurf/parallel.hpp"
#include "sepsurf/prediction.hpp"
#include "sepsurf/separable.hpp"
#include "sepsurf/simstudy.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

using json = nlohmann::json;
using namespace sepsurf;

namespace {

// JSON config files mirror the long option names; command-line flags win
// because CLI11 applies config values only to options not seen on argv.
class JsonConfigReader : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return "{}\n";
    }
    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json doc;
        try {
            input >> doc;
        } catch (const json::parse_error& e) {
            throw CLI::FileError(std::string("config parse error: ") + e.what());
        }
        std::vector<CLI::ConfigItem> items;
        if (!doc.is_object()) throw CLI::FileError("config must be a JSON object");
        for (const auto& [key, value] : doc.items()) {
            CLI::ConfigItem item;
            item.name = key;
            auto scalar = [](const json& v) {
                return v.is_string() ? v.get<std::string>() : v.dump();
            };
            if (value.is_array())
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            else
                item.inputs.push_back(scalar(value));
            items.push_back(std::move(item));
        }
        return items;
    }
};

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << text;
    if (text.empty() || text.back() != '\n') out << '\n';
}

void write_sidecar(const std::string& out_path, const json& config) {
    write_text(out_path + ".config.json", config.dump(2));
}

double resolve_fraction(double p) {
    return p > 1.0 ? p / 100.0 : p; // "--p 2,5,10" means percentages
}

struct StageTimer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    void report(const std::string& stage) {
        const auto now = std::chrono::steady_clock::now();
        std::cerr << "stage=" << stage
                  << " elapsed=" << std::chrono::duration<double>(now - start).count() << "s\n";
        start = now;
    }
};

json matrix_flat(const Eigen::MatrixXd& m) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
    return arr;
}

json truth_to_json(const ScenarioCovariance& cov, double sigma2) {
    json doc;
    doc["sigma2"] = sigma2;
    if (cov.dense) {
        doc["kind"] = "dense";
        doc["shape"] = {cov.dense->n1(), cov.dense->n2(), cov.dense->n3(), cov.dense->n4()};
        doc["C"] = cov.dense->flat();
    } else {
        doc["kind"] = "kronecker_sum";
        json terms = json::array();
        for (const auto& [a, b] : cov.terms) {
            terms.push_back(json{{"d1", a.rows()},
                                 {"d2", b.rows()},
                                 {"A", matrix_flat(a)},
                                 {"B", matrix_flat(b)}});
        }
        doc["terms"] = std::move(terms);
    }
    return doc;
}

FitBandwidths bandwidths_from_list(const std::vector<double>& hs) {
    FitBandwidths bw;
    if (hs.size() == 1) {
        bw.mean = bw.temporal = bw.spatial = bw.diagonal = Bandwidths2(hs[0], hs[0]);
    } else if (hs.size() == 2) {
        bw.mean = bw.diagonal = Bandwidths2(hs[0], hs[0]);
        bw.temporal = bw.spatial = Bandwidths2(hs[1], hs[1]);
    } else if (hs.size() == 4) {
        bw.mean = Bandwidths2(hs[0], hs[0]);
        bw.temporal = Bandwidths2(hs[1], hs[1]);
        bw.spatial = Bandwidths2(hs[2], hs[2]);
        bw.diagonal = Bandwidths2(hs[3], hs[3]);
    } else {
        throw DataError("--bandwidth expects 1, 2 or 4 comma-separated values "
                        "(all | mean,covariance | mean,temporal,spatial,diagonal)");
    }
    return bw;
}

json bandwidths_to_json(const FitBandwidths& bw) {
    auto one = [](const Bandwidths2& b) { return json{{"h1", b.h1}, {"h2", b.h2}}; };
    return json{{"mean", one(bw.mean)},
                {"temporal", one(bw.temporal)},
                {"spatial", one(bw.spatial)},
                {"diagonal", one(bw.diagonal)}};
}

struct SimulateArgs {
    std::string scenario = "brownian";
    int grid = 20;
    int grid2 = 0;
    int n = 100;
    double p = 0.1;
    double noise = -1.0;
    std::uint64_t seed = 1;
    std::string out = "data.csv";
    std::string truth_out;
};

struct EstimateArgs {
    std::string input;
    int grid = 20;
    int grid2 = 0;
    std::string method = "separable";
    int steps = 2;
    std::vector<double> bandwidth;
    int folds = 10;
    std::uint64_t seed = 1;
    bool psd_project = false;
    std::string out = "model.json";
};

struct PredictArgs {
    std::string model;
    std::string obs;
    int surface = -1;
    double alpha = 0.05;
    int n_draws = 10000;
    double ridge = 1e-8;
    std::uint64_t seed = 1;
    std::string out = "prediction.json";
};

struct EvaluateArgs {
    std::string input;
    int grid = 20;
    int grid2 = 0;
    std::string pattern = "chain";
    int folds = 10;
    std::vector<std::string> methods = {"presmooth", "separable"};
    std::vector<double> bandwidth;
    double presmooth_bw = 0.15;
    double ridge = 1e-8;
    std::string truth;
    std::uint64_t seed = 1;
    std::string out = "report.csv";
};

struct BenchmarkArgs {
    std::string scenario = "fourier";
    int grid = 10;
    int grid2 = 0;
    std::vector<double> ps = {10.0};
    int n = 100;
    int replicates = 5;
    std::vector<std::string> methods = {"onestep", "separable", "bsa"};
    std::vector<double> bandwidth;
    bool timing = false;
    std::uint64_t seed = 1;
    std::string out = "benchmark.csv";
};

struct IngestArgs {
    std::string input;
    std::string out = "surfaces.csv";
    bool no_log_vol = false;
    double tau_min = 14.0;
    double tau_max = 365.0;
    double logm_min = -0.5;
    double logm_max = 0.5;
};

Grid2 make_grid(int d1, int d2) { return Grid2(d1, d2 > 0 ? d2 : d1); }

int run_simulate(const SimulateArgs& args) {
    const Grid2 grid = make_grid(args.grid, args.grid2);
    const Scenario sc{scenario_kind_from_string(args.scenario), grid};
    const ScenarioCovariance cov = scenario_covariance(sc);
    const double p = resolve_fraction(args.p);
    const SimulatedBatch batch = simulate_batch(cov, grid, args.n, args.noise, p, args.seed);
    write_dataset_csv(args.out, batch.sparse);

    const json config{{"command", "simulate"},
                      {"scenario", args.scenario},
                      {"grid", grid.d1},
                      {"grid2", grid.d2},
                      {"n", args.n},
                      {"p", p},
                      {"noise", batch.noise_sigma2},
                      {"seed", args.seed},
                      {"out", args.out}};
    write_sidecar(args.out, json{{"config", config}});
    if (!args.truth_out.empty()) {
        json truth = truth_to_json(cov, batch.noise_sigma2);
        truth["config"] = config;
        write_text(args.truth_out, truth.dump(2));
    }
    std::cout << "wrote " << batch.sparse.observations.size() << " observations for " << args.n
              << " surfaces to " << args.out << "\n";
    return 0;
}

// Noise level for the 4D baseline: diagonal smoother against the estimated
// tensor's diagonal, averaged over the middle region.
double fourd_noise(const std::vector<MaskedGridSample>& centered, const Grid2& grid,
                   const FullCovariance& c4, const Bandwidths2& bw) {
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
    const Eigen::MatrixXd v = smooth2d(cloud, bw, EvalGrid2(grid.t_mids(), grid.s_mids()));
    double acc = 0.0;
    std::size_t cells = 0;
    for (int pass = 0; pass < 2 && cells == 0; ++pass)
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j) {
                const bool mid = grid.t_mid(i) > 0.25 && grid.t_mid(i) < 0.75 &&
                                 grid.s_mid(j) > 0.25 && grid.s_mid(j) < 0.75;
                if (pass == 0 && !mid) continue;
                if (is_missing(v(i, j))) throw DegenerateWindow(grid.t_mid(i), grid.s_mid(j));
                acc += v(i, j) - c4(i, j, i, j);
                ++cells;
            }
    return std::max(acc / static_cast<double>(cells), 0.0);
}

int run_estimate(const EstimateArgs& args) {
    const Grid2 grid = make_grid(args.grid, args.grid2);
    StageTimer timer;
    const SparseDataset ds = read_dataset_csv(args.input);
    timer.report("load");

    json config{{"command", "estimate"},
                {"input", args.input},
                {"grid", grid.d1},
                {"grid2", grid.d2},
                {"method", args.method},
                {"steps", args.steps},
                {"folds", args.folds},
                {"seed", args.seed},
                {"psd-project", args.psd_project},
                {"out", args.out}};
    if (!args.bandwidth.empty()) config["bandwidth"] = args.bandwidth;

    FitOptions opts;
    opts.steps = args.steps;
    opts.seed = args.seed;
    opts.psd_project = args.psd_project;
    opts.cv.folds = args.folds;
    opts.cv.seed = args.seed;

    json cv_report;
    if (!args.bandwidth.empty()) {
        opts.bandwidths = bandwidths_from_list(args.bandwidth);
    } else {
        CvSpec cv = opts.cv;
        cv.candidates = default_candidate_ladder(grid);
        CvReport mean_rep, a_rep, b_rep;
        FitBandwidths bw;
        bw.mean = cv_mean_bandwidth(ds, grid, cv, &mean_rep);
        bw.diagonal = bw.mean;
        auto [bwa, bwb] = cv_covariance_bandwidths(ds, grid, cv, &a_rep, &b_rep, &bw.mean);
        bw.temporal = bwa;
        bw.spatial = bwb;
        opts.bandwidths = bw;
        auto rep = [](const CvReport& r) {
            return json{{"candidates", r.candidates},
                        {"scores", r.scores},
                        {"chosen", r.chosen},
                        {"fold_seed", r.fold_seed}};
        };
        cv_report =
            json{{"mean", rep(mean_rep)}, {"temporal", rep(a_rep)}, {"spatial", rep(b_rep)}};
        timer.report("cv");
    }

    if (args.method == "separable") {
        const SeparableModel model = fit_separable(ds, grid, opts);
        timer.report("fit");
        json extra{{"kind", "separable"}, {"config", config}};
        if (!cv_report.is_null()) extra["cv_report"] = cv_report;
        if (!model.normalization.warning.empty())
            std::cerr << "warning: " << model.normalization.warning << "\n";
        write_model_json(args.out, model, extra.dump());
    } else if (args.method == "4d") {
        if (grid.cells() >= 400)
            std::cerr << "warning: 4D smoothing on a " << grid.d1 << "x" << grid.d2
                      << " grid costs O(d^8); expect long runtimes\n";
        const FitBandwidths& bw = *opts.bandwidths;
        const auto samples = grid_dataset(ds, grid);
        const Eigen::MatrixXd mean = estimate_mean(samples, grid, bw.mean);
        const auto centered = center(samples, mean);
        const FullCovariance c4 =
            smooth4d_covariance(centered, grid, transfer_to_4d(bw.temporal, bw.spatial));
        timer.report("fit");
        json doc;
        doc["kind"] = "fourd";
        doc["grid"] = {{"d1", grid.d1}, {"d2", grid.d2}};
        doc["mean"] = matrix_flat(mean);
        doc["C"] = c4.flat();
        doc["sigma2"] = fourd_noise(centered, grid, c4, bw.diagonal);
        doc["bandwidths"] = bandwidths_to_json(bw);
        doc["meta"] = {{"n_surfaces", ds.n_surfaces},
                       {"n_obs", ds.observations.size()},
                       {"seed", args.seed}};
        doc["config"] = config;
        if (!cv_report.is_null()) doc["cv_report"] = cv_report;
        write_text(args.out, doc.dump(2));
    } else {
        throw DataError("--method must be 'separable' or '4d'");
    }
    std::cout << "wrote model to " << args.out << "\n";
    return 0;
}

int run_predict(const PredictArgs& args) {
    std::ifstream in(args.model);
    if (!in) throw DataError("cannot open '" + args.model + "'");
    json model_doc;
    try {
        in >> model_doc;
    } catch (const json::parse_error& e) {
        throw DataError(std::string("model JSON parse error: ") + e.what());
    }
    const std::string kind = model_doc.value("kind", std::string("separable"));

    const SparseDataset raw = read_dataset_csv(args.obs, /*validate=*/false);
    std::set<int> ids;
    for (const auto& o : raw.observations) ids.insert(o.surface_id);
    int target = args.surface;
    if (target < 0) {
        if (ids.size() != 1)
            throw DataError("observation file contains several surfaces; pass --surface");
        target = *ids.begin();
    }
    NewObservations obs;
    for (const auto& o : raw.observations) {
        if (o.surface_id != target) continue;
        obs.t.push_back(o.t);
        obs.s.push_back(o.s);
        obs.y.push_back(o.y);
    }

    const json config{{"command", "predict"}, {"model", args.model},   {"obs", args.obs},
                      {"surface", target},    {"alpha", args.alpha},   {"n-draws", args.n_draws},
                      {"ridge", args.ridge},  {"seed", args.seed},     {"out", args.out}};

    BlupResult result;
    bool has_simultaneous = false;
    if (kind == "separable") {
        const SeparableModel model = model_from_json_string(model_doc.dump());
        result = blup(model, obs, args.ridge);
        pointwise_band(result, args.alpha);
        simultaneous_band(model, obs, result, args.alpha, args.n_draws, args.seed);
        has_simultaneous = true;
    } else if (kind == "fourd") {
        const Grid2 grid(model_doc.at("grid").at("d1").get<int>(),
                         model_doc.at("grid").at("d2").get<int>());
        Eigen::MatrixXd mean(grid.d1, grid.d2);
        {
            const auto& arr = model_doc.at("mean");
            std::size_t k = 0;
            for (int i = 0; i < grid.d1; ++i)
                for (int j = 0; j < grid.d2; ++j) mean(i, j) = arr.at(k++).get<double>();
        }
        FullCovariance c4(grid.d1, grid.d2, grid.d1, grid.d2);
        {
            const auto& arr = model_doc.at("C");
            if (arr.size() != c4.flat().size())
                throw DataError("covariance tensor size mismatch");
            for (std::size_t k = 0; k < c4.flat().size(); ++k)
                c4.flat()[k] = arr.at(k).get<double>();
        }
        const double sigma2 = model_doc.at("sigma2").get<double>();
        result = blup_with_covariance(
            grid, mean, [&c4](int i, int j, int i2, int j2) { return c4(i, j, i2, j2); }, sigma2,
            obs, args.ridge);
        pointwise_band(result, args.alpha);
        // The simultaneous band is built from the separable model; the 4D
        // baseline emits the pointwise band only.
        result.simultaneous_halfwidth = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
    } else {
        throw DataError("unknown model kind '" + kind + "'");
    }

    json extra{{"config", config}};
    if (has_simultaneous)
        extra["simultaneous_envelopes_pointwise"] = result.z_quantile >= result.u_quantile;
    write_text(args.out, blup_to_json_string(result, extra.dump()));
    std::cout << "wrote prediction to " << args.out << " (u_quantile=" << result.u_quantile
              << ", z_quantile=" << result.z_quantile << ")\n";
    return 0;
}

int run_evaluate(const EvaluateArgs& args) {
    const Grid2 grid = make_grid(args.grid, args.grid2);
    const SparseDataset ds = read_dataset_csv(args.input);
    HoldoutPattern pattern;
    pattern.kind = holdout_kind_from_string(args.pattern);
    HoldoutOptions opts;
    opts.folds = args.folds;
    opts.seed = args.seed;
    opts.ridge = args.ridge;
    opts.presmooth_bw = Bandwidths2(args.presmooth_bw, args.presmooth_bw);

    FitOptions fit;
    fit.seed = args.seed;
    fit.cv.folds = args.folds;
    fit.cv.seed = args.seed;
    if (!args.bandwidth.empty()) fit.bandwidths = bandwidths_from_list(args.bandwidth);

    std::vector<EvalMethod> methods;
    for (const auto& name : args.methods) {
        if (name == "presmooth") {
            methods.push_back(EvalMethod::presmooth_benchmark());
        } else if (name == "separable") {
            methods.push_back(EvalMethod::separable_fit(fit));
        } else if (name == "onestep") {
            FitOptions one = fit;
            one.steps = 1;
            EvalMethod m = EvalMethod::separable_fit(one);
            m.name = "onestep";
            methods.push_back(std::move(m));
        } else if (name == "4d") {
            methods.push_back(EvalMethod::fourd_fit(fit));
        } else if (name == "oracle") {
            if (args.truth.empty()) throw DataError("method 'oracle' requires --truth");
            std::ifstream tin(args.truth);
            if (!tin) throw DataError("cannot open '" + args.truth + "'");
            json truth;
            tin >> truth;
            if (truth.value("kind", std::string()) != "kronecker_sum" ||
                truth.at("terms").size() != 1)
                throw DataError("oracle evaluation needs a separable truth file");
            const auto& term = truth.at("terms").at(0);
            const int d1 = term.at("d1").get<int>();
            const int d2 = term.at("d2").get<int>();
            SeparableModel oracle;
            oracle.grid = Grid2(d1, d2);
            oracle.mean = Eigen::MatrixXd::Zero(d1, d2);
            oracle.A = Eigen::MatrixXd(d1, d1);
            oracle.B = Eigen::MatrixXd(d2, d2);
            for (int i = 0; i < d1; ++i)
                for (int j = 0; j < d1; ++j)
                    oracle.A(i, j) =
                        term.at("A").at(static_cast<std::size_t>(i * d1 + j)).get<double>();
            for (int i = 0; i < d2; ++i)
                for (int j = 0; j < d2; ++j)
                    oracle.B(i, j) =
                        term.at("B").at(static_cast<std::size_t>(i * d2 + j)).get<double>();
            oracle.sigma2 = truth.at("sigma2").get<double>();
            methods.push_back(EvalMethod::oracle_model(std::move(oracle)));
        } else {
            throw DataError("unknown method '" + name + "'");
        }
    }

    const HoldoutReport report = holdout_evaluate(ds, grid, pattern, methods, opts);

    std::ofstream out(args.out);
    if (!out) throw DataError("cannot open '" + args.out + "' for writing");
    out << "pattern,fold,surface_id,task,method,rmse_ratio\n";
    char buf[160];
    for (const auto& row : report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%s,%.17g\n", args.pattern.c_str(), row.fold,
                      row.surface_id, row.task, row.method.c_str(), row.rmse_ratio);
        out << buf;
    }

    json config{{"command", "evaluate"},
                {"input", args.input},
                {"grid", grid.d1},
                {"grid2", grid.d2},
                {"pattern", args.pattern},
                {"folds", args.folds},
                {"methods", args.methods},
                {"presmooth-bw", args.presmooth_bw},
                {"ridge", args.ridge},
                {"seed", args.seed},
                {"out", args.out}};
    if (!args.bandwidth.empty()) config["bandwidth"] = args.bandwidth;
    if (!args.truth.empty()) config["truth"] = args.truth;
    write_sidecar(args.out, json{{"config", config},
                                 {"medians", report.median_ratio},
                                 {"skipped_surfaces", report.skipped_surfaces},
                                 {"skipped_tasks", report.skipped_tasks}});

    for (const auto& [name, med] : report.median_ratio)
        std::cout << "median rmse ratio [" << name << "] = " << med << "\n";
    std::cout << "skipped surfaces: " << report.skipped_surfaces << "\n";
    return 0;
}

int run_benchmark(const BenchmarkArgs& args) {
    const Grid2 grid = make_grid(args.grid, args.grid2);
    const Scenario sc{scenario_kind_from_string(args.scenario), grid};
    std::optional<FitBandwidths> bw;
    if (!args.bandwidth.empty()) bw = bandwidths_from_list(args.bandwidth);

    json config{{"command", "benchmark"},
                {"scenario", args.scenario},
                {"grid", grid.d1},
                {"grid2", grid.d2},
                {"p", args.ps},
                {"n", args.n},
                {"replicates", args.replicates},
                {"methods", args.methods},
                {"timing", args.timing},
                {"seed", args.seed},
                {"out", args.out}};
    if (!args.bandwidth.empty()) config["bandwidth"] = args.bandwidth;

    std::ofstream out(args.out);
    if (!out) throw DataError("cannot open '" + args.out + "' for writing");
    char buf[160];
    if (args.timing) {
        const FitBandwidths fixed = bw ? *bw : bandwidths_from_list({0.25});
        out << "scenario,p,n,method,replicate,seconds\n";
        for (double p_raw : args.ps) {
            const auto rows = runtime_benchmark(sc, resolve_fraction(p_raw), args.n,
                                                args.replicates, fixed, args.seed);
            for (const auto& row : rows) {
                std::snprintf(buf, sizeof(buf), "%s,%.17g,%d,%s,%d,%.17g\n", row.scenario.c_str(),
                              row.p, row.n, row.method.c_str(), row.replicate, row.seconds);
                out << buf;
            }
        }
    } else {
        std::vector<double> ps;
        for (double p_raw : args.ps) ps.push_back(resolve_fraction(p_raw));
        const auto rows =
            error_benchmark(sc, ps, args.n, args.replicates, args.methods, args.seed, bw);
        out << "scenario,p,n,method,replicate,rel_error\n";
        for (const auto& row : rows) {
            std::snprintf(buf, sizeof(buf), "%s,%.17g,%d,%s,%d,%.17g\n", row.scenario.c_str(),
                          row.p, row.n, row.method.c_str(), row.replicate, row.rel_error);
            out << buf;
        }
    }
    write_sidecar(args.out, json{{"config", config}});
    std::cout << "wrote benchmark to " << args.out << "\n";
    return 0;
}

int run_ingest(const IngestArgs& args) {
    IngestScaling scaling;
    scaling.tau_min_days = args.tau_min;
    scaling.tau_max_days = args.tau_max;
    scaling.logm_min = args.logm_min;
    scaling.logm_max = args.logm_max;
    scaling.log_vol = !args.no_log_vol;
    const auto quotes = read_option_csv(args.input);
    const IngestResult result = ingest_option_chains(quotes, scaling);
    write_dataset_csv(args.out, result.data);

    const json config{{"command", "ingest-options"}, {"input", args.input},
                      {"out", args.out},             {"no-log-vol", args.no_log_vol},
                      {"tau-min", args.tau_min},     {"tau-max", args.tau_max},
                      {"logm-min", args.logm_min},   {"logm-max", args.logm_max}};
    write_sidecar(args.out, json{{"config", config},
                                 {"scaling",
                                  {{"tau_min_days", scaling.tau_min_days},
                                   {"tau_max_days", scaling.tau_max_days},
                                   {"logm_min", scaling.logm_min},
                                   {"logm_max", scaling.logm_max},
                                   {"log_vol", scaling.log_vol}}},
                                 {"skipped_domain", result.skipped_domain},
                                 {"skipped_bracket", result.skipped_bracket},
                                 {"n_observations", result.data.observations.size()}});
    std::cout << "wrote " << result.data.observations.size() << " observations ("
              << result.skipped_domain << " outside domain, " << result.skipped_bracket
              << " outside price bracket)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Separable covariance estimation and prediction for sparsely "
                 "observed random surfaces"};
    app.require_subcommand(1);

    int threads = 0;
    app.add_option("--threads", threads,
                   "worker threads (0 = all cores; env SEPSURF_THREADS as fallback)");

    auto add_config = [](CLI::App* cmd) {
        cmd->set_config("--config", "", "JSON config mirroring the flags; flags win");
        cmd->config_formatter(std::make_shared<JsonConfigReader>());
        cmd->allow_config_extras(true);
    };

    SimulateArgs sim;
    CLI::App* c_sim = app.add_subcommand("simulate", "draw surfaces from a scenario covariance");
    c_sim->add_option("--scenario", sim.scenario,
                      "fourier | brownian | gneiting | fourier_legendre")
        ->check(CLI::IsMember({"fourier", "brownian", "gneiting", "fourier_legendre"}));
    c_sim->add_option("--grid", sim.grid, "grid size d1");
    c_sim->add_option("--grid2", sim.grid2, "grid size d2 (default: d1)");
    c_sim->add_option("--n", sim.n, "number of surfaces");
    c_sim->add_option("--p", sim.p, "observed fraction (values > 1 are percent)");
    c_sim->add_option("--noise", sim.noise, "noise variance (default: 1/(d1*d2))");
    c_sim->add_option("--seed", sim.seed, "RNG seed");
    c_sim->add_option("--out", sim.out, "output dataset CSV");
    c_sim->add_option("--truth", sim.truth_out, "also write the truth JSON here");
    add_config(c_sim);

    EstimateArgs est;
    CLI::App* c_est = app.add_subcommand("estimate", "fit the separable model (or 4D baseline)");
    c_est->add_option("--input", est.input, "dataset CSV")->required();
    c_est->add_option("--grid", est.grid, "grid size d1");
    c_est->add_option("--grid2", est.grid2, "grid size d2 (default: d1)");
    c_est->add_option("--method", est.method, "separable | 4d")
        ->check(CLI::IsMember({"separable", "4d"}));
    c_est->add_option("--steps", est.steps, "smoothing updates per component (1 = one-step)");
    c_est->add_option("--bandwidth", est.bandwidth,
                      "fixed bandwidths (1, 2 or 4 values); omit for cross-validation")
        ->delimiter(',');
    c_est->add_option("--folds", est.folds, "cross-validation folds");
    c_est->add_option("--seed", est.seed, "RNG seed");
    c_est->add_flag("--psd-project", est.psd_project, "clip kernel eigenvalues at zero");
    c_est->add_option("--out", est.out, "output model JSON");
    add_config(c_est);

    PredictArgs pre;
    CLI::App* c_pre = app.add_subcommand("predict", "BLUP reconstruction with confidence bands");
    c_pre->add_option("--model", pre.model, "model JSON from 'estimate'")->required();
    c_pre->add_option("--obs", pre.obs, "new observations CSV (surface_id,t,s,y)")->required();
    c_pre->add_option("--surface", pre.surface, "surface id to predict (default: the only one)");
    c_pre->add_option("--alpha", pre.alpha, "band level (default 0.05)");
    c_pre->add_option("--n-draws", pre.n_draws, "Monte Carlo draws for the simultaneous band");
    c_pre->add_option("--ridge", pre.ridge, "relative ridge added to var(Y)");
    c_pre->add_option("--seed", pre.seed, "RNG seed for the band draws");
    c_pre->add_option("--out", pre.out, "output prediction JSON");
    add_config(c_pre);

    EvaluateArgs eva;
    CLI::App* c_eva = app.add_subcommand("evaluate", "hold-out prediction comparison");
    c_eva->add_option("--input", eva.input, "dataset CSV")->required();
    c_eva->add_option("--grid", eva.grid, "grid size d1");
    c_eva->add_option("--grid2", eva.grid2, "grid size d2 (default: d1)");
    c_eva->add_option("--pattern", eva.pattern, "chain | itm | otm | short | long")
        ->check(CLI::IsMember({"chain", "itm", "otm", "short", "long"}));
    c_eva->add_option("--folds", eva.folds, "cross-validation folds");
    c_eva->add_option("--methods", eva.methods,
                      "presmooth | separable | onestep | 4d | oracle (comma separated)")
        ->delimiter(',');
    c_eva->add_option("--bandwidth", eva.bandwidth, "fixed fit bandwidths (1, 2 or 4 values)")
        ->delimiter(',');
    c_eva->add_option("--presmooth-bw", eva.presmooth_bw, "benchmark smoother bandwidth");
    c_eva->add_option("--ridge", eva.ridge, "relative ridge for the BLUP solves");
    c_eva->add_option("--truth", eva.truth, "truth JSON enabling the oracle method");
    c_eva->add_option("--seed", eva.seed, "RNG seed (fold shuffle)");
    c_eva->add_option("--out", eva.out, "output report CSV");
    add_config(c_eva);

    BenchmarkArgs ben;
    CLI::App* c_ben = app.add_subcommand("benchmark", "error or timing benchmark CSVs");
    c_ben->add_option("--scenario", ben.scenario, "scenario name")
        ->check(CLI::IsMember({"fourier", "brownian", "gneiting", "fourier_legendre"}));
    c_ben->add_option("--grid", ben.grid, "grid size d1");
    c_ben->add_option("--grid2", ben.grid2, "grid size d2 (default: d1)");
    c_ben->add_option("--p", ben.ps, "observed fractions or percentages")->delimiter(',');
    c_ben->add_option("--n", ben.n, "surfaces per replicate");
    c_ben->add_option("--replicates", ben.replicates, "Monte Carlo replicates");
    c_ben->add_option("--methods", ben.methods, "onestep | separable | bsa | fourd")
        ->delimiter(',');
    c_ben->add_option("--bandwidth", ben.bandwidth,
                      "fixed bandwidths (omit for per-replicate cross-validation)")
        ->delimiter(',');
    c_ben->add_flag("--timing", ben.timing, "measure wall times instead of errors");
    c_ben->add_option("--seed", ben.seed, "RNG seed");
    c_ben->add_option("--out", ben.out, "output CSV");
    add_config(c_ben);

    IngestArgs ing;
    CLI::App* c_ing = app.add_subcommand("ingest-options",
                                         "convert option chains to implied-volatility surfaces");
    c_ing->add_option("--input", ing.input,
                      "option CSV (surface_id,spot,strike,tau_days,rate,price)")
        ->required();
    c_ing->add_option("--out", ing.out, "output dataset CSV");
    c_ing->add_flag("--no-log-vol", ing.no_log_vol, "store implied vols without the log");
    c_ing->add_option("--tau-min", ing.tau_min, "minimum time to expiration in days");
    c_ing->add_option("--tau-max", ing.tau_max, "maximum time to expiration in days");
    c_ing->add_option("--logm-min", ing.logm_min, "minimum log-moneyness");
    c_ing->add_option("--logm-max", ing.logm_max, "maximum log-moneyness");
    add_config(c_ing);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (threads > 0) set_threads(threads);

    try {
        if (c_sim->parsed()) return run_simulate(sim);
        if (c_est->parsed()) return run_estimate(est);
        if (c_pre->parsed()) return run_predict(pre);
        if (c_eva->parsed()) return run_evaluate(eva);
        if (c_ben->parsed()) return run_benchmark(ben);
        if (c_ing->parsed()) return run_ingest(ing);
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const InsufficientPairs& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const EmptySurface& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const PriceOutOfBracket& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const SingularSystem& e) {
        std::cerr << "numerical failure: " << e.what() << " (hint: increase --ridge)\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
