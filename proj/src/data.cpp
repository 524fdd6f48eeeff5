#include "sepsurf/data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sepsurf {

void SparseDataset::validate() const {
    if (n_surfaces < 1) throw DataError("dataset must declare at least one surface");
    std::vector<int> counts(static_cast<std::size_t>(n_surfaces), 0);
    for (const auto& obs : observations) {
        if (obs.surface_id < 0 || obs.surface_id >= n_surfaces)
            throw DataError("observation has surface_id " + std::to_string(obs.surface_id) +
                            " outside [0, " + std::to_string(n_surfaces) + ")");
        if (!(obs.t >= 0.0 && obs.t <= 1.0 && obs.s >= 0.0 && obs.s <= 1.0))
            throw DataError("observation coordinates must lie in [0,1]^2");
        ++counts[static_cast<std::size_t>(obs.surface_id)];
    }
    bool has_pairable = false;
    for (int c : counts)
        if (c >= 2) has_pairable = true;
    if (!has_pairable)
        throw DataError("no surface carries two or more observations; "
                        "off-diagonal raw covariances would be empty");
}

std::vector<MaskedGridSample> grid_dataset(const SparseDataset& ds, const Grid2& grid) {
    std::vector<MaskedGridSample> out(static_cast<std::size_t>(ds.n_surfaces));
    std::vector<Eigen::MatrixXd> counts(static_cast<std::size_t>(ds.n_surfaces));
    for (auto& sample : out) {
        sample.values = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
        sample.mask = Eigen::MatrixXd::Zero(grid.d1, grid.d2);
    }
    for (auto& c : counts) c = Eigen::MatrixXd::Zero(grid.d1, grid.d2);

    for (const auto& obs : ds.observations) {
        const int i = grid.t_cell(obs.t);
        const int j = grid.s_cell(obs.s);
        auto& sample = out[static_cast<std::size_t>(obs.surface_id)];
        sample.values(i, j) += obs.y;
        counts[static_cast<std::size_t>(obs.surface_id)](i, j) += 1.0;
    }
    for (std::size_t n = 0; n < out.size(); ++n) {
        for (int i = 0; i < grid.d1; ++i)
            for (int j = 0; j < grid.d2; ++j) {
                const double c = counts[n](i, j);
                if (c > 0.0) {
                    out[n].values(i, j) /= c;
                    out[n].mask(i, j) = 1.0;
                }
            }
    }
    return out;
}

std::vector<MaskedGridSample> center(const std::vector<MaskedGridSample>& samples,
                                     const Eigen::MatrixXd& mean_grid) {
    std::vector<MaskedGridSample> out;
    out.reserve(samples.size());
    for (const auto& sample : samples) {
        if (sample.values.rows() != mean_grid.rows() || sample.values.cols() != mean_grid.cols())
            throw DataError("mean grid dimensions do not match the samples");
        MaskedGridSample c;
        c.mask = sample.mask;
        c.values = sample.values - mean_grid.cwiseProduct(sample.mask);
        out.push_back(std::move(c));
    }
    return out;
}

namespace {

double parse_double(const std::string& field, std::size_t line_no) {
    double v = 0.0;
    const char* begin = field.data();
    const char* end = begin + field.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc() || res.ptr != end)
        throw DataError("line " + std::to_string(line_no) + ": cannot parse number '" + field +
                        "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

SparseDataset read_dataset_csv(std::istream& in, bool validate) {
    SparseDataset ds;
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset file");
    {
        const auto header = split_csv_line(line);
        if (header.size() != 4 || header[0] != "surface_id" || header[1] != "t" ||
            header[2] != "s" || header[3] != "y")
            throw DataError("expected header 'surface_id,t,s,y'");
    }
    std::size_t line_no = 1;
    int max_id = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw DataError("line " + std::to_string(line_no) + ": expected 4 fields");
        SparseObservation obs;
        obs.surface_id = static_cast<int>(parse_double(fields[0], line_no));
        obs.t = parse_double(fields[1], line_no);
        obs.s = parse_double(fields[2], line_no);
        obs.y = parse_double(fields[3], line_no);
        max_id = std::max(max_id, obs.surface_id);
        ds.observations.push_back(obs);
    }
    ds.n_surfaces = max_id + 1;
    if (validate) ds.validate();
    return ds;
}

SparseDataset read_dataset_csv(const std::string& path, bool validate) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return read_dataset_csv(in, validate);
}

void write_dataset_csv(std::ostream& out, const SparseDataset& ds) {
    out << "surface_id,t,s,y\n";
    char buf[128];
    for (const auto& obs : ds.observations) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", obs.surface_id, obs.t, obs.s,
                      obs.y);
        out << buf;
    }
}

void write_dataset_csv(const std::string& path, const SparseDataset& ds) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    write_dataset_csv(out, ds);
}

} // namespace sepsurf
