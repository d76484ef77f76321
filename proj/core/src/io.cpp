#include "bridgekit/io.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bridgekit::io {

namespace {

using Idx = Eigen::Index;
using json = nlohmann::json;

std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f) throw ContractError("cannot write " + path.string());
    return f;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) throw ContractError("cannot read " + path.string());
    return f;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream s(line);
    while (std::getline(s, cell, ',')) {
        const auto a = cell.find_first_not_of(" \t\r");
        const auto b = cell.find_last_not_of(" \t\r");
        out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
    }
    return out;
}

bool parse_number(const std::string& s, double& v) {
    if (s.empty()) return false;
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

json read_json(const std::filesystem::path& path) {
    auto f = open_in(path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ContractError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

}  // namespace

std::string format_number(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, r.ptr);
}

void write_csv(const std::filesystem::path& path, const CsvTable& t) {
    auto f = open_out(path);
    for (std::size_t i = 0; i < t.header.size(); ++i) f << (i ? "," : "") << t.header[i];
    if (!t.header.empty()) f << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << format_number(row[i]);
        f << '\n';
    }
}

CsvTable read_csv(const std::filesystem::path& path) {
    auto f = open_in(path);
    CsvTable t;
    std::string line;
    bool first = true;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split(line);
        std::vector<double> row;
        bool numeric = true;
        for (const auto& c : cells) {
            double v;
            if (!parse_number(c, v)) {
                numeric = false;
                break;
            }
            row.push_back(v);
        }
        if (!numeric) {
            if (!first) throw ContractError(path.string() + ":" + std::to_string(lineno) + ": non-numeric cell");
            t.header = cells;
        } else {
            if (!t.rows.empty() && row.size() != t.rows.front().size())
                throw ContractError(path.string() + ":" + std::to_string(lineno) + ": ragged row");
            t.rows.push_back(std::move(row));
        }
        first = false;
    }
    return t;
}

ot::DiscreteMeasure read_measure_csv(const std::filesystem::path& path) {
    const auto t = read_csv(path);
    require(!t.rows.empty() && t.rows.front().size() >= 2, "measure CSV needs coordinates and a weight column");
    const std::size_t n = t.rows.size(), d = t.rows.front().size() - 1;
    Mat pts(static_cast<Idx>(n), Idx(d));
    Vec w(static_cast<Idx>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d; ++c) pts(Idx(i), Idx(c)) = t.rows[i][c];
        w[Idx(i)] = t.rows[i][d];
    }
    return ot::DiscreteMeasure::make(std::move(pts), std::move(w));
}

void write_measure_csv(const std::filesystem::path& path, const ot::DiscreteMeasure& m) {
    CsvTable t;
    for (std::size_t c = 0; c < m.dim(); ++c) t.header.push_back("x" + std::to_string(c));
    t.header.push_back("weight");
    for (std::size_t i = 0; i < m.size(); ++i) {
        std::vector<double> row;
        for (std::size_t c = 0; c < m.dim(); ++c) row.push_back(m.points(Idx(i), Idx(c)));
        row.push_back(m.weights[Idx(i)]);
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

void write_matrix_csv(const std::filesystem::path& path, const Mat& m, const std::string& prefix) {
    CsvTable t;
    for (Idx c = 0; c < m.cols(); ++c) t.header.push_back(prefix + std::to_string(c));
    for (Idx r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Idx c = 0; c < m.cols(); ++c) row[std::size_t(c)] = m(r, c);
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

Mat read_matrix_csv(const std::filesystem::path& path) {
    const auto t = read_csv(path);
    require(!t.rows.empty(), "matrix CSV is empty");
    Mat m(static_cast<Idx>(t.rows.size()), Idx(t.rows.front().size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < t.rows[r].size(); ++c) m(Idx(r), Idx(c)) = t.rows[r][c];
    return m;
}

dsb::RateMatrix read_rate_matrix(const std::filesystem::path& path) {
    if (path.extension() == ".json") {
        const json j = read_json(path);
        try {
            const std::size_t n = j.at("n").get<std::size_t>();
            require(n > 0, "rate matrix needs states");
            Mat q = Mat::Zero(Idx(n), Idx(n));
            for (const auto& e : j.at("entries")) {
                const auto i = e.at(0).get<std::size_t>(), k = e.at(1).get<std::size_t>();
                require(i < n && k < n && i != k, "rate entry index out of range or on the diagonal");
                q(Idx(i), Idx(k)) = e.at(2).get<double>();
            }
            for (Idx i = 0; i < q.rows(); ++i) q(i, i) = -q.row(i).sum();
            auto r = dsb::RateMatrix::constant(std::move(q));
            if (j.contains("labels")) r.labels = j.at("labels").get<std::vector<std::string>>();
            r.validate();
            return r;
        } catch (const json::exception& e) {
            throw ContractError("malformed rate matrix JSON in " + path.string() + ": " + e.what());
        }
    }
    return dsb::RateMatrix::constant(read_matrix_csv(path));
}

void write_rate_matrix_json(const std::filesystem::path& path, const dsb::RateMatrix& q) {
    require(q.pieces.size() == 1, "only constant rate matrices serialize to JSON");
    const Mat& m = q.pieces.front();
    json j;
    j["n"] = m.rows();
    j["entries"] = json::array();
    for (Idx i = 0; i < m.rows(); ++i)
        for (Idx k = 0; k < m.cols(); ++k)
            if (i != k && m(i, k) != 0.0) j["entries"].push_back({i, k, m(i, k)});
    if (!q.labels.empty()) j["labels"] = q.labels;
    auto f = open_out(path);
    f << j.dump(2) << '\n';
}

void write_ctmc_paths_csv(const std::filesystem::path& path, const std::vector<dsb::CtmcPath>& paths) {
    CsvTable t;
    t.header = {"path", "time", "state"};
    for (std::size_t p = 0; p < paths.size(); ++p) {
        t.rows.push_back({double(p), 0.0, double(paths[p].initial())});
        for (std::size_t k = 0; k < paths[p].n_jumps(); ++k)
            t.rows.push_back({double(p), paths[p].jump_times[k], double(paths[p].states[k + 1])});
    }
    write_csv(path, t);
}

void write_value_grid_csv(const std::filesystem::path& path, const soc::ValueGrid& g) {
    CsvTable t;
    t.header.push_back("t");
    for (std::size_t c = 0; c < g.space.dim(); ++c) t.header.push_back("x" + std::to_string(c));
    t.header.push_back("value");
    const bool se = g.std_error.size() > 0;
    if (se) t.header.push_back("std_error");
    for (std::size_t k = 0; k < g.times.size(); ++k)
        for (std::size_t i = 0; i < g.space.size(); ++i) {
            std::vector<double> row{g.times[k]};
            const Vec x = g.space.node(i);
            for (Idx c = 0; c < x.size(); ++c) row.push_back(x[c]);
            row.push_back(g.values(Idx(k), Idx(i)));
            if (se) row.push_back(g.std_error(Idx(k), Idx(i)));
            t.rows.push_back(std::move(row));
        }
    write_csv(path, t);
}

void write_schedule_csv(const std::filesystem::path& path, const gauss::BridgeSchedule& s, std::size_t n_times) {
    require(n_times >= 2, "schedule table needs two times");
    CsvTable t;
    t.header = {"t", "tau", "kappa", "r", "r_bar", "rho"};
    for (std::size_t k = 0; k < n_times; ++k) {
        const double time = s.horizon() * double(k) / double(n_times - 1);
        t.rows.push_back({time, s.tau(time), s.kappa(time, time), s.r(time), s.r_bar(time), s.rho(time)});
    }
    write_csv(path, t);
}

void write_histogram_csv(const std::filesystem::path& path, const paths::Histogram& h) {
    CsvTable t;
    t.header = {"left", "right", "density"};
    for (std::size_t i = 0; i < h.density.size(); ++i) t.rows.push_back({h.left[i], h.right[i], h.density[i]});
    write_csv(path, t);
}

void write_drift_model_json(const std::filesystem::path& path, const imf::DriftModel& m) {
    json j;
    j["horizon"] = m.horizon;
    j["dim"] = m.dim;
    j["bin_edges"] = m.bin_edges;
    j["bandwidth"] = m.bandwidth;
    j["ridge_fallback"] = m.ridge_fallback;
    j["centers"] = json::array();
    for (Idx r = 0; r < m.centers.rows(); ++r) {
        std::vector<double> row(std::size_t(m.centers.cols()));
        for (Idx c = 0; c < m.centers.cols(); ++c) row[std::size_t(c)] = m.centers(r, c);
        j["centers"].push_back(row);
    }
    j["weights"] = json::array();
    for (const auto& w : m.weights) {
        json bin = json::array();
        for (Idx r = 0; r < w.rows(); ++r) {
            std::vector<double> row(std::size_t(w.cols()));
            for (Idx c = 0; c < w.cols(); ++c) row[std::size_t(c)] = w(r, c);
            bin.push_back(row);
        }
        j["weights"].push_back(bin);
    }
    auto f = open_out(path);
    f << j.dump(2) << '\n';
}

imf::DriftModel read_drift_model_json(const std::filesystem::path& path) {
    const json j = read_json(path);
    try {
        imf::DriftModel m;
        m.horizon = j.at("horizon").get<double>();
        m.dim = j.at("dim").get<std::size_t>();
        m.bin_edges = j.at("bin_edges").get<std::vector<double>>();
        m.bandwidth = j.at("bandwidth").get<double>();
        m.ridge_fallback = j.value("ridge_fallback", false);
        const auto centers = j.at("centers").get<std::vector<std::vector<double>>>();
        m.centers.resize(Idx(centers.size()), Idx(m.dim));
        for (std::size_t r = 0; r < centers.size(); ++r) {
            require(centers[r].size() == m.dim, "center dimension mismatch");
            for (std::size_t c = 0; c < m.dim; ++c) m.centers(Idx(r), Idx(c)) = centers[r][c];
        }
        for (const auto& bin : j.at("weights")) {
            const auto rows = bin.get<std::vector<std::vector<double>>>();
            require(rows.size() == m.n_features(), "weight rows must match the feature count");
            Mat w(static_cast<Idx>(rows.size()), Idx(m.dim));
            for (std::size_t r = 0; r < rows.size(); ++r) {
                require(rows[r].size() == m.dim, "weight columns must match the dimension");
                for (std::size_t c = 0; c < m.dim; ++c) w(Idx(r), Idx(c)) = rows[r][c];
            }
            m.weights.push_back(std::move(w));
        }
        require(!m.weights.empty() && m.bin_edges.size() == m.weights.size() + 1, "bin edges must bracket the bins");
        return m;
    } catch (const json::exception& e) {
        throw ContractError("malformed drift model JSON in " + path.string() + ": " + e.what());
    }
}

void write_ensemble_binary(const std::filesystem::path& path, const paths::PathEnsemble& e) {
    auto f = open_out(path, true);
    const std::uint64_t head[4] = {e.n_paths, e.n_times(), e.dim, e.seed};
    f.write(reinterpret_cast<const char*>(head), sizeof head);
    f.write(reinterpret_cast<const char*>(e.states.data()), std::streamsize(e.states.size() * sizeof(double)));
    if (!f) throw NumericalFault("failed writing " + path.string());
}

paths::PathEnsemble read_ensemble_binary(const std::filesystem::path& path, const std::vector<double>& grid) {
    auto f = open_in(path, true);
    std::uint64_t head[4];
    f.read(reinterpret_cast<char*>(head), sizeof head);
    if (!f) throw ContractError("truncated ensemble header in " + path.string());
    require(grid.empty() || grid.size() == head[1], "time grid does not match the ensemble");
    paths::PathEnsemble e;
    e.n_paths = head[0];
    e.dim = head[2];
    e.seed = head[3];
    e.grid = grid;
    if (e.grid.empty())
        for (std::uint64_t k = 0; k < head[1]; ++k) e.grid.push_back(double(k));
    e.states.resize(head[0] * head[1] * head[2]);
    f.read(reinterpret_cast<char*>(e.states.data()), std::streamsize(e.states.size() * sizeof(double)));
    if (!f) throw ContractError("truncated ensemble data in " + path.string());
    return e;
}

}  // namespace bridgekit::io
