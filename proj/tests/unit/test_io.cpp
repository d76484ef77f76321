#include "bridgekit/io.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>

using namespace bridgekit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "bridgekit_io_test";
    fs::create_directories(dir);
    return dir / name;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("numbers round trip through text") {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0})
        CHECK(std::stod(io::format_number(v)) == v);
}

TEST_CASE("csv tables") {
    io::CsvTable t{{"a", "b"}, {{1.0, 0.1}, {-3.0, 1e-17}}};
    auto p = scratch("t.csv");
    io::write_csv(p, t);
    auto back = io::read_csv(p);
    CHECK(back.header == t.header);
    CHECK(back.rows == t.rows);

    write_text(p, "1,2\n3,4\n");
    CHECK(io::read_csv(p).header.empty());
    CHECK(io::read_csv(p).rows.size() == 2);
    write_text(p, "x,y\n1,2\n3\n");
    CHECK_THROWS_AS(io::read_csv(p), ContractError);
    write_text(p, "x,y\n1,oops\n");
    CHECK_THROWS_AS(io::read_csv(p), ContractError);
    CHECK_THROWS_AS(io::read_csv(scratch("missing.csv")), ContractError);
}

TEST_CASE("measures and matrices") {
    Mat pts(3, 2);
    pts << 0, 1, 2, 3, 4, 5;
    Vec w(3);
    w << 0.2, 0.3, 0.5;
    auto m = ot::DiscreteMeasure::make(pts, w);
    auto p = scratch("m.csv");
    io::write_measure_csv(p, m);
    auto back = io::read_measure_csv(p);
    CHECK(back.points == m.points);
    CHECK(back.weights == m.weights);
    write_text(p, "x,w\n0,0.5\n1,0.6\n");
    CHECK_THROWS(io::read_measure_csv(p));

    Mat a = Mat::Random(4, 3);
    io::write_matrix_csv(p, a);
    CHECK(io::read_matrix_csv(p) == a);
}

TEST_CASE("rate matrices from csv and json") {
    Mat q(3, 3);
    q << -1.0, 0.4, 0.6, 0.2, -0.2, 0.0, 0.5, 0.5, -1.0;
    auto rm = dsb::RateMatrix::constant(q);
    auto j = scratch("q.json");
    io::write_rate_matrix_json(j, rm);
    CHECK(io::read_rate_matrix(j).pieces.front().isApprox(q, 1e-15));
    auto c = scratch("q.csv");
    io::write_matrix_csv(c, q);
    CHECK(io::read_rate_matrix(c).pieces.front() == q);

    write_text(j, R"({"n": 2, "entries": [[0, 1, 0.5]]})");
    Mat expected(2, 2);
    expected << -0.5, 0.5, 0.0, 0.0;
    CHECK(io::read_rate_matrix(j).pieces.front() == expected);
    write_text(j, R"({"n": 2, "entries": [[0, 0, 0.5]]})");
    CHECK_THROWS_AS(io::read_rate_matrix(j), ContractError);
    write_text(j, R"({"n": 2, "entries": [[0, 1)");
    CHECK_THROWS_AS(io::read_rate_matrix(j), ContractError);
    write_text(j, R"({"n": 2, "entries": [[0, 1, -0.5]]})");
    CHECK_THROWS_AS(io::read_rate_matrix(j), ContractError);
}

TEST_CASE("drift models round trip") {
    imf::DriftModel m;
    m.horizon = 2.0;
    m.dim = 2;
    m.bin_edges = {0.0, 1.0, 2.0};
    m.centers = Mat::Random(3, 2);
    m.bandwidth = 0.7;
    m.weights = {Mat::Random(6, 2), Mat::Random(6, 2)};
    m.ridge_fallback = true;
    auto p = scratch("model.json");
    io::write_drift_model_json(p, m);
    auto back = io::read_drift_model_json(p);
    CHECK(back.horizon == m.horizon);
    CHECK(back.dim == m.dim);
    CHECK(back.bin_edges == m.bin_edges);
    CHECK(back.centers == m.centers);
    CHECK(back.bandwidth == m.bandwidth);
    CHECK(back.ridge_fallback);
    REQUIRE(back.weights.size() == 2);
    CHECK(back.weights[1] == m.weights[1]);
    Vec x(2);
    x << 0.3, -0.2;
    CHECK(back(x, 1.5) == m(x, 1.5));
    write_text(p, "{\"horizon\": 1}");
    CHECK_THROWS_AS(io::read_drift_model_json(p), ContractError);
}

TEST_CASE("ensembles round trip in binary") {
    paths::PathEnsemble e;
    e.grid = {0.0, 0.5, 1.0};
    e.n_paths = 2;
    e.dim = 2;
    e.seed = 77;
    for (int k = 0; k < 12; ++k) e.states.push_back(0.25 * k - 1.0);
    auto p = scratch("e.bin");
    io::write_ensemble_binary(p, e);
    auto back = io::read_ensemble_binary(p, e.grid);
    CHECK(back.states == e.states);
    CHECK(back.seed == 77);
    CHECK(back.n_paths == 2);
    CHECK(back.dim == 2);
    CHECK_THROWS_AS(io::read_ensemble_binary(p, {0.0, 1.0}), ContractError);
    fs::resize_file(p, fs::file_size(p) - 8);
    CHECK_THROWS_AS(io::read_ensemble_binary(p, e.grid), ContractError);
}
