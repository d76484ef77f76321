#pragma once

#include "bridgekit/common.hpp"
#include "bridgekit/discrete_sb.hpp"
#include "bridgekit/entropic_ot.hpp"
#include "bridgekit/gaussian_bridge.hpp"
#include "bridgekit/imf.hpp"
#include "bridgekit/path_sim.hpp"
#include "bridgekit/soc.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace bridgekit::io {

/// Numeric CSV with an optional header line.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

/// Round-trip formatting (17 significant digits).
std::string format_number(double v);

void write_csv(const std::filesystem::path& path, const CsvTable& table);
/// A first line that does not parse as numbers is taken as the header.
CsvTable read_csv(const std::filesystem::path& path);

/// One row per support point: coordinates..., weight.
ot::DiscreteMeasure read_measure_csv(const std::filesystem::path& path);
void write_measure_csv(const std::filesystem::path& path, const ot::DiscreteMeasure& m);

void write_matrix_csv(const std::filesystem::path& path, const Mat& m, const std::string& column_prefix = "c");
Mat read_matrix_csv(const std::filesystem::path& path);

/// Dense CSV, or JSON {"n": N, "entries": [[i, j, rate], ...]} with the diagonal filled in.
dsb::RateMatrix read_rate_matrix(const std::filesystem::path& path);
void write_rate_matrix_json(const std::filesystem::path& path, const dsb::RateMatrix& q);

/// Columns path, time, state; one row for the start and one per jump.
void write_ctmc_paths_csv(const std::filesystem::path& path, const std::vector<dsb::CtmcPath>& paths);

/// Columns t, x0.., value[, std_error].
void write_value_grid_csv(const std::filesystem::path& path, const soc::ValueGrid& grid);

/// Columns t, tau, kappa, r, r_bar, rho.
void write_schedule_csv(const std::filesystem::path& path, const gauss::BridgeSchedule& s, std::size_t n_times);

void write_histogram_csv(const std::filesystem::path& path, const paths::Histogram& h);

void write_drift_model_json(const std::filesystem::path& path, const imf::DriftModel& m);
imf::DriftModel read_drift_model_json(const std::filesystem::path& path);

/// Header of four little-endian uint64 (n_paths, n_times, dim, seed), then row-major doubles.
void write_ensemble_binary(const std::filesystem::path& path, const paths::PathEnsemble& e);
paths::PathEnsemble read_ensemble_binary(const std::filesystem::path& path, const std::vector<double>& grid);

}  // namespace bridgekit::io
