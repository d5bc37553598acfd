#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rectflow/config.hpp"
#include "rectflow/svg_plot.hpp"

namespace rectflow {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> output_dir;
};

RunConfig load_config(const std::filesystem::path& path, const CliOverrides& overrides);

struct CompareRow {
    std::string strategy;
    std::string label;
    std::size_t n_steps = 0;
    std::uint64_t nfe_total = 0;
    double sw_to_data = 0.0;
    double energy_distance = 0.0;
    double mean_deviation = 0.0;
    double max_deviation = 0.0;
    /// (grid time, p95 nearest-bank distance) per requested manifold time.
    std::vector<std::pair<double, double>> manifold_p95;
};

struct CompareReport {
    std::vector<CompareRow> rows;
};

/// Runs every strategy at every step count on shared chain seeds and scores
/// the final points against held-out data carrying the same labels.
CompareReport run_compare(const VelocityField& field, const ConditionalDataset& dataset, const RunConfig& config);

nlohmann::json compare_report_json(const CompareReport& report, const RunConfig& config);

/// Bound estimates, guidance-drift and step-deviation checks, schedule quadrature and the
/// distributional deviation curve, with pass flags.
nlohmann::json run_verify(const VelocityField& field, const ConditionalDataset& dataset, const RunConfig& config,
                          std::vector<DeviationPoint>& deviation_curve);

void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_sample(const RunConfig& config, std::ostream& log);
void cmd_compare(const RunConfig& config, std::ostream& log);
void cmd_verify(const RunConfig& config, std::ostream& log);
void cmd_plot(const std::filesystem::path& trajectory_csv, const PlotOptions& options,
              const std::filesystem::path& out, std::ostream& log);

/// Full command line: parses arguments, runs the subcommand and maps
/// failures to exit codes (2 input/config, 3 numeric/runtime).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace rectflow
