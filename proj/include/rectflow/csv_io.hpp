#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rectflow/numerics.hpp"
#include "rectflow/sampler.hpp"
#include "rectflow/training.hpp"
#include "rectflow/verify.hpp"

namespace rectflow {

/// Shortest round-trip decimal form ("." separator, no locale).
std::string format_number(double value);

/// RFC-4180 quoting: fields containing a comma, quote or newline are quoted
/// with inner quotes doubled.
std::string csv_field(const std::string& text);

/// epoch,loss,oracle_rmse (oracle_rmse empty on epochs without an evaluation).
void write_loss_csv(std::ostream& out, const TrainReport& report);

/// chain,x_0,...,x_{d-1}
void write_final_points_csv(std::ostream& out, const SampleResult& result);

/// chain,step,t,x_0,...,x_{d-1},alpha,dv_norm,deviation
/// One row per recorded state; the diagnostics on row k describe the step
/// leaving state k, so the last row of each chain leaves them empty.
void write_trajectory_csv(std::ostream& out, const SampleResult& result);

/// t,sw,kl (kl empty where unavailable).
void write_deviation_csv(std::ostream& out, std::span<const DeviationPoint> curve);

struct TrajectoryRow {
    std::size_t chain = 0;
    std::size_t step = 0;
    double t = 0.0;
    Vec x;
};

struct TrajectoryTable {
    std::size_t dim = 0;
    std::vector<TrajectoryRow> rows;
};

/// Parses a trajectory CSV. Throws InputError naming the offending line.
TrajectoryTable read_trajectory_csv(std::istream& in);

} // namespace rectflow
