#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rectflow/csv_io.hpp"
#include "rectflow/numerics.hpp"

namespace rectflow {

struct PlotOptions {
    /// Steps to draw, one panel each. Empty picks up to `default_panels`
    /// evenly spaced steps from the table.
    std::vector<std::size_t> panels;
    std::size_t default_panels = 6;
    /// Draw each chain's path up to the panel's step.
    bool paths = false;
    /// Target markers (first two coordinates are used).
    std::vector<Vec> stars;
    double panel_size = 240.0;
};

/// SVG 1.1 document with one scatter panel per selected step. Coordinates
/// are written with fixed precision, so the output depends only on the input.
std::string render_trajectory_svg(const TrajectoryTable& table, const PlotOptions& options);

} // namespace rectflow
