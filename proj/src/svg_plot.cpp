#include "rectflow/svg_plot.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

namespace rectflow {

namespace {

constexpr double margin = 24.0;
constexpr double gap = 16.0;
constexpr double title_height = 18.0;

std::string fixed(double value)
{
    if (std::abs(value) < 0.005) value = 0.0;
    char buffer[48];
    const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::fixed, 2);
    if (ec != std::errc{}) return "0.00";
    return std::string(buffer, end);
}

struct Bounds {
    double x_lo = -1.0;
    double x_hi = 1.0;
    double y_lo = -1.0;
    double y_hi = 1.0;
};

double coord(const Vec& x, std::size_t j)
{
    return j < x.size() ? x[j] : 0.0;
}

Bounds compute_bounds(const TrajectoryTable& table, const std::vector<Vec>& stars)
{
    std::vector<Vec> points;
    for (const auto& row : table.rows) points.push_back(row.x);
    points.insert(points.end(), stars.begin(), stars.end());
    Bounds b;
    if (points.empty()) return b;
    b.x_lo = b.x_hi = coord(points.front(), 0);
    b.y_lo = b.y_hi = coord(points.front(), 1);
    for (const auto& p : points) {
        b.x_lo = std::min(b.x_lo, coord(p, 0));
        b.x_hi = std::max(b.x_hi, coord(p, 0));
        b.y_lo = std::min(b.y_lo, coord(p, 1));
        b.y_hi = std::max(b.y_hi, coord(p, 1));
    }
    // square view so both axes share a scale
    const double half = std::max({b.x_hi - b.x_lo, b.y_hi - b.y_lo, 1e-9}) * 0.55;
    const double cx = 0.5 * (b.x_lo + b.x_hi);
    const double cy = 0.5 * (b.y_lo + b.y_hi);
    return {cx - half, cx + half, cy - half, cy + half};
}

std::vector<std::size_t> choose_panels(const TrajectoryTable& table, const PlotOptions& options)
{
    if (!options.panels.empty()) return options.panels;
    std::set<std::size_t> steps;
    for (const auto& row : table.rows) steps.insert(row.step);
    if (steps.empty()) return {0};
    const std::vector<std::size_t> all(steps.begin(), steps.end());
    const std::size_t n = std::min(options.default_panels == 0 ? 1 : options.default_panels, all.size());
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = n == 1 ? all.size() - 1 : (i * (all.size() - 1)) / (n - 1);
        chosen.push_back(all[idx]);
    }
    return chosen;
}

std::string star_path(double cx, double cy, double r)
{
    std::string d;
    for (int k = 0; k < 10; ++k) {
        const double radius = (k % 2 == 0) ? r : 0.45 * r;
        const double angle = -std::numbers::pi / 2.0 + k * std::numbers::pi / 5.0;
        d += (k == 0 ? "M" : "L") + fixed(cx + radius * std::cos(angle)) + "," + fixed(cy + radius * std::sin(angle));
    }
    return d + "Z";
}

} // namespace

std::string render_trajectory_svg(const TrajectoryTable& table, const PlotOptions& options)
{
    const auto panels = choose_panels(table, options);
    const Bounds b = compute_bounds(table, options.stars);
    const double size = options.panel_size;
    const double width = 2.0 * margin + panels.size() * size + (panels.size() - 1) * gap;
    const double height = 2.0 * margin + title_height + size;

    // chain -> step -> point, ordered so output is independent of row order
    std::map<std::size_t, std::map<std::size_t, const TrajectoryRow*>> chains;
    for (const auto& row : table.rows) chains[row.chain][row.step] = &row;

    std::string svg;
    svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + fixed(width) + "\" height=\"" +
           fixed(height) + "\" viewBox=\"0 0 " + fixed(width) + " " + fixed(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (std::size_t p = 0; p < panels.size(); ++p) {
        const std::size_t step = panels[p];
        const double left = margin + p * (size + gap);
        const double top = margin + title_height;
        auto px = [&](double x) { return left + (x - b.x_lo) / (b.x_hi - b.x_lo) * size; };
        auto py = [&](double y) { return top + (b.y_hi - y) / (b.y_hi - b.y_lo) * size; };

        svg += "<g>\n";
        svg += "<rect x=\"" + fixed(left) + "\" y=\"" + fixed(top) + "\" width=\"" + fixed(size) + "\" height=\"" +
               fixed(size) + "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
        if (b.x_lo < 0.0 && b.x_hi > 0.0) {
            svg += "<line x1=\"" + fixed(px(0.0)) + "\" y1=\"" + fixed(top) + "\" x2=\"" + fixed(px(0.0)) +
                   "\" y2=\"" + fixed(top + size) + "\" stroke=\"#bbbbbb\" stroke-width=\"0.5\"/>\n";
        }
        if (b.y_lo < 0.0 && b.y_hi > 0.0) {
            svg += "<line x1=\"" + fixed(left) + "\" y1=\"" + fixed(py(0.0)) + "\" x2=\"" + fixed(left + size) +
                   "\" y2=\"" + fixed(py(0.0)) + "\" stroke=\"#bbbbbb\" stroke-width=\"0.5\"/>\n";
        }

        std::string title = "step " + std::to_string(step);
        for (const auto& [chain, steps] : chains) {
            if (auto it = steps.find(step); it != steps.end()) {
                title += "  t=" + fixed(it->second->t);
                break;
            }
        }
        svg += "<text x=\"" + fixed(left) + "\" y=\"" + fixed(margin + 12.0) +
               "\" font-family=\"sans-serif\" font-size=\"12\">" + title + "</text>\n";

        if (options.paths) {
            for (const auto& [chain, steps] : chains) {
                std::string points;
                std::size_t count = 0;
                for (const auto& [s, row] : steps) {
                    if (s > step) break;
                    if (count++ > 0) points += ' ';
                    points += fixed(px(coord(row->x, 0))) + "," + fixed(py(coord(row->x, 1)));
                }
                if (count > 1) {
                    svg += "<polyline points=\"" + points +
                           "\" fill=\"none\" stroke=\"#4477aa\" stroke-opacity=\"0.3\" stroke-width=\"0.5\"/>\n";
                }
            }
        }
        for (const auto& [chain, steps] : chains) {
            if (auto it = steps.find(step); it != steps.end()) {
                const Vec& x = it->second->x;
                svg += "<circle cx=\"" + fixed(px(coord(x, 0))) + "\" cy=\"" + fixed(py(coord(x, 1))) +
                       "\" r=\"1.5\" fill=\"#225588\"/>\n";
            }
        }
        for (const auto& s : options.stars) {
            svg += "<path d=\"" + star_path(px(coord(s, 0)), py(coord(s, 1)), 7.0) +
                   "\" fill=\"red\" stroke=\"darkred\" stroke-width=\"0.5\"/>\n";
        }
        svg += "</g>\n";
    }
    svg += "</svg>\n";
    return svg;
}

} // namespace rectflow
