#include "rectflow/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rectflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_points(std::span<const Vec> points, std::size_t min_count, const char* what)
{
    if (points.size() < min_count) {
        throw InputError(std::string(what) + ": need at least " + std::to_string(min_count) + " points");
    }
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct ProbeValue {
    double guidance;
    double velocity;
};

ProbeValue probe(const VelocityField& field, const Vec& x, double t, Condition y)
{
    const Vec vc = field.velocity(x, t, y);
    const Vec vu = field.velocity(x, t, Condition::null());
    return ProbeValue{distance(vc, vu), l2_norm(vc)};
}

// Coordinate pattern search maximising `objective` inside the box.
template <class Objective>
double pattern_search(const Box& box, Vec x, double value, Objective objective)
{
    double step = 0.0;
    for (std::size_t i = 0; i < box.dim(); ++i) step = std::max(step, 0.05 * (box.hi[i] - box.lo[i]));
    while (step > 1e-6) {
        bool improved = false;
        for (std::size_t i = 0; i < box.dim(); ++i) {
            for (double sign : {1.0, -1.0}) {
                Vec candidate = x;
                candidate[i] += sign * step;
                candidate = box.clamp(std::move(candidate));
                const double v = objective(candidate);
                if (v > value) {
                    value = v;
                    x = std::move(candidate);
                    improved = true;
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return value;
}

} // namespace

Box Box::cube(std::size_t dim, double half_width) { return Box{Vec(dim, -half_width), Vec(dim, half_width)}; }

Box Box::around(std::span<const Vec> points, double pad)
{
    require_points(points, 1, "Box::around");
    Box box{points.front(), points.front()};
    for (const Vec& p : points) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            box.lo[i] = std::min(box.lo[i], p[i]);
            box.hi[i] = std::max(box.hi[i], p[i]);
        }
    }
    for (std::size_t i = 0; i < box.dim(); ++i) {
        box.lo[i] -= pad;
        box.hi[i] += pad;
    }
    return box;
}

Vec Box::sample(RngStream& rng) const
{
    Vec x(lo.size());
    for (std::size_t i = 0; i < lo.size(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
    return x;
}

Vec Box::clamp(Vec x) const
{
    for (std::size_t i = 0; i < lo.size(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
    return x;
}

double estimate_lipschitz(const VelocityField& field, const Box& region, std::span<const double> t_grid,
                          Condition cond, std::size_t n_pairs, const RngStream& rng)
{
    if (n_pairs < 100) throw InputError("estimate_lipschitz: n_pairs must be >= 100");
    if (t_grid.empty()) throw InputError("estimate_lipschitz: empty t grid");
    const Condition conds[] = {cond, Condition::null()};
    double best = 0.0;
    for (std::size_t i = 0; i < n_pairs; ++i) {
        RngStream pair_rng = rng.split(i);
        const Vec x = region.sample(pair_rng);
        Vec other;
        if (i % 2 == 0) {
            other = region.sample(pair_rng);
        } else {
            const double length = std::exp(pair_rng.uniform(std::log(1e-3), std::log(1e-1)));
            other = axpy(x, length, sample_unit_direction(pair_rng, x.size()));
        }
        const double gap = distance(x, other);
        if (gap == 0.0) continue;
        for (double t : t_grid) {
            for (Condition c : conds) {
                const double ratio = distance(field.velocity(x, t, c), field.velocity(other, t, c)) / gap;
                best = std::max(best, ratio);
            }
        }
    }
    return best;
}

GuidanceBounds estimate_guidance_bounds(const VelocityField& field, const Box& region, std::span<const double> t_grid,
                                        Condition y, std::size_t n_probes, const RngStream& rng,
                                        std::size_t refine_starts)
{
    if (n_probes < 100) throw InputError("estimate_guidance_bounds: n_probes must be >= 100");
    if (t_grid.empty()) throw InputError("estimate_guidance_bounds: empty t grid");

    struct Probe {
        Vec x;
        double t;
        ProbeValue value;
    };
    std::vector<Probe> probes;
    probes.reserve(n_probes);
    GuidanceBounds out;
    for (std::size_t i = 0; i < n_probes; ++i) {
        RngStream probe_rng = rng.split(i);
        Vec x = region.sample(probe_rng);
        const double t = t_grid[i % t_grid.size()];
        const ProbeValue v = probe(field, x, t, y);
        out.guidance_bound = std::max(out.guidance_bound, v.guidance);
        out.velocity_bound = std::max(out.velocity_bound, v.velocity);
        if (refine_starts > 0) probes.push_back(Probe{std::move(x), t, v});
    }
    if (refine_starts == 0) return out;

    const std::size_t starts = std::min(refine_starts, probes.size());
    auto refine = [&](auto key, auto objective_of) {
        std::vector<std::size_t> order(probes.size());
        std::iota(order.begin(), order.end(), 0);
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(starts), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              const double ka = key(probes[a].value);
                              const double kb = key(probes[b].value);
                              return ka > kb || (ka == kb && a < b);
                          });
        double best = 0.0;
        for (std::size_t s = 0; s < starts; ++s) {
            const Probe& p = probes[order[s]];
            best = std::max(best, pattern_search(region, p.x, key(p.value), objective_of(p.t)));
        }
        return best;
    };
    const double refined_b = refine([](const ProbeValue& v) { return v.guidance; },
                                    [&](double t) {
                                        return [&, t](const Vec& x) { return probe(field, x, t, y).guidance; };
                                    });
    const double refined_v = refine([](const ProbeValue& v) { return v.velocity; },
                                    [&](double t) {
                                        return [&, t](const Vec& x) { return l2_norm(field.velocity(x, t, y)); };
                                    });
    out.guidance_bound = std::max(out.guidance_bound, refined_b);
    out.velocity_bound = std::max(out.velocity_bound, refined_v);
    return out;
}

GuidanceDriftTerms guidance_drift_terms(const VelocityField& field, const Vec& x, double t, double dt, Condition y)
{
    const double t_mid = t - 0.5 * dt;
    if (t_mid < 0.0) throw ScheduleError("guidance drift: t - dt/2 < 0");
    const Vec vc = field.velocity(x, t, y);
    const Vec dv_here = vc - field.velocity(x, t, Condition::null());
    const Vec x_pred = axpy(x, 0.5 * dt, vc);
    const Vec dv_half = field.velocity(x_pred, t_mid, y) - field.velocity(x_pred, t_mid, Condition::null());
    const Vec dv_same_time = field.velocity(x_pred, t, y) - field.velocity(x_pred, t, Condition::null());
    return GuidanceDriftTerms{distance(dv_half, dv_here), distance(dv_same_time, dv_here)};
}

std::vector<PathPoint> draw_on_path_states(const ConditionalDataset& dataset, Condition y, std::size_t n, double t_min,
                                           RngStream rng)
{
    if (!(t_min >= 0.0 && t_min <= 1.0)) throw RangeError("draw_on_path_states: t_min outside [0,1]");
    std::vector<PathPoint> states;
    states.reserve(n);
    for (std::size_t i = 0; i < n; ++i) states.push_back(sample_path_point(dataset, y, rng, t_min));
    return states;
}

BoundReport check_guidance_drift(const VelocityField& field, std::span<const PathPoint> states, Condition y, double dt,
                         const BoundEstimates& estimates)
{
    if (!(dt > 0.0 && dt <= 1.0)) throw RangeError("check_guidance_drift: dt must lie in (0, 1]");
    BoundReport report;
    report.dt = dt;
    const double rhs = estimates.lipschitz * estimates.velocity_bound * dt;
    for (const PathPoint& s : states) {
        const double lhs = guidance_drift_terms(field, s.x_t, s.t, dt, y).literal;
        report.lhs.push_back(lhs);
        report.rhs.push_back(rhs);
        report.max_lhs = std::max(report.max_lhs, lhs);
        const double ratio = rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? INFINITY : 0.0);
        report.max_ratio = std::max(report.max_ratio, ratio);
        if (lhs > rhs) ++report.violations;
    }
    if (!states.empty()) report.violation_rate = static_cast<double>(report.violations) / static_cast<double>(states.size());
    return report;
}

BoundReport check_guidance_drift(const VelocityField& field, const ConditionalDataset& dataset, Condition y, double dt,
                         std::size_t n_states, const RngStream& rng, const BoundEstimates& estimates)
{
    const auto states = draw_on_path_states(dataset, y, n_states, 0.5 * dt, rng);
    return check_guidance_drift(field, states, y, dt, estimates);
}

double loglog_slope(std::span<const double> xs, std::span<const double> ys)
{
    if (xs.size() != ys.size() || xs.size() < 2) throw InputError("loglog_slope: need >= 2 paired values");
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) return kNaN;
        mx += std::log(xs[i]);
        my += std::log(ys[i]);
    }
    const double n = static_cast<double>(xs.size());
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = std::log(xs[i]) - mx;
        sxy += dx * (std::log(ys[i]) - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

ScalingReport guidance_drift_scaling(const VelocityField& field, std::span<const PathPoint> states, Condition y,
                             std::span<const double> dts)
{
    ScalingReport report;
    for (double dt : dts) {
        double max_literal = 0.0;
        double max_common = 0.0;
        for (const PathPoint& s : states) {
            const GuidanceDriftTerms terms = guidance_drift_terms(field, s.x_t, s.t, dt, y);
            max_literal = std::max(max_literal, terms.literal);
            max_common = std::max(max_common, terms.common_time);
        }
        report.dts.push_back(dt);
        report.max_literal.push_back(max_literal);
        report.max_common_time.push_back(max_common);
    }
    report.slope_literal = loglog_slope(report.dts, report.max_literal);
    report.slope_common_time = loglog_slope(report.dts, report.max_common_time);
    return report;
}

BoundReport check_step_deviation(std::span<const Trajectory> trajectories, double guidance_bound)
{
    BoundReport report;
    std::size_t steps = 0;
    for (const Trajectory& traj : trajectories) {
        if (traj.states.empty() || traj.diagnostics.size() + 1 != traj.states.size() ||
            traj.times.size() != traj.states.size()) {
            throw InputError("check_step_deviation: trajectory is missing diagnostics");
        }
        const bool has_reference = traj.reference_states.size() == traj.diagnostics.size();
        for (std::size_t k = 0; k < traj.diagnostics.size(); ++k) {
            const StepDiagnostics& d = traj.diagnostics[k];
            const double dt = traj.times[k] - traj.times[k + 1];
            const double predicted = dt * d.alpha * d.dv_norm;
            const double lhs = d.deviation_from_conditional;
            const double rhs = dt * d.alpha * guidance_bound;
            report.lhs.push_back(lhs);
            report.rhs.push_back(rhs);
            report.max_lhs = std::max(report.max_lhs, lhs);
            report.dt = std::max(report.dt, dt);

            double rel = 0.0;
            if (predicted > 0.0) {
                rel = std::abs(lhs - predicted) / predicted;
            } else if (lhs != 0.0) {
                rel = INFINITY;
            }
            report.max_equality_rel_error = std::max(report.max_equality_rel_error, rel);

            const double ratio = rhs > 0.0 ? lhs / rhs : (lhs > 0.0 ? INFINITY : 0.0);
            report.max_ratio = std::max(report.max_ratio, ratio);
            if (lhs > rhs) ++report.violations;

            if (has_reference) {
                const double state_gap = distance(traj.states[k + 1], traj.reference_states[k]);
                report.max_state_abs_error = std::max(report.max_state_abs_error, std::abs(state_gap - predicted));
                ++report.state_checks;
            }
            ++steps;
        }
    }
    if (steps > 0) report.violation_rate = static_cast<double>(report.violations) / static_cast<double>(steps);
    return report;
}

double quantile(std::vector<double> values, double q)
{
    if (values.empty()) throw InputError("quantile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return (1.0 - w) * values[lo] + w * values[hi];
}

std::vector<double> nearest_distances(std::span<const Vec> points, std::span<const Vec> bank)
{
    if (bank.empty()) throw InputError("manifold_distance: empty bank");
    std::vector<double> nearest;
    nearest.reserve(points.size());
    for (const Vec& p : points) {
        double best = INFINITY;
        for (const Vec& b : bank) best = std::min(best, squared_distance(p, b));
        nearest.push_back(std::sqrt(best));
    }
    return nearest;
}

DistanceStats summarize_distances(const std::vector<double>& distances)
{
    DistanceStats stats;
    if (distances.empty()) return stats;
    double sum = 0.0;
    for (double d : distances) sum += d;
    stats.mean = sum / static_cast<double>(distances.size());
    stats.median = quantile(distances, 0.5);
    stats.p95 = quantile(distances, 0.95);
    stats.max = *std::max_element(distances.begin(), distances.end());
    return stats;
}

DistanceStats manifold_distance(std::span<const Vec> points, std::span<const Vec> bank)
{
    return summarize_distances(nearest_distances(points, bank));
}

std::vector<Vec> path_bank(const ConditionalDataset& dataset, Condition y, double t, std::size_t m, RngStream rng)
{
    std::vector<Vec> bank;
    bank.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto [x0, x1] = sample_pair(dataset, y, rng);
        bank.push_back(interpolate(x0, x1, t));
    }
    return bank;
}

std::vector<Vec> flow_bank(const VelocityField& field, Condition y, double t, std::size_t m,
                           std::size_t steps_per_unit, std::uint64_t seed)
{
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("flow_bank: t outside [0,1]");
    const std::size_t steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil((1.0 - t) * steps_per_unit)));
    const double dt = (1.0 - t) / static_cast<double>(steps);
    std::vector<Vec> bank;
    bank.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        RngStream rng = chain_stream(seed, i);
        Vec x = sample_standard_normal(rng, field.dim());
        if (t < 1.0) {
            for (std::size_t k = 0; k < steps; ++k) {
                const double tk = 1.0 - static_cast<double>(k) * dt;
                x = ode_update(x, field.velocity(x, tk, y), dt, k);
            }
        }
        bank.push_back(std::move(x));
    }
    return bank;
}

double wasserstein_1d(std::vector<double> a, std::vector<double> b)
{
    if (a.empty() || b.empty()) throw InputError("wasserstein_1d: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    // Quantile functions are step functions with breaks at i/n and j/m; walk the
    // merged breakpoints in integer units of 1/(n m).
    const std::uint64_t n = a.size();
    const std::uint64_t m = b.size();
    std::uint64_t i = 0;
    std::uint64_t j = 0;
    std::uint64_t pos = 0;
    double sum = 0.0;
    while (i < n && j < m) {
        const std::uint64_t end_a = (i + 1) * m;
        const std::uint64_t end_b = (j + 1) * n;
        const std::uint64_t end = std::min(end_a, end_b);
        const double diff = a[i] - b[j];
        sum += diff * diff * static_cast<double>(end - pos);
        pos = end;
        if (end == end_a) ++i;
        if (end == end_b) ++j;
    }
    return std::sqrt(sum / static_cast<double>(n * m));
}

double sliced_wasserstein(std::span<const Vec> a, std::span<const Vec> b, std::size_t n_projections,
                          const RngStream& rng)
{
    require_points(a, 2, "sliced_wasserstein");
    require_points(b, 2, "sliced_wasserstein");
    if (n_projections == 0) throw InputError("sliced_wasserstein: need >= 1 projection");
    const std::size_t dim = a.front().size();
    double total = 0.0;
    std::vector<double> pa(a.size());
    std::vector<double> pb(b.size());
    for (std::size_t p = 0; p < n_projections; ++p) {
        RngStream dir_rng = rng.split(p);
        const Vec u = sample_unit_direction(dir_rng, dim);
        for (std::size_t i = 0; i < a.size(); ++i) pa[i] = dot(a[i], u);
        for (std::size_t i = 0; i < b.size(); ++i) pb[i] = dot(b[i], u);
        total += wasserstein_1d(pa, pb);
    }
    return total / static_cast<double>(n_projections);
}

double energy_distance(std::span<const Vec> a, std::span<const Vec> b)
{
    if (a.empty() || b.empty()) throw InputError("energy_distance: empty sample");
    auto mean_pairwise = [](std::span<const Vec> p, std::span<const Vec> q) {
        double sum = 0.0;
        for (const Vec& x : p) {
            double row = 0.0;
            for (const Vec& z : q) row += distance(x, z);
            sum += row;
        }
        return sum / (static_cast<double>(p.size()) * static_cast<double>(q.size()));
    };
    const double cross = mean_pairwise(a, b);
    const double within_a = mean_pairwise(a, a);
    const double within_b = mean_pairwise(b, b);
    return 2.0 * cross - within_a - within_b;
}

double histogram_kl(std::span<const Vec> points, const GaussianMarginal& marginal)
{
    constexpr std::size_t kBins = 64;
    constexpr double kHalfWidth = 3.29;
    constexpr double kSmoothing = 1e-9;
    if (marginal.mean.size() != 2) throw DimensionError("histogram_kl supports 2-D only");
    const double sd = std::sqrt(marginal.variance);
    if (!(sd > 0.0)) throw InputError("histogram_kl: degenerate marginal");

    std::vector<double> counts(kBins * kBins, 0.0);
    double inside = 0.0;
    const double width = 2.0 * kHalfWidth * sd / static_cast<double>(kBins);
    for (const Vec& p : points) {
        const double u = (p[0] - (marginal.mean[0] - kHalfWidth * sd)) / width;
        const double v = (p[1] - (marginal.mean[1] - kHalfWidth * sd)) / width;
        if (!(u >= 0.0 && u < kBins && v >= 0.0 && v < kBins)) continue;
        counts[static_cast<std::size_t>(u) * kBins + static_cast<std::size_t>(v)] += 1.0;
        inside += 1.0;
    }
    if (inside == 0.0) return INFINITY;

    std::vector<double> edge_mass(kBins);
    for (std::size_t i = 0; i < kBins; ++i) {
        const double z0 = -kHalfWidth + 2.0 * kHalfWidth * static_cast<double>(i) / kBins;
        const double z1 = -kHalfWidth + 2.0 * kHalfWidth * static_cast<double>(i + 1) / kBins;
        edge_mass[i] = normal_cdf(z1) - normal_cdf(z0);
    }
    double p_total = 0.0;
    double q_total = 0.0;
    std::vector<double> q(kBins * kBins);
    for (std::size_t i = 0; i < kBins; ++i) {
        for (std::size_t j = 0; j < kBins; ++j) {
            q[i * kBins + j] = edge_mass[i] * edge_mass[j] + kSmoothing;
            q_total += q[i * kBins + j];
            counts[i * kBins + j] = counts[i * kBins + j] / inside + kSmoothing;
            p_total += counts[i * kBins + j];
        }
    }
    double kl = 0.0;
    for (std::size_t b = 0; b < q.size(); ++b) {
        const double p = counts[b] / p_total;
        kl += p * std::log(p / (q[b] / q_total));
    }
    return kl;
}

std::vector<DeviationPoint> distributional_deviation(std::span<const Trajectory> trajectories,
                                                     const ConditionalDataset& dataset, Condition y,
                                                     std::span<const double> t_grid, std::size_t n_projections,
                                                     const RngStream& rng)
{
    std::vector<DeviationPoint> curve;
    if (t_grid.empty() || trajectories.empty()) return curve;
    const bool exact = dataset.kind() == DatasetKind::GaussianSingle;
    for (std::size_t g = 0; g < t_grid.size(); ++g) {
        const double t = t_grid[g];
        if (!exact && t > 1e-12) continue;
        std::vector<Vec> states;
        for (const Trajectory& traj : trajectories) {
            if (traj.times.empty()) continue;
            std::size_t best = 0;
            for (std::size_t k = 1; k < traj.times.size(); ++k) {
                if (std::abs(traj.times[k] - t) < std::abs(traj.times[best] - t)) best = k;
            }
            states.push_back(traj.states[best]);
        }
        if (states.size() < 2) continue;

        RngStream ref_rng = rng.split(2 * g);
        std::vector<Vec> reference;
        reference.reserve(states.size());
        DeviationPoint point;
        point.t = t;
        if (exact) {
            const GaussianMarginal marginal = oracle_marginal(dataset, t, y);
            const double sd = std::sqrt(marginal.variance);
            for (std::size_t i = 0; i < states.size(); ++i) {
                reference.push_back(axpy(marginal.mean, sd, sample_standard_normal(ref_rng, dataset.dim())));
            }
            if (dataset.dim() == 2 && sd > 0.0) point.kl = histogram_kl(states, marginal);
        } else {
            for (std::size_t i = 0; i < states.size(); ++i) reference.push_back(dataset.sample_data(y, ref_rng));
        }
        point.sliced_w = sliced_wasserstein(states, reference, n_projections, rng.split(2 * g + 1));
        curve.push_back(std::move(point));
    }
    return curve;
}

double integrate_schedule(const AlphaSchedule& schedule, std::size_t intervals)
{
    if (intervals < 2) intervals = 2;
    if (intervals % 2 != 0) ++intervals;
    const double h = 1.0 / static_cast<double>(intervals);
    double sum = schedule(0.0) + schedule(1.0);
    for (std::size_t i = 1; i < intervals; ++i) {
        const double t = static_cast<double>(i) * h;
        sum += (i % 2 == 1 ? 4.0 : 2.0) * schedule(t);
    }
    return sum * h / 3.0;
}

} // namespace rectflow
