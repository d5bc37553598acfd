#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rectflow/datasets.hpp"
#include "rectflow/guidance.hpp"
#include "rectflow/numerics.hpp"
#include "rectflow/sampler.hpp"
#include "rectflow/velocity_field.hpp"

namespace rectflow {

/// Axis-aligned box [lo, hi].
struct Box {
    Vec lo;
    Vec hi;

    static Box cube(std::size_t dim, double half_width);
    /// Bounding box of `points` grown by `pad` on every side.
    static Box around(std::span<const Vec> points, double pad);

    std::size_t dim() const noexcept { return lo.size(); }
    Vec sample(RngStream& rng) const;
    Vec clamp(Vec x) const;
};

struct BoundEstimates {
    double lipschitz = 0.0;
    double guidance_bound = 0.0;
    double velocity_bound = 0.0;
    Box region;
    std::size_t n_probes = 0;
    std::uint64_t seed = 0;
};

/// Max over sampled pairs of |v(x) - v(x')| / |x - x'|, taken over every t in
/// t_grid and both `cond` and null. Even pairs are uniform in the box; odd
/// pairs displace x by a random direction with length log-uniform in
/// [1e-3, 1e-1]. Pair i draws from rng.split(i), so larger n_pairs only adds pairs.
double estimate_lipschitz(const VelocityField& field, const Box& region, std::span<const double> t_grid,
                          Condition cond, std::size_t n_pairs, const RngStream& rng);

struct GuidanceBounds {
    /// max |v_c - v_u|
    double guidance_bound = 0.0;
    /// max |v_c|
    double velocity_bound = 0.0;
};

/// Empirical maxima over probes x ~ U(region), t = t_grid[i % size]. Probe i
/// draws from rng.split(i). When refine_starts > 0, the best probes seed a
/// pattern search (per coordinate, step halving) that can only raise the maxima.
GuidanceBounds estimate_guidance_bounds(const VelocityField& field, const Box& region, std::span<const double> t_grid,
                                        Condition y, std::size_t n_probes, const RngStream& rng,
                                        std::size_t refine_starts = 0);

struct BoundReport {
    std::vector<double> lhs;
    std::vector<double> rhs;
    double dt = 0.0;
    double max_lhs = 0.0;
    double max_ratio = 0.0;
    std::size_t violations = 0;
    double violation_rate = 0.0;
    /// Step-deviation check only: worst |deviation - dt alpha |dv|| / (dt alpha |dv|).
    double max_equality_rel_error = 0.0;
    /// Step-deviation check only: worst | |x_next - x_ref| - dt alpha |dv| | over reference states.
    double max_state_abs_error = 0.0;
    std::size_t state_checks = 0;
};

struct GuidanceDriftTerms {
    /// |dv(x~, t - dt/2) - dv(x, t)|
    double literal = 0.0;
    /// |dv(x~, t) - dv(x, t)|
    double common_time = 0.0;
};

GuidanceDriftTerms guidance_drift_terms(const VelocityField& field, const Vec& x, double t, double dt, Condition y);

/// n on-path states x_t with t ~ U[t_min, 1].
std::vector<PathPoint> draw_on_path_states(const ConditionalDataset& dataset, Condition y, std::size_t n, double t_min,
                                           RngStream rng);

/// LHS over on-path states against RHS = L * V_max * dt.
BoundReport check_guidance_drift(const VelocityField& field, std::span<const PathPoint> states, Condition y, double dt,
                         const BoundEstimates& estimates);

BoundReport check_guidance_drift(const VelocityField& field, const ConditionalDataset& dataset, Condition y, double dt,
                         std::size_t n_states, const RngStream& rng, const BoundEstimates& estimates);

struct ScalingReport {
    std::vector<double> dts;
    std::vector<double> max_literal;
    std::vector<double> max_common_time;
    /// Least-squares slope of log(max) against log(dt); NaN if any max is 0.
    double slope_literal = 0.0;
    double slope_common_time = 0.0;
};

ScalingReport guidance_drift_scaling(const VelocityField& field, std::span<const PathPoint> states, Condition y,
                             std::span<const double> dts);

double loglog_slope(std::span<const double> xs, std::span<const double> ys);

/// Per step: equality deviation = dt alpha |dv| and inequality deviation <= dt alpha B.
BoundReport check_step_deviation(std::span<const Trajectory> trajectories, double guidance_bound);

struct DistanceStats {
    double mean = 0.0;
    double median = 0.0;
    double p95 = 0.0;
    double max = 0.0;
};

/// Linear interpolation between order statistics (q in [0, 1]).
double quantile(std::vector<double> values, double q);

/// Distance from each point to its nearest bank entry (brute force).
std::vector<double> nearest_distances(std::span<const Vec> points, std::span<const Vec> bank);

DistanceStats summarize_distances(const std::vector<double>& distances);

/// Nearest-neighbour distance from each point to the bank.
DistanceStats manifold_distance(std::span<const Vec> points, std::span<const Vec> bank);

/// M exact samples of x_t = (1 - t) x0 + t x1 for label y.
std::vector<Vec> path_bank(const ConditionalDataset& dataset, Condition y, double t, std::size_t m, RngStream rng);

/// M states at time t obtained by Euler-integrating `field` (conditional on y)
/// from fresh noise with `steps_per_unit` uniform steps per unit time.
std::vector<Vec> flow_bank(const VelocityField& field, Condition y, double t, std::size_t m,
                           std::size_t steps_per_unit, std::uint64_t seed);

/// Mean over n_projections random unit directions of the exact 1-D
/// 2-Wasserstein distance between the projected samples.
double sliced_wasserstein(std::span<const Vec> a, std::span<const Vec> b, std::size_t n_projections,
                          const RngStream& rng);

/// Exact 1-D W2 between two empirical distributions (sorted quantile functions).
double wasserstein_1d(std::vector<double> a, std::vector<double> b);

/// 2 E|a - b| - E|a - a'| - E|b - b'| over all ordered pairs (V-statistic).
double energy_distance(std::span<const Vec> a, std::span<const Vec> b);

struct DeviationPoint {
    double t = 0.0;
    double sliced_w = 0.0;
    std::optional<double> kl;
};

/// Per-time distance between the sampled states and the true p_t(.|y).
/// Gaussian-single datasets get exact marginal references at every grid time
/// plus a 64x64 histogram KL (2-D only); other datasets only at t = 0.
std::vector<DeviationPoint> distributional_deviation(std::span<const Trajectory> trajectories,
                                                     const ConditionalDataset& dataset, Condition y,
                                                     std::span<const double> t_grid, std::size_t n_projections,
                                                     const RngStream& rng);

/// KL(sample histogram || exact bin mass), 64x64 bins over mean +- 3.29 sd,
/// additive smoothing 1e-9. Points outside the box are ignored.
double histogram_kl(std::span<const Vec> points, const GaussianMarginal& marginal);

/// Composite Simpson quadrature of alpha over [0, 1].
double integrate_schedule(const AlphaSchedule& schedule, std::size_t intervals);

} // namespace rectflow
