#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rectflow/guidance.hpp"
#include "rectflow/numerics.hpp"
#include "rectflow/velocity_field.hpp"

namespace rectflow {

enum class Integrator { Euler, Heun };

struct SamplerConfig {
    std::size_t n_steps = 28;
    /// Optional explicit grid, strictly decreasing from 1 to 0 (n_steps + 1 entries).
    /// Empty means uniform t_k = 1 - k / n_steps.
    std::vector<double> time_grid;
    bool record_trajectory = false;
    bool record_reference = false;
    std::uint64_t seed = 0;
    Integrator integrator = Integrator::Euler;
    /// Strict: any failed chain fails the run. Lenient: failed chains are dropped.
    bool strict = true;

    /// The validated grid, n_steps + 1 entries.
    std::vector<double> grid() const;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<Vec> states;
    std::vector<StepDiagnostics> diagnostics;
    /// reference_states[k] = states[k] + dt_k * v(states[k], t_k, y).
    std::vector<Vec> reference_states;
    Condition label = Condition::null();
};

struct SampleResult {
    /// One per surviving chain, in chain order.
    std::vector<Vec> final_points;
    std::vector<std::size_t> chain_ids;
    std::vector<Condition> labels;
    /// Parallel to final_points when recording; empty otherwise.
    std::vector<Trajectory> trajectories;
    std::size_t failed_chains = 0;
    std::uint64_t field_evaluations = 0;
};

/// x + dt * v. Throws NumericError carrying `step` if the result is not finite.
Vec ode_update(const Vec& x, const Vec& velocity, double dt, std::size_t step = 0);

/// x + dt * v(x, t, y).
Vec conditional_reference_step(const VelocityField& field, const Vec& x, double t, double dt, Condition y);

/// Initial state of chain `chain`: N(0, I) from RngStream(seed, 0).split(chain).
RngStream chain_stream(std::uint64_t seed, std::size_t chain);

/// Integrates each chain from t = 1 to t = 0. Chain i uses labels[i % labels.size()].
/// Reference steps (record_reference) cost one extra evaluation per step and
/// are included in field_evaluations.
SampleResult sample(const VelocityField& field, const GuidanceStrategy& strategy, std::span<const Condition> labels,
                    std::size_t n_chains, const SamplerConfig& config);

SampleResult sample(const VelocityField& field, const GuidanceStrategy& strategy, Condition y,
                    std::size_t n_chains, const SamplerConfig& config);

/// Thrown in strict mode when a chain fails.
class ChainFailure : public NumericError {
public:
    ChainFailure(std::size_t chain, const NumericError& cause)
        : NumericError("chain " + std::to_string(chain) + ": " + cause.what(), cause.step()), chain_(chain)
    {}

    std::size_t chain() const noexcept { return chain_; }

private:
    std::size_t chain_;
};

} // namespace rectflow
