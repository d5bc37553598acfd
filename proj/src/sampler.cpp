#include "rectflow/sampler.hpp"

#include <cmath>
#include <string>

namespace rectflow {

namespace {

constexpr std::uint64_t kChainStream = 0;

} // namespace

std::vector<double> SamplerConfig::grid() const
{
    if (n_steps == 0) throw ConfigError("n_steps must be >= 1");
    if (time_grid.empty()) {
        std::vector<double> out(n_steps + 1);
        for (std::size_t k = 0; k <= n_steps; ++k) {
            out[k] = 1.0 - static_cast<double>(k) / static_cast<double>(n_steps);
        }
        return out;
    }
    if (time_grid.size() != n_steps + 1) {
        throw ConfigError("time_grid needs n_steps + 1 = " + std::to_string(n_steps + 1) + " entries");
    }
    if (time_grid.front() != 1.0 || time_grid.back() != 0.0) throw ConfigError("time_grid must run from 1 to 0");
    for (std::size_t k = 1; k < time_grid.size(); ++k) {
        if (!(time_grid[k] < time_grid[k - 1])) throw ConfigError("time_grid must be strictly decreasing");
    }
    return time_grid;
}

Vec ode_update(const Vec& x, const Vec& velocity, double dt, std::size_t step)
{
    if (!(dt > 0.0)) throw ScheduleError("ode_update: dt must be > 0");
    Vec out = axpy(x, dt, velocity);
    if (!out.all_finite()) throw NumericError("non-finite state after ODE update", step);
    return out;
}

Vec conditional_reference_step(const VelocityField& field, const Vec& x, double t, double dt, Condition y)
{
    return ode_update(x, field.velocity(x, t, y), dt);
}

RngStream chain_stream(std::uint64_t seed, std::size_t chain)
{
    return RngStream(seed, kChainStream).split(chain);
}

SampleResult sample(const VelocityField& field, const GuidanceStrategy& strategy, std::span<const Condition> labels,
                    std::size_t n_chains, const SamplerConfig& config)
{
    validate(strategy);
    if (n_chains == 0) throw ConfigError("n_chains must be >= 1");
    if (labels.empty()) throw ConfigError("at least one label required");
    const std::vector<double> grid = config.grid();
    const std::size_t dim = field.dim();
    const bool record = config.record_trajectory || config.record_reference;

    SampleResult result;
    for (std::size_t chain = 0; chain < n_chains; ++chain) {
        const Condition y = labels[chain % labels.size()];
        RngStream rng = chain_stream(config.seed, chain);
        ChainState state;
        Trajectory traj;
        traj.label = y;
        std::uint64_t evaluations = 0;
        Vec x = sample_standard_normal(rng, dim);
        if (record) {
            traj.times.push_back(grid[0]);
            traj.states.push_back(x);
        }

        try {
            for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
                const double t = grid[k];
                const double dt = grid[k] - grid[k + 1];
                GuidedVelocity step = guided_velocity(field, strategy, x, t, dt, y, state, rng);
                evaluations += step.diagnostics.nfe;

                Vec next = ode_update(x, step.velocity, dt, k);
                const double t_next = grid[k + 1];
                const bool heun_ok = config.integrator == Integrator::Heun && t_next > 0.0 &&
                                     (!std::holds_alternative<guidance::RectCfgPP>(strategy) || t_next - 0.5 * dt >= 0.0);
                if (heun_ok) {
                    ChainState probe_state = state;
                    GuidedVelocity second = guided_velocity(field, strategy, next, t_next, dt, y, probe_state, rng);
                    evaluations += second.diagnostics.nfe;
                    step.diagnostics.nfe += second.diagnostics.nfe;
                    next = ode_update(x, 0.5 * (step.velocity + second.velocity), dt, k);
                }

                if (config.record_reference) {
                    traj.reference_states.push_back(ode_update(x, field.velocity(x, t, y), dt, k));
                    ++evaluations;
                }
                x = std::move(next);
                if (record) {
                    traj.times.push_back(t_next);
                    traj.states.push_back(x);
                    traj.diagnostics.push_back(step.diagnostics);
                }
            }
        } catch (const NumericError& err) {
            result.field_evaluations += evaluations;
            if (config.strict) throw ChainFailure(chain, err);
            ++result.failed_chains;
            continue;
        }

        result.field_evaluations += evaluations;
        result.final_points.push_back(std::move(x));
        result.chain_ids.push_back(chain);
        result.labels.push_back(y);
        if (record) result.trajectories.push_back(std::move(traj));
    }
    return result;
}

SampleResult sample(const VelocityField& field, const GuidanceStrategy& strategy, Condition y, std::size_t n_chains,
                    const SamplerConfig& config)
{
    const Condition labels[] = {y};
    return sample(field, strategy, std::span<const Condition>(labels), n_chains, config);
}

} // namespace rectflow
