#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rectflow/datasets.hpp"
#include "rectflow/model.hpp"

namespace rectflow {

struct TrainConfig {
    /// Number of optimizer steps; every step draws a fresh batch.
    std::size_t epochs = 2000;
    std::size_t batch_size = 256;
    double learning_rate = 2e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    /// Probability of replacing a label with the null condition.
    double p_uncond = 0.1;
    std::uint64_t seed = 0;
    /// Oracle RMSE is recorded every `eval_every` epochs (0 disables).
    std::size_t eval_every = 100;

    void validate() const;
};

struct CurvePoint {
    std::size_t epoch;
    double value;
};

struct TrainReport {
    std::vector<CurvePoint> loss_curve;
    std::vector<CurvePoint> oracle_rmse_curve;
    double seconds = 0.0;

    std::optional<double> final_loss() const;
};

struct LossAndGradient {
    double loss;
    std::vector<double> gradient;
};

/// Mean over the batch of |v(x_t, t, y~) - (x0 - x1)|^2 with its exact gradient.
/// Per item: y uniform over labels, y~ = null with probability p_uncond,
/// t ~ U[0,1], (x0, x1) ~ sample_pair(y). Item i draws from rng.split(i).
LossAndGradient cfm_loss(const MlpVelocityField& field, const ConditionalDataset& dataset, std::size_t batch_size,
                         double p_uncond, const RngStream& rng);

class AdamState {
public:
    explicit AdamState(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    std::size_t size() const noexcept { return m_.size(); }
    std::uint64_t steps() const noexcept { return steps_; }

    void step(std::span<double> params, std::span<const double> grads, const TrainConfig& config);

private:
    std::vector<double> m_;
    std::vector<double> v_;
    std::uint64_t steps_ = 0;
};

/// Oracle probes: t ~ U[0,1], x_t drawn on the linear path for label y and kept
/// only inside the 99%-mass ball of the exact marginal of x_t.
std::vector<PathPoint> oracle_probes(const ConditionalDataset& dataset, Condition y, std::size_t n, RngStream rng);

/// sqrt(mean |v_theta - v*|^2) over the probes, conditional on each probe's label.
double oracle_rmse(const VelocityField& field, const ConditionalDataset& dataset, std::span<const PathPoint> probes);

/// Thrown when the loss turns non-finite. Carries the report up to the last finite epoch.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(std::size_t epoch, TrainReport partial)
        : NumericError("non-finite loss, last finite epoch " +
                           (epoch == 0 ? std::string("none") : std::to_string(epoch - 1)),
                       epoch),
          report_(std::move(partial))
    {}

    const TrainReport& report() const noexcept { return report_; }

private:
    TrainReport report_;
};

TrainReport train(MlpVelocityField& field, const ConditionalDataset& dataset, const TrainConfig& config);

} // namespace rectflow
