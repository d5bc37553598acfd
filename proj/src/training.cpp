#include "rectflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

namespace rectflow {

namespace {

constexpr std::uint64_t kTrainStream = 0x7EA1;
constexpr std::uint64_t kProbeStream = 0x0AC1E;
constexpr std::size_t kEvalProbes = 2000;

// Squared radius of the ball holding 99% of a standard normal in `dim` dimensions.
double chi2_99(std::size_t dim)
{
    if (dim == 2) return -2.0 * std::log(0.01);
    // Wilson-Hilferty approximation.
    const double k = static_cast<double>(dim);
    const double z = 2.3263478740408408;
    const double c = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
    return k * c * c * c;
}

bool all_finite(std::span<const double> values)
{
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

} // namespace

void TrainConfig::validate() const
{
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) throw ConfigError("p_uncond must lie in [0,1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0,1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam eps must be > 0");
}

std::optional<double> TrainReport::final_loss() const
{
    if (loss_curve.empty()) return std::nullopt;
    return loss_curve.back().value;
}

LossAndGradient cfm_loss(const MlpVelocityField& field, const ConditionalDataset& dataset, std::size_t batch_size,
                         double p_uncond, const RngStream& rng)
{
    if (batch_size == 0) throw InputError("cfm_loss: batch_size must be >= 1");
    if (field.dim() != dataset.dim()) throw DimensionError("model and dataset dimensions differ");

    const double labels = static_cast<double>(dataset.num_labels());
    std::vector<double> grad(field.params().size(), 0.0);
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < batch_size; ++i) {
        RngStream item_rng = rng.split(i);
        const int label = static_cast<int>(
            std::min(item_rng.uniform() * labels, labels - 1.0));
        const Condition y = Condition::label(label);
        const bool drop = item_rng.uniform() < p_uncond;
        const double t = item_rng.uniform();
        auto [x0, x1] = sample_pair(dataset, y, item_rng);
        Vec x_t = interpolate(x0, x1, t);
        const Condition fed = drop ? Condition::null() : y;
        Vec residual = field.forward(x_t, t, fed) - target_velocity(x0, x1);
        loss_sum += dot(residual, residual);
        field.accumulate_gradient(GradientItem{std::move(x_t), t, fed, std::move(residual)}, grad);
    }
    // backward yields the gradient of 0.5 * sum |r|^2; the loss is mean |r|^2.
    const double scale = 2.0 / static_cast<double>(batch_size);
    for (double& g : grad) g *= scale;
    return LossAndGradient{loss_sum / static_cast<double>(batch_size), std::move(grad)};
}

void AdamState::step(std::span<double> params, std::span<const double> grads, const TrainConfig& config)
{
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw DimensionError("adam_step: shape mismatch");
    }
    ++steps_;
    const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = config.beta1 * m_[i] + (1.0 - config.beta1) * g;
        v_[i] = config.beta2 * v_[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = m_[i] / correction1;
        const double v_hat = v_[i] / correction2;
        params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
    }
}

std::vector<PathPoint> oracle_probes(const ConditionalDataset& dataset, Condition y, std::size_t n, RngStream rng)
{
    if (!dataset.is_gaussian()) throw UnsupportedError("oracle probes need a Gaussian dataset");
    dataset.check_label(y);
    const double radius2 = chi2_99(dataset.dim());
    const double s2 = dataset.sigma_data() * dataset.sigma_data();
    std::vector<PathPoint> probes;
    probes.reserve(n);
    while (probes.size() < n) {
        Condition label = y;
        if (y.is_null()) {
            const double k = static_cast<double>(dataset.num_labels());
            label = Condition::label(static_cast<int>(std::min(rng.uniform() * k, k - 1.0)));
        }
        PathPoint p = sample_path_point(dataset, label, rng);
        const double var_t = (1.0 - p.t) * (1.0 - p.t) * s2 + p.t * p.t;
        const Vec& mean = dataset.means()[static_cast<std::size_t>(label.label())];
        if (squared_distance(p.x_t, (1.0 - p.t) * mean) <= radius2 * var_t) probes.push_back(std::move(p));
    }
    return probes;
}

double oracle_rmse(const VelocityField& field, const ConditionalDataset& dataset, std::span<const PathPoint> probes)
{
    if (probes.empty()) return 0.0;
    double sum = 0.0;
    for (const PathPoint& p : probes) {
        sum += squared_distance(field.velocity(p.x_t, p.t, p.y), oracle_velocity(dataset, p.x_t, p.t, p.y));
    }
    return std::sqrt(sum / static_cast<double>(probes.size()));
}

TrainReport train(MlpVelocityField& field, const ConditionalDataset& dataset, const TrainConfig& config)
{
    config.validate();
    if (field.dim() != dataset.dim()) throw DimensionError("model and dataset dimensions differ");
    if (field.architecture().num_labels != dataset.num_labels()) {
        throw LabelError("model label count differs from dataset");
    }

    const auto start = std::chrono::steady_clock::now();
    TrainReport report;
    std::vector<PathPoint> probes;
    if (dataset.is_gaussian() && config.eval_every > 0) {
        probes = oracle_probes(dataset, Condition::null(), kEvalProbes, RngStream(config.seed, kProbeStream));
    }

    AdamState adam(field.params().size());
    const RngStream root(config.seed, kTrainStream);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        LossAndGradient lg = cfm_loss(field, dataset, config.batch_size, config.p_uncond, root.split(epoch));
        if (!std::isfinite(lg.loss) || !all_finite(lg.gradient)) {
            report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            throw TrainingAborted(epoch, std::move(report));
        }
        adam.step(field.mutable_params(), lg.gradient, config);
        report.loss_curve.push_back(CurvePoint{epoch, lg.loss});
        if (!probes.empty() && (epoch + 1) % config.eval_every == 0) {
            report.oracle_rmse_curve.push_back(CurvePoint{epoch, oracle_rmse(field, dataset, probes)});
        }
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

} // namespace rectflow
