#include "rectflow/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace rectflow {

std::string to_string(Condition c)
{
    return c.is_null() ? std::string("null") : std::to_string(c.label());
}

const char* dataset_kind_name(DatasetKind kind)
{
    switch (kind) {
    case DatasetKind::GaussianSingle: return "gaussian_single";
    case DatasetKind::GaussianMixtureK: return "gaussian_mixture";
    case DatasetKind::TwoMoonsLabeled: return "two_moons";
    case DatasetKind::Checkerboard: return "checkerboard";
    }
    return "unknown";
}

namespace {

constexpr double kCheckerCell = 2.0;

Vec checker_cell_origin(std::size_t label)
{
    std::size_t seen = 0;
    for (std::size_t row = 0; row < 4; ++row) {
        for (std::size_t col = 0; col < 4; ++col) {
            if ((row + col) % 2 != 0) continue;
            if (seen++ == label) {
                return Vec{-4.0 + kCheckerCell * static_cast<double>(col),
                           4.0 - kCheckerCell * static_cast<double>(row + 1)};
            }
        }
    }
    throw LabelError("checkerboard label out of range");
}

Vec moon_point(std::size_t label, double angle)
{
    // Unit-radius moons, then scaled by 2 and centred on the origin.
    double px = std::cos(angle);
    double py = std::sin(angle);
    if (label == 1) {
        px = 1.0 - px;
        py = 0.5 - py;
    }
    return Vec{2.0 * (px - 0.5), 2.0 * (py - 0.25)};
}

double gaussian_log_weight(const Vec& x, const Vec& centre, double variance)
{
    return -0.5 * squared_distance(x, centre) / variance;
}

Vec single_gaussian_velocity(const Vec& mean, double sigma, const Vec& x, double t)
{
    const double s2 = sigma * sigma;
    const double var_t = (1.0 - t) * (1.0 - t) * s2 + t * t;
    if (var_t == 0.0) return x; // t == 0 with degenerate data: x_t = x0 exactly
    const double gain = ((1.0 - t) * s2 - t) / var_t;
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = mean[i] + gain * (x[i] - (1.0 - t) * mean[i]);
    }
    return out;
}

} // namespace

ConditionalDataset::ConditionalDataset(DatasetKind kind, std::size_t dim, std::vector<Vec> means,
                                       double sigma_data)
    : kind_(kind), dim_(dim), means_(std::move(means)), sigma_data_(sigma_data)
{
    if (dim_ == 0) throw DimensionError("dataset dimension must be >= 1");
    if (means_.empty()) throw InputError("dataset needs at least one label");
    for (const Vec& m : means_) {
        if (m.size() != dim_) throw DimensionError("dataset mean has wrong dimension");
        if (!m.all_finite()) throw InputError("dataset mean must be finite");
    }
    if (!(sigma_data_ >= 0.0) || !std::isfinite(sigma_data_)) {
        throw InputError("sigma_data must be finite and non-negative");
    }
}

ConditionalDataset ConditionalDataset::gaussian_single(Vec mean, double sigma_data)
{
    const std::size_t dim = mean.size();
    return ConditionalDataset(DatasetKind::GaussianSingle, dim, {std::move(mean)}, sigma_data);
}

ConditionalDataset ConditionalDataset::gaussian_mixture(std::size_t num_labels, double radius,
                                                        double sigma_data, std::size_t dim)
{
    if (dim < 2) throw DimensionError("circle mixture needs dim >= 2");
    if (num_labels == 0) throw InputError("mixture needs K >= 1");
    std::vector<Vec> means;
    for (std::size_t k = 0; k < num_labels; ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(num_labels);
        Vec m(dim);
        m[0] = radius * std::cos(angle);
        m[1] = radius * std::sin(angle);
        means.push_back(std::move(m));
    }
    return gaussian_mixture(std::move(means), sigma_data);
}

ConditionalDataset ConditionalDataset::gaussian_mixture(std::vector<Vec> means, double sigma_data)
{
    if (means.empty()) throw InputError("mixture needs K >= 1");
    for (std::size_t i = 0; i < means.size(); ++i) {
        for (std::size_t j = i + 1; j < means.size(); ++j) {
            if (means[i] == means[j]) throw InputError("mixture means must be pairwise distinct");
        }
    }
    const std::size_t dim = means.front().size();
    return ConditionalDataset(DatasetKind::GaussianMixtureK, dim, std::move(means), sigma_data);
}

ConditionalDataset ConditionalDataset::two_moons(double sigma_data)
{
    const double arc_mean = 2.0 / std::numbers::pi;
    std::vector<Vec> centres{Vec{2.0 * (0.0 - 0.5), 2.0 * (arc_mean - 0.25)},
                             Vec{2.0 * (1.0 - 0.5), 2.0 * (0.5 - arc_mean - 0.25)}};
    return ConditionalDataset(DatasetKind::TwoMoonsLabeled, 2, std::move(centres), sigma_data);
}

ConditionalDataset ConditionalDataset::checkerboard()
{
    std::vector<Vec> centres;
    for (std::size_t y = 0; y < 8; ++y) {
        Vec origin = checker_cell_origin(y);
        centres.push_back(Vec{origin[0] + 0.5 * kCheckerCell, origin[1] + 0.5 * kCheckerCell});
    }
    return ConditionalDataset(DatasetKind::Checkerboard, 2, std::move(centres), 0.0);
}

void ConditionalDataset::check_label(Condition y) const
{
    if (!y.is_null() && static_cast<std::size_t>(y.label()) >= means_.size()) {
        throw LabelError("label " + std::to_string(y.label()) + " outside 0.." +
                         std::to_string(means_.size() - 1));
    }
}

Vec ConditionalDataset::sample_data(Condition y, RngStream& rng) const
{
    check_label(y);
    std::size_t label = 0;
    if (y.is_null()) {
        label = std::min<std::size_t>(static_cast<std::size_t>(rng.uniform() * static_cast<double>(means_.size())),
                                      means_.size() - 1);
    } else {
        label = static_cast<std::size_t>(y.label());
    }

    switch (kind_) {
    case DatasetKind::GaussianSingle:
    case DatasetKind::GaussianMixtureK: {
        Vec noise = sample_standard_normal(rng, dim_);
        return axpy(means_[label], sigma_data_, noise);
    }
    case DatasetKind::TwoMoonsLabeled: {
        const double angle = rng.uniform(0.0, std::numbers::pi);
        Vec noise = sample_standard_normal(rng, 2);
        return axpy(moon_point(label, angle), sigma_data_, noise);
    }
    case DatasetKind::Checkerboard: {
        const Vec origin = checker_cell_origin(label);
        const double u = rng.uniform();
        const double v = rng.uniform();
        return Vec{origin[0] + kCheckerCell * u, origin[1] + kCheckerCell * v};
    }
    }
    throw UnsupportedError("unknown dataset kind");
}

std::pair<Vec, Vec> sample_pair(const ConditionalDataset& dataset, Condition y, RngStream& rng)
{
    Vec x0 = dataset.sample_data(y, rng);
    Vec x1 = sample_standard_normal(rng, dataset.dim());
    return {std::move(x0), std::move(x1)};
}

Vec interpolate(const Vec& x0, const Vec& x1, double t)
{
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("interpolate: t=" + std::to_string(t) + " outside [0,1]");
    if (x0.size() != x1.size()) throw DimensionError("interpolate: length mismatch");
    Vec out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = (1.0 - t) * x0[i] + t * x1[i];
    return out;
}

Vec target_velocity(const Vec& x0, const Vec& x1) { return x0 - x1; }

PathPoint sample_path_point(const ConditionalDataset& dataset, Condition y, RngStream& rng, double t_min)
{
    const double t = rng.uniform(t_min, 1.0);
    auto [x0, x1] = sample_pair(dataset, y, rng);
    Vec x_t = interpolate(x0, x1, t);
    return PathPoint{std::move(x_t), t, std::move(x0), std::move(x1), y};
}

Vec oracle_velocity(const ConditionalDataset& dataset, const Vec& x, double t, Condition y)
{
    if (!dataset.is_gaussian()) {
        throw UnsupportedError(std::string("oracle velocity unavailable for ") + dataset_kind_name(dataset.kind()));
    }
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("oracle_velocity: t outside [0,1]");
    if (x.size() != dataset.dim()) throw DimensionError("oracle_velocity: wrong state dimension");
    dataset.check_label(y);

    const auto& means = dataset.means();
    const double sigma = dataset.sigma_data();
    if (!y.is_null()) return single_gaussian_velocity(means[static_cast<std::size_t>(y.label())], sigma, x, t);
    if (means.size() == 1) return single_gaussian_velocity(means.front(), sigma, x, t);

    const double var_t = (1.0 - t) * (1.0 - t) * sigma * sigma + t * t;
    std::vector<double> log_w(means.size());
    if (var_t == 0.0) {
        // Degenerate: the posterior is a point mass on the nearest mean.
        std::fill(log_w.begin(), log_w.end(), -INFINITY);
        std::size_t best = 0;
        for (std::size_t k = 1; k < means.size(); ++k) {
            if (squared_distance(x, means[k]) < squared_distance(x, means[best])) best = k;
        }
        log_w[best] = 0.0;
    } else {
        for (std::size_t k = 0; k < means.size(); ++k) {
            log_w[k] = gaussian_log_weight(x, (1.0 - t) * means[k], var_t);
        }
    }
    const double peak = *std::max_element(log_w.begin(), log_w.end());
    double total = 0.0;
    for (double& w : log_w) {
        w = std::exp(w - peak);
        total += w;
    }
    Vec out(x.size());
    for (std::size_t k = 0; k < means.size(); ++k) {
        if (log_w[k] == 0.0) continue;
        out += (log_w[k] / total) * single_gaussian_velocity(means[k], sigma, x, t);
    }
    return out;
}

GaussianMarginal oracle_marginal(const ConditionalDataset& dataset, double t, Condition y)
{
    if (dataset.kind() != DatasetKind::GaussianSingle) {
        throw UnsupportedError("oracle marginal requires gaussian_single");
    }
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("oracle_marginal: t outside [0,1]");
    dataset.check_label(y);
    const double s2 = dataset.sigma_data() * dataset.sigma_data();
    return GaussianMarginal{(1.0 - t) * dataset.means().front(), (1.0 - t) * (1.0 - t) * s2 + t * t};
}

OracleField::OracleField(const ConditionalDataset& dataset) : dataset_(dataset)
{
    if (!dataset_.is_gaussian()) throw UnsupportedError("oracle field requires a Gaussian dataset");
}

} // namespace rectflow
