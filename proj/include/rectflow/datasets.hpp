#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "rectflow/numerics.hpp"
#include "rectflow/velocity_field.hpp"

namespace rectflow {

enum class DatasetKind { GaussianSingle, GaussianMixtureK, TwoMoonsLabeled, Checkerboard };

const char* dataset_kind_name(DatasetKind kind);

/// Conditional toy distribution p_0(. | y) over labels 0..K-1.
///
/// Gaussian kinds put label y on N(mu_y, sigma_data^2 I). The two-moons kind
/// gives label 0 the upper arc and label 1 the lower arc (with Gaussian jitter
/// of std sigma_data). The checkerboard kind splits [-4, 4]^2 into 4x4 cells;
/// label y is uniform over the y-th dark cell in row-major order (K = 8).
class ConditionalDataset {
public:
    static ConditionalDataset gaussian_single(Vec mean, double sigma_data);
    /// K means evenly spaced on a circle of `radius` in the first two coordinates.
    static ConditionalDataset gaussian_mixture(std::size_t num_labels, double radius, double sigma_data,
                                               std::size_t dim = 2);
    static ConditionalDataset gaussian_mixture(std::vector<Vec> means, double sigma_data);
    static ConditionalDataset two_moons(double sigma_data);
    static ConditionalDataset checkerboard();

    DatasetKind kind() const noexcept { return kind_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t num_labels() const noexcept { return means_.size(); }
    double sigma_data() const noexcept { return sigma_data_; }
    /// Component means for Gaussian kinds; region centres otherwise.
    const std::vector<Vec>& means() const noexcept { return means_; }
    bool is_gaussian() const noexcept
    {
        return kind_ == DatasetKind::GaussianSingle || kind_ == DatasetKind::GaussianMixtureK;
    }

    void check_label(Condition y) const;

    Vec sample_data(Condition y, RngStream& rng) const;

private:
    ConditionalDataset(DatasetKind kind, std::size_t dim, std::vector<Vec> means, double sigma_data);

    DatasetKind kind_;
    std::size_t dim_;
    std::vector<Vec> means_;
    double sigma_data_;
};

struct PathPoint {
    Vec x_t;
    double t;
    Vec x0;
    Vec x1;
    Condition y;
};

/// x0 ~ p_0(.|y) then x1 ~ N(0, I), both drawn from `rng` in that order.
/// The null condition draws the label uniformly first.
std::pair<Vec, Vec> sample_pair(const ConditionalDataset& dataset, Condition y, RngStream& rng);

/// (1 - t) x0 + t x1.
Vec interpolate(const Vec& x0, const Vec& x1, double t);

/// Regression target x0 - x1 (points from noise toward data).
Vec target_velocity(const Vec& x0, const Vec& x1);

/// t ~ U[t_min, 1], (x0, x1) ~ sample_pair, x_t = interpolate.
PathPoint sample_path_point(const ConditionalDataset& dataset, Condition y, RngStream& rng,
                            double t_min = 0.0);

/// E[x0 - x1 | x_t = x, y] for Gaussian data.
///
/// For label y with mean mu and std s, x_t is Gaussian with mean (1-t) mu and
/// per-coordinate variance var_t = (1-t)^2 s^2 + t^2, and
///   E[x0 - x1 | x_t = x] = mu + ((1-t) s^2 - t) / var_t * (x - (1-t) mu).
/// The null condition averages the per-label fields with posterior weights
/// proportional to N(x; (1-t) mu_k, var_t I) under a uniform label prior.
Vec oracle_velocity(const ConditionalDataset& dataset, const Vec& x, double t, Condition y);

struct GaussianMarginal {
    Vec mean;
    double variance;
};

/// Exact marginal of x_t given y: N((1-t) mu_y, ((1-t)^2 s^2 + t^2) I).
GaussianMarginal oracle_marginal(const ConditionalDataset& dataset, double t, Condition y);

/// The closed-form marginal velocity as a VelocityField.
class OracleField final : public VelocityField {
public:
    explicit OracleField(const ConditionalDataset& dataset);

    std::size_t dim() const override { return dataset_.dim(); }
    Vec velocity(const Vec& x, double t, Condition c) const override
    {
        return oracle_velocity(dataset_, x, t, c);
    }

private:
    ConditionalDataset dataset_;
};

} // namespace rectflow
