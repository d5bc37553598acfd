#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rectflow/numerics.hpp"
#include "rectflow/velocity_field.hpp"

namespace rectflow {

struct MlpArchitecture {
    std::size_t dim = 2;
    std::size_t num_labels = 1;
    std::size_t embed_dim = 8;
    std::vector<std::size_t> hidden{64, 64, 64};

    std::size_t input_width() const noexcept { return dim + 1 + embed_dim; }
    std::size_t parameter_count() const;
    void validate() const;

    friend bool operator==(const MlpArchitecture&, const MlpArchitecture&) = default;
};

/// One training example for `backward`: the gradient of 0.5 * |residual|^2
/// w.r.t. the parameters, where residual = forward(x, t, cond) - target.
struct GradientItem {
    Vec x;
    double t;
    Condition cond;
    Vec residual;
};

/// Conditional velocity MLP: input [x, t, embed(cond)], SiLU hidden layers,
/// linear output of width dim.
///
/// Parameters live in one flat array, in this order:
///   embedding table, (num_labels + 1) rows x embed_dim, row-major; the last
///     row is the learned null-condition embedding;
///   then for each layer l (hidden layers followed by the output layer):
///     weights, out_l x in_l, row-major;
///     biases, out_l.
class MlpVelocityField final : public VelocityField {
public:
    /// All-zero parameters.
    explicit MlpVelocityField(MlpArchitecture arch);
    MlpVelocityField(MlpArchitecture arch, std::vector<double> params);

    /// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); embedding rows ~ U(-1, 1).
    static MlpVelocityField initialized(MlpArchitecture arch, std::uint64_t seed);

    const MlpArchitecture& architecture() const noexcept { return arch_; }
    std::size_t dim() const override { return arch_.dim; }

    Vec velocity(const Vec& x, double t, Condition c) const override { return forward(x, t, c); }
    Vec forward(const Vec& x, double t, Condition c) const;
    std::vector<Vec> forward_batch(std::span<const Vec> xs, std::span<const double> ts,
                                   std::span<const Condition> conds) const;

    /// Summed gradient over the batch, same layout as params().
    std::vector<double> backward(std::span<const GradientItem> batch) const;
    /// Accumulates into `grad` (must have parameter_count() entries).
    void accumulate_gradient(const GradientItem& item, std::span<double> grad) const;

    std::span<const double> params() const noexcept { return params_; }
    std::span<double> mutable_params() noexcept { return params_; }

    std::size_t embedding_offset(Condition c) const;

private:
    struct Layer {
        std::size_t in;
        std::size_t out;
        std::size_t weight_offset;
        std::size_t bias_offset;
    };

    void build_layout();
    void check_inputs(const Vec& x, double t, Condition c) const;
    void fill_input(const Vec& x, double t, Condition c, std::span<double> input) const;

    MlpArchitecture arch_;
    std::vector<double> params_;
    std::vector<Layer> layers_;
};

struct TrainingMetadata {
    std::uint64_t epochs = 0;
    double final_loss = 0.0;
    std::uint64_t seed = 0;

    friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
    MlpVelocityField field;
    TrainingMetadata metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian layout:
///   "FGV1" | u32 version | u32 dim | u32 num_labels | u32 embed_dim
///   | u32 n_hidden | u32 widths[n_hidden]
///   | u64 epochs | f64 final_loss | u64 seed
///   | u64 n_params | f64 params[n_params]
std::vector<std::uint8_t> save_checkpoint(const MlpVelocityField& field, const TrainingMetadata& metadata);
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint_file(const std::filesystem::path& path, const MlpVelocityField& field,
                          const TrainingMetadata& metadata);
Checkpoint load_checkpoint_file(const std::filesystem::path& path);

} // namespace rectflow
