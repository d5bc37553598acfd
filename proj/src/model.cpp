#include "rectflow/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace rectflow {

namespace {

double silu(double z) { return z / (1.0 + std::exp(-z)); }

double silu_derivative(double z)
{
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

// out = W * in + b, W row-major out x in.
void affine(const double* weights, const double* bias, std::size_t in, std::size_t out, const double* input,
            double* output)
{
    for (std::size_t o = 0; o < out; ++o) {
        const double* row = weights + o * in;
        double sum = bias[o];
        for (std::size_t i = 0; i < in; ++i) sum += row[i] * input[i];
        output[o] = sum;
    }
}

class ByteWriter {
public:
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const char* text, std::size_t n) { bytes_.insert(bytes_.end(), text, text + n); }

    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
    std::uint64_t u64() { return take(8); }
    double f64() { return std::bit_cast<double>(u64()); }
    bool exhausted() const noexcept { return pos_ == bytes_.size(); }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    std::uint64_t take(std::size_t n)
    {
        if (remaining() < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += n;
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

constexpr char kMagic[4] = {'F', 'G', 'V', '1'};
constexpr std::uint32_t kMaxWidth = 1u << 16;
constexpr std::uint32_t kMaxLayers = 64;

} // namespace

std::size_t MlpArchitecture::parameter_count() const
{
    std::size_t count = (num_labels + 1) * embed_dim;
    std::size_t in = input_width();
    for (std::size_t width : hidden) {
        count += width * in + width;
        in = width;
    }
    count += dim * in + dim;
    return count;
}

void MlpArchitecture::validate() const
{
    if (dim == 0) throw DimensionError("model dim must be >= 1");
    if (num_labels == 0) throw InputError("model needs at least one label");
    for (std::size_t width : hidden) {
        if (width == 0) throw InputError("hidden widths must be positive");
    }
}

MlpVelocityField::MlpVelocityField(MlpArchitecture arch) : arch_(std::move(arch))
{
    arch_.validate();
    params_.assign(arch_.parameter_count(), 0.0);
    build_layout();
}

MlpVelocityField::MlpVelocityField(MlpArchitecture arch, std::vector<double> params)
    : arch_(std::move(arch)), params_(std::move(params))
{
    arch_.validate();
    if (params_.size() != arch_.parameter_count()) {
        throw DimensionError("expected " + std::to_string(arch_.parameter_count()) + " parameters, got " +
                             std::to_string(params_.size()));
    }
    for (double p : params_) {
        if (!std::isfinite(p)) throw FormatError("non-finite model parameter");
    }
    build_layout();
}

MlpVelocityField MlpVelocityField::initialized(MlpArchitecture arch, std::uint64_t seed)
{
    MlpVelocityField field(std::move(arch));
    RngStream rng(seed, 0x1417);
    const std::size_t embed_count = (field.arch_.num_labels + 1) * field.arch_.embed_dim;
    for (std::size_t i = 0; i < embed_count; ++i) field.params_[i] = rng.uniform(-1.0, 1.0);
    for (const Layer& layer : field.layers_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
        for (std::size_t i = 0; i < layer.in * layer.out; ++i) {
            field.params_[layer.weight_offset + i] = rng.uniform(-bound, bound);
        }
        for (std::size_t i = 0; i < layer.out; ++i) field.params_[layer.bias_offset + i] = rng.uniform(-bound, bound);
    }
    return field;
}

void MlpVelocityField::build_layout()
{
    layers_.clear();
    std::size_t offset = (arch_.num_labels + 1) * arch_.embed_dim;
    std::size_t in = arch_.input_width();
    auto push = [&](std::size_t out) {
        layers_.push_back(Layer{in, out, offset, offset + in * out});
        offset += in * out + out;
        in = out;
    };
    for (std::size_t width : arch_.hidden) push(width);
    push(arch_.dim);
}

std::size_t MlpVelocityField::embedding_offset(Condition c) const
{
    const std::size_t row = c.is_null() ? arch_.num_labels : static_cast<std::size_t>(c.label());
    return row * arch_.embed_dim;
}

void MlpVelocityField::check_inputs(const Vec& x, double t, Condition c) const
{
    if (x.size() != arch_.dim) throw DimensionError("model input has wrong dimension");
    if (!(t >= 0.0 && t <= 1.0)) throw RangeError("model time " + std::to_string(t) + " outside [0,1]");
    if (!c.is_null() && static_cast<std::size_t>(c.label()) >= arch_.num_labels) {
        throw LabelError("label " + std::to_string(c.label()) + " unknown to model with " +
                         std::to_string(arch_.num_labels) + " labels");
    }
}

void MlpVelocityField::fill_input(const Vec& x, double t, Condition c, std::span<double> input) const
{
    std::size_t k = 0;
    for (std::size_t i = 0; i < arch_.dim; ++i) input[k++] = x[i];
    input[k++] = t;
    const double* embed = params_.data() + embedding_offset(c);
    for (std::size_t i = 0; i < arch_.embed_dim; ++i) input[k++] = embed[i];
}

Vec MlpVelocityField::forward(const Vec& x, double t, Condition c) const
{
    check_inputs(x, t, c);
    std::vector<double> current(arch_.input_width());
    fill_input(x, t, c, current);
    std::vector<double> next;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        next.assign(layer.out, 0.0);
        affine(params_.data() + layer.weight_offset, params_.data() + layer.bias_offset, layer.in, layer.out,
               current.data(), next.data());
        if (l + 1 < layers_.size()) {
            for (double& v : next) v = silu(v);
        }
        current.swap(next);
    }
    return Vec(std::move(current));
}

std::vector<Vec> MlpVelocityField::forward_batch(std::span<const Vec> xs, std::span<const double> ts,
                                                 std::span<const Condition> conds) const
{
    if (xs.size() != ts.size() || xs.size() != conds.size()) throw DimensionError("forward_batch: ragged batch");
    std::vector<Vec> out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(forward(xs[i], ts[i], conds[i]));
    return out;
}

void MlpVelocityField::accumulate_gradient(const GradientItem& item, std::span<double> grad) const
{
    check_inputs(item.x, item.t, item.cond);
    if (item.residual.size() != arch_.dim) throw DimensionError("residual has wrong dimension");
    if (grad.size() != params_.size()) throw DimensionError("gradient buffer has wrong size");

    // activations[0] is the input; activations[l + 1] is the output of layer l.
    // pre[l] holds the pre-activation of layer l.
    std::vector<std::vector<double>> activations(layers_.size() + 1);
    std::vector<std::vector<double>> pre(layers_.size());
    activations[0].resize(arch_.input_width());
    fill_input(item.x, item.t, item.cond, activations[0]);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const Layer& layer = layers_[l];
        pre[l].resize(layer.out);
        affine(params_.data() + layer.weight_offset, params_.data() + layer.bias_offset, layer.in, layer.out,
               activations[l].data(), pre[l].data());
        activations[l + 1] = pre[l];
        if (l + 1 < layers_.size()) {
            for (double& v : activations[l + 1]) v = silu(v);
        }
    }

    std::vector<double> delta(item.residual.values().begin(), item.residual.values().end());
    std::vector<double> delta_in;
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const Layer& layer = layers_[l];
        const double* input = activations[l].data();
        double* grad_w = grad.data() + layer.weight_offset;
        double* grad_b = grad.data() + layer.bias_offset;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double d = delta[o];
            grad_b[o] += d;
            double* row = grad_w + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) row[i] += d * input[i];
        }
        delta_in.assign(layer.in, 0.0);
        const double* weights = params_.data() + layer.weight_offset;
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double d = delta[o];
            const double* row = weights + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) delta_in[i] += row[i] * d;
        }
        if (l > 0) {
            for (std::size_t i = 0; i < layer.in; ++i) delta_in[i] *= silu_derivative(pre[l - 1][i]);
        }
        delta.swap(delta_in);
    }

    // delta now holds d(loss)/d(input); the embedding slice feeds the row used.
    double* grad_embed = grad.data() + embedding_offset(item.cond);
    for (std::size_t i = 0; i < arch_.embed_dim; ++i) grad_embed[i] += delta[arch_.dim + 1 + i];
}

std::vector<double> MlpVelocityField::backward(std::span<const GradientItem> batch) const
{
    std::vector<double> grad(params_.size(), 0.0);
    for (const GradientItem& item : batch) accumulate_gradient(item, grad);
    return grad;
}

std::vector<std::uint8_t> save_checkpoint(const MlpVelocityField& field, const TrainingMetadata& metadata)
{
    const MlpArchitecture& arch = field.architecture();
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(arch.dim));
    w.u32(static_cast<std::uint32_t>(arch.num_labels));
    w.u32(static_cast<std::uint32_t>(arch.embed_dim));
    w.u32(static_cast<std::uint32_t>(arch.hidden.size()));
    for (std::size_t width : arch.hidden) w.u32(static_cast<std::uint32_t>(width));
    w.u64(metadata.epochs);
    w.f64(metadata.final_loss);
    w.u64(metadata.seed);
    w.u64(field.params().size());
    for (double p : field.params()) w.f64(p);
    return w.take();
}

Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("checkpoint magic mismatch (expected FGV1)");
    }
    ByteReader r(bytes.subspan(4));
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    MlpArchitecture arch;
    arch.dim = r.u32();
    arch.num_labels = r.u32();
    arch.embed_dim = r.u32();
    const std::uint32_t n_hidden = r.u32();
    if (arch.dim == 0 || arch.dim > kMaxWidth || arch.num_labels == 0 || arch.num_labels > kMaxWidth ||
        arch.embed_dim > kMaxWidth || n_hidden > kMaxLayers) {
        throw FormatError("checkpoint header out of range");
    }
    arch.hidden.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i) {
        const std::uint32_t width = r.u32();
        if (width == 0 || width > kMaxWidth) throw FormatError("checkpoint layer width out of range");
        arch.hidden.push_back(width);
    }
    TrainingMetadata meta;
    meta.epochs = r.u64();
    meta.final_loss = r.f64();
    meta.seed = r.u64();
    const std::uint64_t n_params = r.u64();
    if (n_params != arch.parameter_count()) {
        throw FormatError("checkpoint parameter count " + std::to_string(n_params) + " does not match header");
    }
    if (r.remaining() != n_params * 8) throw FormatError("checkpoint payload size mismatch");
    std::vector<double> params(n_params);
    for (double& p : params) p = r.f64();
    return Checkpoint{MlpVelocityField(std::move(arch), std::move(params)), meta};
}

void save_checkpoint_file(const std::filesystem::path& path, const MlpVelocityField& field,
                          const TrainingMetadata& metadata)
{
    const auto bytes = save_checkpoint(field, metadata);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load_checkpoint(bytes);
}

} // namespace rectflow
