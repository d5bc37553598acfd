#include "rectflow/numerics.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace rectflow {

namespace {

void require_same_size(const Vec& a, const Vec& b, const char* op)
{
    if (a.size() != b.size()) {
        throw DimensionError(std::string(op) + ": length mismatch " + std::to_string(a.size()) +
                             " vs " + std::to_string(b.size()));
    }
}

std::uint32_t mulhi32(std::uint32_t a, std::uint32_t b, std::uint32_t& lo)
{
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    lo = static_cast<std::uint32_t>(product);
    return static_cast<std::uint32_t>(product >> 32);
}

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

} // namespace

Vec& Vec::operator+=(const Vec& other)
{
    require_same_size(*this, other, "add");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

Vec& Vec::operator-=(const Vec& other)
{
    require_same_size(*this, other, "subtract");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
}

Vec& Vec::operator*=(double scale)
{
    for (double& v : values_) v *= scale;
    return *this;
}

bool Vec::all_finite() const noexcept
{
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Vec operator+(Vec a, const Vec& b) { return a += b; }
Vec operator-(Vec a, const Vec& b) { return a -= b; }
Vec operator*(double scale, Vec a) { return a *= scale; }
Vec operator*(Vec a, double scale) { return a *= scale; }

Vec axpy(const Vec& a, double scale, const Vec& b)
{
    require_same_size(a, b, "axpy");
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + scale * b[i];
    return out;
}

double dot(const Vec& a, const Vec& b)
{
    require_same_size(a, b, "dot");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

double l2_norm(const Vec& a) { return std::sqrt(dot(a, a)); }

double squared_distance(const Vec& a, const Vec& b)
{
    require_same_size(a, b, "distance");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sum += diff * diff;
    }
    return sum;
}

double distance(const Vec& a, const Vec& b) { return std::sqrt(squared_distance(a, b)); }

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key)
{
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kPhiloxW0;
            key[1] += kPhiloxW1;
        }
        std::uint32_t lo0 = 0;
        std::uint32_t lo1 = 0;
        const std::uint32_t hi0 = mulhi32(kPhiloxM0, ctr[0], lo0);
        const std::uint32_t hi1 = mulhi32(kPhiloxM1, ctr[2], lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_id_(stream_id) {}

RngStream RngStream::split(std::uint64_t child) const
{
    return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(child)));
}

void RngStream::refill()
{
    const std::array<std::uint32_t, 4> ctr{
        static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
        static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)};
    const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(seed_),
                                           static_cast<std::uint32_t>(seed_ >> 32)};
    const auto out = philox4x32(ctr, key);
    ++counter_;
    buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
    buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    buffered_ = 2;
}

std::uint64_t RngStream::next_u64()
{
    if (buffered_ == 0) refill();
    return buffer_[2 - buffered_--];
}

double RngStream::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal()
{
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec sample_standard_normal(RngStream& rng, std::size_t dim)
{
    Vec out(dim);
    for (std::size_t i = 0; i < dim; i += 2) {
        const double u1 = 1.0 - rng.uniform();
        const double u2 = rng.uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        out[i] = radius * std::cos(angle);
        if (i + 1 < dim) out[i + 1] = radius * std::sin(angle);
    }
    return out;
}

Vec sample_unit_direction(RngStream& rng, std::size_t dim)
{
    for (;;) {
        Vec v = sample_standard_normal(rng, dim);
        const double norm = l2_norm(v);
        if (norm > 1e-12) return (1.0 / norm) * std::move(v);
    }
}

} // namespace rectflow
