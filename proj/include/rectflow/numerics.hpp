#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "rectflow/errors.hpp"

namespace rectflow {

/// Fixed-length dense vector of doubles. Holds states, velocities and noise.
class Vec {
public:
    Vec() = default;
    explicit Vec(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
    Vec(std::initializer_list<double> values) : values_(values) {}
    explicit Vec(std::vector<double> values) : values_(std::move(values)) {}

    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    const double* data() const noexcept { return values_.data(); }
    double* data() noexcept { return values_.data(); }

    Vec& operator+=(const Vec& other);
    Vec& operator-=(const Vec& other);
    Vec& operator*=(double scale);

    bool all_finite() const noexcept;

    friend bool operator==(const Vec&, const Vec&) = default;

private:
    std::vector<double> values_;
};

Vec operator+(Vec a, const Vec& b);
Vec operator-(Vec a, const Vec& b);
Vec operator*(double scale, Vec a);
Vec operator*(Vec a, double scale);

/// a + scale * b, evaluated per coordinate as a[i] + (scale * b[i]).
Vec axpy(const Vec& a, double scale, const Vec& b);

// Reductions accumulate strictly left to right so results are reproducible.
double dot(const Vec& a, const Vec& b);
double l2_norm(const Vec& a);
double squared_distance(const Vec& a, const Vec& b);
double distance(const Vec& a, const Vec& b);

/// Philox4x32-10 block function (Random123).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based random stream. A (seed, stream id) pair fully determines the
/// draw sequence; `split` derives child streams for chains, batch items, etc.
///
/// Each Philox block is keyed by the seed and addressed by (counter, stream id),
/// yielding two 64-bit words.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    RngStream split(std::uint64_t child) const;

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    /// One standard normal draw (Box-Muller, cosine branch).
    double normal();

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    std::size_t buffered_ = 0;
};

/// d i.i.d. N(0,1) draws. Pairs of uniforms (u1, u2) go through Box-Muller
/// with u1 mapped to (0, 1]; both the cosine and sine outputs are used, an odd
/// trailing coordinate takes only the cosine output.
Vec sample_standard_normal(RngStream& rng, std::size_t dim);

/// Uniformly distributed unit vector.
Vec sample_unit_direction(RngStream& rng, std::size_t dim);

std::uint64_t splitmix64(std::uint64_t x) noexcept;

} // namespace rectflow
