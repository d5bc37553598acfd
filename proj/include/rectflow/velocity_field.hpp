#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>

#include "rectflow/numerics.hpp"

namespace rectflow {

/// A class label or the null condition used for unconditional evaluation.
class Condition {
public:
    static constexpr Condition null() noexcept { return Condition(-1); }
    static Condition label(int y)
    {
        if (y < 0) throw LabelError("label must be non-negative, got " + std::to_string(y));
        return Condition(y);
    }

    constexpr bool is_null() const noexcept { return label_ < 0; }
    /// Only meaningful when !is_null().
    constexpr int label() const noexcept { return label_; }

    friend constexpr bool operator==(Condition, Condition) = default;

private:
    constexpr explicit Condition(int y) noexcept : label_(y) {}
    int label_;
};

std::string to_string(Condition c);

/// (x, t, condition) -> velocity in R^d. Velocities point toward the data end
/// (t = 0), so an Euler step from t to t - dt is x + dt * v.
class VelocityField {
public:
    virtual ~VelocityField() = default;

    virtual std::size_t dim() const = 0;
    virtual Vec velocity(const Vec& x, double t, Condition c) const = 0;
};

/// Wraps a callable; handy for analytic fields in tests and verification.
class FunctionField final : public VelocityField {
public:
    using Fn = std::function<Vec(const Vec&, double, Condition)>;

    FunctionField(std::size_t dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

    std::size_t dim() const override { return dim_; }
    Vec velocity(const Vec& x, double t, Condition c) const override { return fn_(x, t, c); }

private:
    std::size_t dim_;
    Fn fn_;
};

/// Counts evaluations of an inner field. Thread-safe counter.
class CountingField final : public VelocityField {
public:
    explicit CountingField(const VelocityField& inner) : inner_(inner) {}

    std::size_t dim() const override { return inner_.dim(); }
    Vec velocity(const Vec& x, double t, Condition c) const override
    {
        count_.fetch_add(1, std::memory_order_relaxed);
        return inner_.velocity(x, t, c);
    }

    std::uint64_t count() const noexcept { return count_.load(); }
    void reset() noexcept { count_.store(0); }

private:
    const VelocityField& inner_;
    mutable std::atomic<std::uint64_t> count_{0};
};

} // namespace rectflow
