#pragma once

// Counter-based splittable random number generation.
//
// Every random quantity in a simulation is addressed by a key derivation
// path (seed -> individual -> visit -> purpose) plus a draw counter, so any
// draw can be reproduced in isolation: results are independent of thread
// count and evaluation order by construction.
//
// Keys are 64-bit states mixed with the splitmix64 finalizer.  Draws are
// pure functions of (key, counter).

#include <cstdint>

#include <msmsim/special_functions.hpp>

namespace msmsim {

namespace detail {

inline constexpr std::uint64_t golden_gamma = 0x9e3779b97f4a7c15ULL;

// splitmix64 output finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

class rng_key {
public:
    rng_key() : state_(0) {}
    explicit rng_key(std::uint64_t seed)
        : state_(detail::mix64(seed + detail::golden_gamma)) {}

    // Derive an independent child stream.  Chains of child() calls with
    // different indices give statistically unrelated keys, and the
    // derivation is order-sensitive: a.child(x).child(y) != a.child(y).child(x).
    rng_key child(std::uint64_t index) const noexcept {
        rng_key k;
        k.state_ = detail::mix64(state_ ^ detail::mix64((index + 1) * detail::golden_gamma));
        return k;
    }

    std::uint64_t raw() const noexcept { return state_; }

    // Raw 64 random bits for draw number `counter` (counters may be used in
    // any order; each counter value is an independent draw).
    std::uint64_t bits(std::uint64_t counter) const noexcept {
        return detail::mix64(state_ + (counter + 1) * detail::golden_gamma);
    }

    // Uniform on the open interval (0,1): the top 52 bits are centred on the
    // grid (k + 0.5) * 2^-52, so 0 and 1 are unreachable and every value has
    // a valid quantile.
    double uniform_open(std::uint64_t counter) const noexcept {
        const std::uint64_t x = bits(counter);
        return (static_cast<double>(x >> 12) + 0.5) * 0x1.0p-52;
    }

    // Standard normal by inversion; exactly one draw.
    double normal(std::uint64_t counter) const {
        return norm_quantile(uniform_open(counter));
    }

    // Bernoulli(p); exactly one draw, consumed even when p is 0 or 1 so that
    // draw layouts do not depend on parameter values.
    bool bernoulli(std::uint64_t counter, double p) const noexcept {
        return uniform_open(counter) < p;
    }

    friend bool operator==(const rng_key& a, const rng_key& b) noexcept {
        return a.state_ == b.state_;
    }

private:
    std::uint64_t state_;
};

// Sequential convenience wrapper over a key: tracks the next counter.  Draw
// costs are fixed per call (uniform/normal/bernoulli consume one counter) so
// consumers can also compute counter offsets statically.
class rng_stream {
public:
    explicit rng_stream(rng_key key, std::uint64_t start = 0)
        : key_(key), counter_(start) {}

    double uniform_open() { return key_.uniform_open(counter_++); }
    double normal() { return key_.normal(counter_++); }
    bool bernoulli(double p) { return key_.bernoulli(counter_++, p); }

    std::uint64_t counter() const noexcept { return counter_; }
    rng_key key() const noexcept { return key_; }

private:
    rng_key key_;
    std::uint64_t counter_;
};

} // namespace msmsim
