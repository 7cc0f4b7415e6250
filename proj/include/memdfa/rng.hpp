#ifndef MEMDFA_RNG_HPP
#define MEMDFA_RNG_HPP

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace memdfa {

/// Deterministic, splittable pseudorandom generator.
///
/// The core is splitmix64: the state walks a fixed odd increment and every
/// output is the finalizer of the new state. Streams are derived by mixing a
/// 64-bit stream id into the initial state, so (seed, stream) always yields
/// the same sequence regardless of how many other streams were consumed
/// before it. Distribution transforms are implemented here rather than with
/// std::*_distribution, whose output is not pinned by the standard.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : state_(mix(seed + 0x9e3779b97f4a7c15ull) ^ mix(~stream)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        if (!(lo < hi))
            throw std::invalid_argument("Rng::uniform: requires lo < hi");
        return lo + (hi - lo) * next_double();
    }

    /// Box-Muller; draws two uniforms per call, spare discarded so the
    /// consumed-stream length is a pure function of the call count.
    double normal(double mean, double stddev) {
        if (!(stddev > 0.0))
            throw std::invalid_argument("Rng::normal: requires stddev > 0");
        double u1 = 1.0 - next_double();  // (0, 1]
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.28318530717958647692 * u2);
    }

    /// Uniform integer in [0, n), n > 0. Rejection-free modulo is fine here;
    /// n is tiny compared to 2^64 in every use (shuffles, sampling).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

/// Fixed stream-id scheme so every consumer of randomness is reproducible
/// independent of generation order.
namespace streams {
inline std::uint64_t weights(std::size_t layer) { return (1ull << 56) + layer; }
inline std::uint64_t feedback(std::size_t layer) { return (2ull << 56) + layer; }
inline std::uint64_t feedback_iter(std::size_t layer, std::uint64_t iter) {
    return (3ull << 56) + (iter << 16) + layer;
}
inline std::uint64_t shuffle(std::uint64_t epoch) { return (4ull << 56) + epoch; }
inline std::uint64_t synthetic(std::uint64_t k) { return (5ull << 56) + k; }
}  // namespace streams

}  // namespace memdfa

#endif  // MEMDFA_RNG_HPP
