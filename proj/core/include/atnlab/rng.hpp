#pragma once

#include <cstdint>

namespace atnlab {

/// Counter-based random stream: draw k of a stream depends only on (seed, k),
/// so identical seed and counter always reproduce identical values on every
/// platform. Not thread-safe; give each thread its own stream.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform01();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
    /// Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal via Box-Muller; consumes two draws.
    double normal();
    bool bernoulli(double p) { return uniform01() < p; }

    /// Independent stream derived from this stream's seed and `stream_id`.
    RngStream fork(std::uint64_t stream_id) const;

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace atnlab
