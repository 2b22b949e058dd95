#include "atnlab/rng.hpp"

#include <cmath>
#include <numbers>

#include "atnlab/error.hpp"

namespace atnlab {

std::uint64_t mix64(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t RngStream::next_u64() {
    return mix64(mix64(seed_) ^ (counter_++ * 0xd1b54a32d192ed03ULL));
}

double RngStream::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t RngStream::below(std::uint64_t bound) {
    require(bound > 0, ErrorCode::InvalidArgument, "RngStream::below requires a positive bound");
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t v = next_u64();
    while (v >= limit) {
        v = next_u64();
    }
    return v % bound;
}

double RngStream::normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::fork(std::uint64_t stream_id) const {
    return RngStream(mix64(seed_ ^ mix64(stream_id + 0x632be59bd9b4e019ULL)));
}

}  // namespace atnlab
