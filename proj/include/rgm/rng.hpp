#pragma once

#include <cmath>
#include <cstdint>

namespace rgm {

// Counter-based generator: the draw sequence is a pure function of
// (seed, stream_id, counter), so independent streams can be derived for
// any (origin, copy) pair without sharing state.
struct RngStream {
    std::uint64_t seed = 0;
    std::uint64_t stream_id = 0;
    std::uint64_t counter = 0;

    RngStream() = default;
    RngStream(std::uint64_t seed_, std::uint64_t stream_id_ = 0)
        : seed(seed_), stream_id(stream_id_) {}

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    std::uint64_t next_u64() {
        std::uint64_t base = splitmix64(seed ^ splitmix64(stream_id + 0x632BE59BD9B4E019ull));
        return splitmix64(base + counter++ * 0x9E3779B97F4A7C15ull);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // standard normal via Box-Muller; always consumes two uniforms
    double next_gaussian() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // uniform integer in [0, n)
    std::uint64_t next_below(std::uint64_t n) {
        return next_u64() % n;
    }
};

} // namespace rgm
