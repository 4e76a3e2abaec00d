#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>

namespace vidcap {

// SplitMix64 step. Good enough statistically for data sampling and cheap to
// derive counter-based streams from, which keeps training runs resumable
// without serializing generator state.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
    return splitmix64(s);
}

// Deterministic pseudo-random stream. Every consumer derives its own stream
// from (seed, tag, ids...) so independent parts of a run never share state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
    }

    static Rng stream(std::uint64_t base_seed, std::string_view tag) {
        return Rng(mix_seed(base_seed, fnv1a64(tag)));
    }
    static Rng stream(std::uint64_t base_seed, std::string_view tag, std::uint64_t a) {
        return Rng(mix_seed(mix_seed(base_seed, fnv1a64(tag)), a));
    }
    static Rng stream(std::uint64_t base_seed, std::string_view tag, std::uint64_t a, std::uint64_t b) {
        return Rng(mix_seed(mix_seed(mix_seed(base_seed, fnv1a64(tag)), a), b));
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::int64_t uniform_int(std::int64_t n) {
        return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one fresh draw per call keeps streams position-independent
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::uint64_t state_;
};

}  // namespace vidcap
