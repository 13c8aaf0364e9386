// Deterministic seeded randomness. Everything in the harness that needs a
// random draw goes through splitmix64 or a stateless hash of it, so runs are
// reproducible bit-for-bit from the config seeds alone.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>

namespace sdcforge {

struct SplitMix64 {
    std::uint64_t state = 0;

    constexpr std::uint64_t next() {
        state += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
};

// Stateless mix of a seed and a counter; used for schedule draws keyed by step.
constexpr std::uint64_t hash_mix(std::uint64_t seed, std::uint64_t key) {
    SplitMix64 s{seed ^ (key * 0xD1B54A32D192ED03ull)};
    s.next();
    return s.next();
}

// Uniform in (0, 1], never exactly zero.
constexpr double u64_to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;
}

// Box-Muller stream of standard normals.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : rng_{seed} {}

    float next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = u64_to_unit(rng_.next());
        const double u2 = u64_to_unit(rng_.next());
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = static_cast<float>(r * std::sin(theta));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(theta));
    }

private:
    SplitMix64 rng_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

constexpr std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace sdcforge
