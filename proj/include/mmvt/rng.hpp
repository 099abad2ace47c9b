#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mmvt {

// Deterministic splitmix64 stream. Every random draw in the project flows
// from one root seed through named forks; no ambient entropy anywhere.
//
// Fork derivation: child seed = mix(root_seed ^ fnv1a(stream) ^ mix(index)).
// Forks depend only on the seed the Rng was constructed with, not on how
// many numbers have been drawn since, so parallel callers can derive
// per-item streams without coordinating.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0,n)
    std::uint64_t range(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Box-Muller; the spare value is discarded to keep draw order trivial.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // normal(0, sigma) with |z| <= 2*sigma by resampling
    double truncated_normal(double sigma) {
        for (;;) {
            const double z = normal();
            if (std::fabs(z) <= 2.0) return z * sigma;
        }
    }

    static std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                                     std::uint64_t index = 0) {
        std::uint64_t h = 0xcbf29ce484222325ULL;  // fnv1a-64
        for (const char c : stream) {
            h ^= static_cast<std::uint8_t>(c);
            h *= 0x100000001b3ULL;
        }
        std::uint64_t z = root ^ h ^ (0x9e3779b97f4a7c15ULL * (index + 1));
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    Rng fork(std::string_view stream, std::uint64_t index = 0) const {
        return Rng(derive_seed(seed_, stream, index));
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
};

}  // namespace mmvt
