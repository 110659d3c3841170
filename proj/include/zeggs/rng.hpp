#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace zeggs {

// Counter-style deterministic RNG (splitmix64 core). All randomness in the
// system is derived from a user seed plus a derivation path, e.g.
// RngStream::derive(seed, {iter, item, kTagDropout}). This makes every draw a
// pure function of (seed, path): results are identical across thread
// schedules and a resumed run continues the exact stream of a continuous one.
//
// Standard-library distributions are deliberately avoided: their output is
// implementation-defined, which would break bit-exact reproducibility.
struct RngStream {
    std::uint64_t state;

    explicit RngStream(std::uint64_t seed) : state(seed) {}

    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    static RngStream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
        std::uint64_t s = mix(seed);
        for (std::uint64_t p : path) s = mix(s ^ mix(p + 0x632be59bd9b4e019ULL));
        return RngStream(s);
    }

    std::uint64_t next_u64() {
        state += 0x9e3779b97f4a7c15ULL;
        std::uint64_t x = state;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is < 2^-53 for any realistic n.
    std::uint64_t uniform_index(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Standard normal via Box-Muller (two uniforms per draw, no cached state).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }
};

// Derivation tags used across the training pipeline.
enum : std::uint64_t {
    kRngInit = 1,       // parameter initialization
    kRngBatch = 2,      // batch/window sampling
    kRngDropout = 3,    // dropout masks
    kRngEmbedding = 4,  // style embedding reparameterization
    kRngSpeed = 5,      // per-batch speed augmentation factor
};

}  // namespace zeggs
