#pragma once

#include <cstdint>
#include <random>

namespace advleaf {

/// Deterministic random source. All stochastic code in the toolkit draws from
/// an Rng so that a run is fully reproduced by its seed. Substreams derived
/// from (seed, index) are independent of each other's consumption state, which
/// keeps per-sample randomness stable under batch partitioning.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

    /// Stateless derivation: the substream depends only on (seed, index).
    Rng substream(uint64_t index) const {
        return Rng(mix(seed_ ^ (0x9E3779B97F4A7C15ull * (index + 1))));
    }

    uint64_t seed() const { return seed_; }

    float uniform(float lo, float hi) {
        std::uniform_real_distribution<float> d(lo, hi);
        return d(engine_);
    }

    /// Standard normal.
    float normal() {
        std::normal_distribution<float> d(0.0f, 1.0f);
        return d(engine_);
    }

    bool bernoulli(double p) {
        std::bernoulli_distribution d(p);
        return d(engine_);
    }

    /// Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) {
        std::uniform_int_distribution<uint64_t> d(0, n - 1);
        return d(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    static uint64_t mix(uint64_t x) {
        // splitmix64 finalizer
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

    uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace advleaf
