#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>

#include "crosslm/common.hpp"

namespace crosslm {

// SplitMix64 finalizer, used for seed derivation.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic child seed for a keyed stream (per row, per step, ...).
inline uint64_t derive_seed(uint64_t seed, uint64_t key) {
    return mix64(mix64(seed) ^ mix64(key * 0x9e3779b97f4a7c15ull + 1));
}

// Seedable generator with the distribution transforms implemented here,
// since the standard library leaves <random> distributions unspecified.
// The engine is std::mt19937_64, whose draw sequence and textual state
// are pinned by the standard, so sequences are portable across hosts.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform real in [0, 1), 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). Rejection keeps the draw unbiased.
    uint64_t uniform_int(uint64_t n) {
        CLX_CHECK(n > 0, "uniform_int: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller; second value discarded so the
    // generator carries no cached state across serialization.
    double normal() {
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Draw an index from an unnormalized weight vector by inverse CDF.
    size_t categorical(std::span<const double> weights) {
        CLX_CHECK(!weights.empty(), "categorical: empty weight vector");
        double total = 0.0;
        for (double w : weights) total += w;
        CLX_CHECK(total > 0.0, "categorical: weights sum to zero");
        double u = uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.size() - 1;
    }

    // Child generator whose seed is drawn from this one.
    Rng split() { return Rng(mix64(next_u64())); }

    // Fisher-Yates; order of draws fixed by the index loop.
    template <class T>
    void shuffle(std::span<T> items) {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    static Rng deserialize(const std::string& state) {
        Rng r;
        std::istringstream is(state);
        is >> r.engine_;
        CLX_CHECK(!is.fail(), "rng: malformed serialized state");
        return r;
    }

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace crosslm
