#pragma once

// Deterministic random source. Distributions are hand-rolled so that a seed
// produces the same stream on every platform/toolchain.

#include <cmath>
#include <cstdint>

namespace scafusion {

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed + 0x9e3779b97f4a7c15ull) {
        // warm up splitmix
        next_u64();
        next_u64();
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi_inclusive) {
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi_inclusive - lo + 1));
    }

    // Box-Muller, one value per call (the pair's second half is discarded
    // to keep the stream position predictable).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(6.283185307179586477 * u2);
    }

    // Independent child stream, used for per-sample/per-module derivation.
    Rng fork(uint64_t salt) const {
        Rng child;
        child.state_ = state_ ^ (salt * 0xd6e8feb86659fd93ull + 0x2545f4914f6cdd1dull);
        child.next_u64();
        return child;
    }

private:
    uint64_t state_ = 0;
};

}  // namespace scafusion
