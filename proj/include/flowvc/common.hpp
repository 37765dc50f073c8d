#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace flowvc {

// Error categories used across the library. Callers that hand us malformed
// data get InvalidInput; diverging numerics get NumericalFailure; everything
// filesystem-shaped gets IoError.
struct InvalidInput : std::runtime_error {
    explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericalFailure : std::runtime_error {
    explicit NumericalFailure(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG. The engine is std::mt19937_64 (fully specified by the
// standard); the distribution transforms are hand-rolled so that streams are
// bit-reproducible across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), eng_(splitmix(seed)) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform on [0, 1): top 53 bits of the engine output.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer on [0, n).
    int64_t uniform_int(int64_t n) {
        // Rejection sampling keeps the draw exactly uniform.
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return static_cast<int64_t>(x % un);
    }

    // Standard normal via Box-Muller. The partner draw is cached so a stream
    // consumes engine output at a fixed rate.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent substream derived from this stream's seed and a tag. Used to
    // keep data, mask, noise and init draws decoupled from one another.
    Rng child(uint64_t tag) const {
        return Rng(splitmix(seed_ ^ splitmix(tag + 0x9e3779b97f4a7c15ull)));
    }

    uint64_t seed() const { return seed_; }

private:
    static uint64_t splitmix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    uint64_t seed_;
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace flowvc
