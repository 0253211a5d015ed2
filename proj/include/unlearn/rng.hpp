#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "unlearn/errors.hpp"

namespace unlearn {

// Counter-based deterministic generator. Output k of stream s is
// splitmix64_finalize(s + (k+1) * golden_gamma), so identical seeds and call
// sequences reproduce bit-exactly on any platform. Single-owner: never share
// one instance between threads.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = seed_ + kGamma * (++counter_);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform in [0, n). Modulo bias is irrelevant for n << 2^64 and the
    // result is still fully deterministic.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw ParameterError("Rng::uniform_int: n must be positive");
        return next_u64() % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Knuth's product method; fine for the small means used here.
    int poisson(double mean) {
        if (mean <= 0) throw ParameterError("Rng::poisson: mean must be positive");
        double limit = std::exp(-mean), prod = uniform();
        int k = 0;
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; distinct tags give distinct streams.
    Rng derive(std::uint64_t tag) const {
        std::uint64_t z = seed_ ^ (kGamma * (tag + 0x1DB3ULL));
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

    std::uint64_t seed() const { return seed_; }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace unlearn
