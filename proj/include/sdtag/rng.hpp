#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string_view>
#include <vector>

namespace sdtag {

// Deterministic random source. The mt19937_64 output sequence is fixed by the
// C++ standard; the float/normal constructions below are pinned here so results
// do not depend on library implementations of std::*_distribution.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_mix_(seed) {}

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 0.0;
        do {
            u = uniform01();
        } while (u <= 0.0);
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * 3.141592653589793238462643 * uniform01();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = 0;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform01() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
        }
    }

    // Seed for an independent child stream; distinct labels give distinct
    // streams regardless of how much the parent has been consumed.
    std::uint64_t child_seed(std::uint64_t label) const {
        // splitmix64 of (seed ^ label) decorrelates parent and children.
        std::uint64_t z = seed_mix_ ^ (label + 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t child_seed(std::string_view label) const {
        // FNV-1a folds the label into a 64-bit stream id.
        std::uint64_t h = 1469598103934665603ULL;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        return child_seed(h);
    }

    std::uint64_t child_seed(std::string_view label, std::uint64_t index) const {
        return Rng(child_seed(label)).child_seed(index);
    }

    Rng child(std::uint64_t label) const { return Rng(child_seed(label)); }
    Rng child(std::string_view label) const { return Rng(child_seed(label)); }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_mix_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace sdtag
