#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace keyreg {

// Deterministic random stream. All draws are reduced from the raw
// mt19937_64 output so the values do not depend on the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() { return (gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), rejection sampled so every value is
    // exactly equally likely
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n <= 1)
            return 0;
        const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n + 1) % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x > limit);
        return x % n;
    }

    bool coin(double p = 0.5) { return uniform() < p; }

    double normal(double mean = 0.0, double sigma = 1.0) {
        // Box-Muller; the second variate is discarded to keep the stream
        // a pure function of the draw count
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(2.0 * M_PI * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// Derives an independent child seed from a root seed and a stream label.
// Used to hand each subsystem (pair generation, mining, RANSAC, ...) its
// own stream while keeping the whole run reproducible from one seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ull ^ root;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

}  // namespace keyreg
