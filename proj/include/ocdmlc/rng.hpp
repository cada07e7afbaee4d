#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>

namespace ocdmlc {

/// Seeded generator with platform-independent draws. The standard
/// distributions are implementation-defined, so uniform reals and categorical
/// sampling are derived from the raw 64-bit engine output here.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: empty range");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Index drawn proportionally to nonnegative weights.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw std::invalid_argument("Rng::categorical: no positive weight");
        double u = uniform() * total;
        std::size_t last = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] <= 0.0) continue;
            last = i;
            if (u < weights[i]) return i;
            u -= weights[i];
        }
        return last;
    }

    /// Derive an independent stream, e.g. one per epoch or per instance.
    Rng fork(std::uint64_t salt) {
        std::seed_seq seq{static_cast<std::uint32_t>(engine_()), static_cast<std::uint32_t>(salt),
                          static_cast<std::uint32_t>(salt >> 32)};
        std::mt19937_64 e(seq);
        return Rng(e());
    }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            auto j = static_cast<decltype(i)>(below(static_cast<std::uint64_t>(i) + 1));
            std::swap(first[i], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace ocdmlc
