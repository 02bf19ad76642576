#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "dyno/tensor.hpp"

namespace dyno {

/// Deterministic seed fan-out: one master seed expands into independent named
/// streams via FNV-1a hashing of (tag, indices...) mixed with splitmix64.
/// mt19937_64 output is fully specified by the standard, so streams are
/// reproducible across platforms.
class SeedSplitter {
public:
    explicit SeedSplitter(std::uint64_t master) : master_(master) {}

    std::uint64_t master() const { return master_; }

    std::uint64_t derive(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0,
                         std::uint64_t c = 0) const {
        std::uint64_t h = 0xcbf29ce484222325ull ^ splitmix(master_);
        for (char ch : tag) {
            h ^= static_cast<std::uint8_t>(ch);
            h *= 0x100000001b3ull;
        }
        h = splitmix(h ^ splitmix(a + 0x9e3779b97f4a7c15ull));
        h = splitmix(h ^ splitmix(b + 0x7f4a7c159e3779b9ull));
        h = splitmix(h ^ splitmix(c + 0x2545f4914f6cdd1dull));
        return h;
    }

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

private:
    std::uint64_t master_;
};

/// Gaussian/uniform source over mt19937_64 with a hand-rolled Box-Muller
/// transform (std::normal_distribution is not bit-stable across stdlibs).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; caches the second variate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    Tensor normal_tensor(std::vector<int> shape) {
        Tensor t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = normal();
        return t;
    }

    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        // rejection sampling keeps the draw unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = engine_();
        while (v >= limit) v = engine_();
        return v % n;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dyno
