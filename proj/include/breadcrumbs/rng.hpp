#pragma once

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string_view>
#include <vector>

namespace breadcrumbs {

enum class RngAlgo : uint32_t { xoshiro256ss = 1 };

/// Seeded pseudo-random stream (xoshiro256** over a splitmix64-expanded seed).
/// Self-contained so that identical seeds give identical streams on every
/// platform and standard library. Identical seed => identical stream is a
/// hard contract; training determinism depends on it.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {
        uint64_t x = seed;
        for (auto& s : state_) s = splitmix64(x);
        spare_valid_ = false;
    }

    uint64_t seed() const { return seed_; }
    RngAlgo algorithm() const { return RngAlgo::xoshiro256ss; }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1), 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the spare is cached, so the stream
    /// advances by two words every other call.
    double normal() {
        if (spare_valid_) {
            spare_valid_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        spare_valid_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Uniform index in [0, n). Multiply-shift; bias is < n / 2^64.
    size_t index(size_t n) {
        return static_cast<size_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<uint32_t> permutation(uint32_t n) {
        std::vector<uint32_t> p(n);
        for (uint32_t i = 0; i < n; ++i) p[i] = i;
        for (uint32_t i = n; i > 1; --i) {
            const size_t j = index(i);
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    /// Sample k distinct indices from [0, n), returned in ascending order.
    std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t k) {
        // Partial Fisher-Yates, then sort so a full selection is the identity.
        std::vector<uint32_t> p(n);
        for (uint32_t i = 0; i < n; ++i) p[i] = i;
        for (uint32_t i = 0; i < k; ++i) {
            const size_t j = i + index(n - i);
            std::swap(p[i], p[j]);
        }
        p.resize(k);
        std::sort(p.begin(), p.end());
        return p;
    }

    /// Independent child stream keyed by a tag. Pure function of the
    /// constructor seed and the tag, regardless of how much of this
    /// stream has been consumed.
    Rng derive(std::string_view tag) const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        uint64_t x = seed_ ^ h;
        return Rng(splitmix64(x));
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t state_[4];
    double spare_ = 0.0;
    bool spare_valid_ = false;
};

} // namespace breadcrumbs
