#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "trajrec/common.hpp"

namespace trajrec {

// splitmix64 step, also used as a generic 64-bit mixer.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_bytes(std::string_view s, std::uint64_t seed = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return mix64(h);
}

// xoshiro256++ with splitmix64 seeding. Self-contained so that seeded runs
// are reproducible across compilers and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) {
            x = mix64(x);
            word = x;
        }
        has_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw input_error("Rng::below: empty range");
        // rejection sampling to avoid modulo bias
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // standard normal via Box-Muller, one spare cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // independent stream derived from this seed and a salt
    Rng fork(std::uint64_t salt) const {
        return Rng(mix64(state_[0] ^ mix64(salt + 0x5851f42d4c957f2dULL)));
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4];
    bool has_spare_;
    double spare_;
};

// Walker alias table: O(n) setup, O(1) weighted sampling.
class AliasTable {
public:
    explicit AliasTable(const std::vector<double>& weights) {
        const std::size_t n = weights.size();
        if (n == 0) throw input_error("AliasTable: no weights");
        prob_.resize(n);
        alias_.resize(n);
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw input_error("AliasTable: negative weight");
            sum += w;
        }
        if (sum <= 0.0) throw input_error("AliasTable: all weights zero");

        std::vector<double> scaled(n);
        for (std::size_t i = 0; i < n; ++i) scaled[i] = weights[i] * double(n) / sum;

        std::vector<std::uint32_t> small, large;
        small.reserve(n);
        large.reserve(n);
        for (std::size_t i = n; i-- > 0;) {
            if (scaled[i] < 1.0)
                small.push_back(std::uint32_t(i));
            else
                large.push_back(std::uint32_t(i));
        }
        while (!small.empty() && !large.empty()) {
            const std::uint32_t s = small.back();
            small.pop_back();
            const std::uint32_t l = large.back();
            large.pop_back();
            prob_[s] = scaled[s];
            alias_[s] = l;
            scaled[l] = scaled[l] + scaled[s] - 1.0;
            if (scaled[l] < 1.0)
                small.push_back(l);
            else
                large.push_back(l);
        }
        while (!large.empty()) {
            prob_[large.back()] = 1.0;
            large.pop_back();
        }
        while (!small.empty()) {
            prob_[small.back()] = 1.0;
            small.pop_back();
        }
    }

    std::uint32_t sample(Rng& rng) const {
        const std::uint32_t k = std::uint32_t(rng.below(prob_.size()));
        return rng.uniform() < prob_[k] ? k : alias_[k];
    }

    std::size_t size() const { return prob_.size(); }

private:
    std::vector<double> prob_;
    std::vector<std::uint32_t> alias_;
};

} // namespace trajrec
