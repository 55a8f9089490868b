#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace storyscope {

// All randomized procedures in the toolkit draw from this wrapper instead of
// <random> distributions. std::mt19937_64's output sequence is fixed by the
// standard, and the draw/rejection logic below is spelled out here, so results
// are bit-identical across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t bounded(std::uint64_t n) { return gen_() % n; }

    /// Uniform double in [0, 1) with 53 random bits.
    double unit() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. Stateless between calls.
    double normal() {
        double u1 = unit();
        double u2 = unit();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793238462643 * u2);
    }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    /// k indices drawn uniformly from [0, n) with replacement.
    std::vector<std::size_t> sample_with_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> out(k);
        for (std::size_t i = 0; i < k; ++i) out[i] = static_cast<std::size_t>(bounded(n));
        return out;
    }

    /// k distinct indices from [0, n), k <= n, in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + static_cast<std::size_t>(bounded(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    std::mt19937_64 gen_;
};

/// Mixes a base seed with a stream index (splitmix64 finalizer), so parallel
/// units (bootstrap iterations, permutations, workers) get decorrelated,
/// reproducible sub-seeds.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace storyscope
