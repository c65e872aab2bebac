#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "inviv/common.hpp"

namespace inviv {

/// Deterministic random stream. All sampling (uniform bits -> doubles,
/// Box-Muller normals, Fisher-Yates shuffles) is implemented here rather
/// than with std distributions, so identical seeds give identical draws
/// on any standard library.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    /// Counter-based seed split: stream i of master seed s. Used for seed
    /// fan-out across tasks so parallel and serial execution agree.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ULL;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBULL;
        x ^= x >> 31;
        return x;
    }

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    Matrix normal_matrix(Index rows, Index cols) {
        Matrix m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }

    Matrix uniform_matrix(Index rows, Index cols, double lo, double hi) {
        Matrix m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = uniform(lo, hi);
        return m;
    }

    uint64_t below(uint64_t n) { return next_u64() % n; }

    std::vector<Index> permutation(Index n) {
        std::vector<Index> idx(static_cast<size_t>(n));
        for (Index i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        for (Index i = n - 1; i > 0; --i) {
            const Index j = static_cast<Index>(below(static_cast<uint64_t>(i) + 1));
            std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
        }
        return idx;
    }

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace inviv
