#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>
#include <random>
#include <string_view>

namespace dcmf {

/// splitmix64 finalizer; used both as a mixing step and to stretch seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Order-sensitive 64-bit hash chain. Deterministic across platforms, used to
/// derive per-dataset and per-run seeds from a master seed plus identifying
/// fields (family name, dataset index, model label, grid index, init index).
class SeedMix {
public:
    explicit SeedMix(std::uint64_t master) : h_(splitmix64(master ^ 0xd6e8feb86659fd93ULL)) {}

    SeedMix& mix(std::uint64_t v) {
        h_ = splitmix64(h_ ^ (v + 0x9e3779b97f4a7c15ULL + (h_ << 6) + (h_ >> 2)));
        return *this;
    }

    SeedMix& mix(std::int64_t v) { return mix(static_cast<std::uint64_t>(v)); }
    SeedMix& mix(int v) { return mix(static_cast<std::uint64_t>(static_cast<std::int64_t>(v))); }
    SeedMix& mix(double v) { return mix(std::bit_cast<std::uint64_t>(v)); }

    SeedMix& mix(std::string_view s) {
        // FNV-1a over the bytes, then folded into the chain.
        std::uint64_t f = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            f ^= c;
            f *= 0x100000001b3ULL;
        }
        return mix(f);
    }

    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_;
};

template <typename... Args>
std::uint64_t hash64(std::uint64_t master, Args&&... args) {
    SeedMix m(master);
    (m.mix(std::forward<Args>(args)), ...);
    return m.value();
}

/// Seeded random source for matrix fills. Every fill instantiates a fresh
/// distribution object so draw sequences depend only on the call order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    /// Uniform integer in [lo, hi], both inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uniform_int_distribution<std::int64_t> d(lo, hi);
        return d(engine_);
    }

    /// Row-major entry order so that the stream is independent of Eigen's
    /// internal storage layout.
    void fill_normal(Eigen::Ref<Eigen::MatrixXd> m, double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                m(i, j) = d(engine_);
    }

    void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                m(i, j) = d(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace dcmf
