#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace shapemorph {

/// Dense row-major matrix; rank-0/1 data is carried as 1x1 / 1xd.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Matd = Matrix<double>;
using Matf = Matrix<float>;
using Vec3d = Eigen::Matrix<double, 3, 1>;
using Mat3d = Eigen::Matrix<double, 3, 3>;

/// Uniform draw in [0,1) built from raw mt19937_64 output.
/// std::uniform_real_distribution is implementation-defined; this is not,
/// so seeded runs reproduce bit-exactly.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Integer in [0, n). n must be positive.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

/// FNV-1a over raw bytes; used for content hashes (caches, pinned tests).
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename Scalar>
std::uint64_t fnv1a_matrix(const Matrix<Scalar>& m, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a(m.data(), sizeof(Scalar) * static_cast<std::size_t>(m.size()), seed);
}

inline std::string hex64(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

}  // namespace shapemorph
