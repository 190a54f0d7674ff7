#pragma once

#include <cmath>
#include <random>

#include "avgctl/types.hpp"

namespace avgctl::detail {

// Engine-bit based draws: identical streams regardless of the standard
// library's distribution implementations.

inline double u01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double a, double b) {
    return a + (b - a) * u01(rng);
}

inline double gaussian(std::mt19937_64& rng) {
    double u1 = u01(rng);
    while (u1 <= 0.0) u1 = u01(rng);
    const double u2 = u01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

inline Vec gaussian_vec(std::mt19937_64& rng, int n) {
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = gaussian(rng);
    return v;
}

inline Vec unit_vec(std::mt19937_64& rng, int n) {
    Vec v = gaussian_vec(rng, n);
    double nv = v.norm();
    while (nv < 1e-12) {
        v = gaussian_vec(rng, n);
        nv = v.norm();
    }
    return v / nv;
}

}  // namespace avgctl::detail
