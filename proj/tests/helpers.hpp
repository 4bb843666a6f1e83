#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "elastreg/grid.hpp"

namespace testutil {

using namespace elastreg;

inline ScalarImage random_image(const Grid& g, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    ScalarImage img(g);
    for (auto& v : img.data) v = u(rng);
    return img;
}

// Smooth-ish texture: sum of a few random sinusoids plus a little noise.
inline ScalarImage smooth_texture(const Grid& g, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double fa[4], fb[4], ph[4];
    for (int k = 0; k < 4; ++k) {
        fa[k] = 0.2 + 0.5 * u(rng);
        fb[k] = 0.2 + 0.5 * u(rng);
        ph[k] = 6.28 * u(rng);
    }
    ScalarImage img(g);
    const std::size_t s0 = g.stride(0);
    for (std::size_t x = 0; x < g.size(); ++x) {
        const double r = static_cast<double>(x / s0), c = static_cast<double>(x % s0);
        double v = 0.0;
        for (int k = 0; k < 4; ++k) v += std::sin(fa[k] * r + fb[k] * c + ph[k]);
        img.data[x] = 0.5 + 0.1 * v + 0.02 * u(rng);
    }
    return img;
}

inline DisplacementField random_field(const Grid& g, std::mt19937_64& rng, double amplitude) {
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    DisplacementField f(g);
    for (auto& v : f.data) v = u(rng);
    return f;
}

// Field whose sample positions x + u(x) keep fractional parts inside
// [margin, 1 - margin] and stay inside the grid, so finite differences never
// straddle an interpolation kink or the clamp boundary.
inline DisplacementField kink_free_field(const Grid& g, std::mt19937_64& rng, double max_abs, double margin = 0.05) {
    std::uniform_real_distribution<double> frac(margin, 1.0 - margin);
    std::uniform_int_distribution<int> whole(-static_cast<int>(max_abs), static_cast<int>(max_abs) - 1);
    DisplacementField f(g);
    const std::size_t n = g.size();
    for (int j = 0; j < g.ndim; ++j) {
        const std::size_t st = g.stride(j);
        for (std::size_t x = 0; x < n; ++x) {
            const int k = static_cast<int>((x / st) % static_cast<std::size_t>(g.dims[j]));
            double v = whole(rng) + frac(rng);
            // Keep k + v inside (0, dims - 1).
            while (k + v <= 0.0) v += 1.0;
            while (k + v >= g.dims[j] - 1) v -= 1.0;
            f.data[j * n + x] = v;
        }
    }
    return f;
}

inline std::size_t idx2(const Grid& g, int r, int c) { return static_cast<std::size_t>(r) * g.dims[1] + c; }

} // namespace testutil
