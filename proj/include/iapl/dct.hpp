#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/image.hpp"

namespace iapl {

// Orthonormal DCT-II basis matrix, C[k][i] = s_k * cos(pi*(2i+1)*k / (2n)).
inline std::vector<double> dct_matrix(int n) {
    std::vector<double> c(static_cast<size_t>(n) * n);
    double s0 = std::sqrt(1.0 / n);
    double sk = std::sqrt(2.0 / n);
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            c[static_cast<size_t>(k) * n + i] =
                (k == 0 ? s0 : sk) * std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * n));
    return c;
}

// Orthonormal type-II 2D DCT of a square matrix: Y = C * X * C^T.
inline std::vector<double> dct2(const std::vector<double>& x, int n) {
    if (n < 1 || x.size() != static_cast<size_t>(n) * n) throw ArgumentError("dct2: bad input");
    std::vector<double> c = dct_matrix(n);
    std::vector<double> tmp(static_cast<size_t>(n) * n, 0.0);
    // tmp = C * X
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i) {
            double ck = c[static_cast<size_t>(k) * n + i];
            if (ck == 0.0) continue;
            for (int j = 0; j < n; ++j)
                tmp[static_cast<size_t>(k) * n + j] += ck * x[static_cast<size_t>(i) * n + j];
        }
    std::vector<double> y(static_cast<size_t>(n) * n, 0.0);
    // y = tmp * C^T
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
                acc += tmp[static_cast<size_t>(k) * n + j] * c[static_cast<size_t>(l) * n + j];
            y[static_cast<size_t>(k) * n + l] = acc;
        }
    return y;
}

// Inverse of dct2: X = C^T * Y * C.
inline std::vector<double> idct2(const std::vector<double>& y, int n) {
    if (n < 1 || y.size() != static_cast<size_t>(n) * n) throw ArgumentError("idct2: bad input");
    std::vector<double> c = dct_matrix(n);
    std::vector<double> tmp(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            double ck = c[static_cast<size_t>(k) * n + i];
            if (ck == 0.0) continue;
            for (int j = 0; j < n; ++j)
                tmp[static_cast<size_t>(i) * n + j] += ck * y[static_cast<size_t>(k) * n + j];
        }
    std::vector<double> x(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int l = 0; l < n; ++l)
                acc += tmp[static_cast<size_t>(i) * n + l] * c[static_cast<size_t>(l) * n + j];
            x[static_cast<size_t>(i) * n + j] = acc;
        }
    return x;
}

// Texture richness: high-frequency DCT mass of the grayscale patch. The band
// keeps coefficients with u+v >= side/4; the lower bound never drops below 1,
// so the DC term is always excluded and constant offsets do not move the
// score.
inline double dct_richness(const Image& patch) {
    if (patch.height != patch.width) throw ArgumentError("dct_richness: patch must be square");
    int n = patch.height;
    std::vector<double> g = to_gray(patch);
    std::vector<double> coef = dct2(g, n);
    int band = std::max(1, n / 4);
    double score = 0.0;
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v)
            if (u + v >= band) score += std::abs(coef[static_cast<size_t>(u) * n + v]);
    return score;
}

// Argmax of dct_richness over the grid; ties break toward the lowest
// row-major index.
inline size_t select_richest_patch(const PatchGrid& grid) {
    if (grid.patches.empty()) throw ArgumentError("select_richest_patch: empty grid");
    size_t best = 0;
    double best_score = dct_richness(grid.patches[0]);
    for (size_t i = 1; i < grid.patches.size(); ++i) {
        double s = dct_richness(grid.patches[i]);
        if (s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

}  // namespace iapl
