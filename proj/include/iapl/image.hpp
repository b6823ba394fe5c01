#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "iapl/errors.hpp"

namespace iapl {

// RGB raster, values in [0,1], row-major interleaved (y, x, channel).
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // height*width*3

    Image() = default;
    Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0f) {
        if (h < 1 || w < 1) throw ArgumentError("image: dims must be >= 1");
    }

    float& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }

    int min_side() const { return std::min(height, width); }
};

inline float gray_bt601(float r, float g, float b) {
    return 0.299f * r + 0.587f * g + 0.114f * b;
}

inline std::vector<double> to_gray(const Image& img) {
    std::vector<double> g(static_cast<size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g[static_cast<size_t>(y) * img.width + x] =
                0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
    return g;
}

// Corner-aligned bilinear resampling. A single-pixel output axis samples
// coordinate 0.
inline Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ArgumentError("resize_bilinear: output dims must be >= 1");
    if (out_h == img.height && out_w == img.width) return img;
    Image out(out_h, out_w);
    double sy = out_h > 1 ? static_cast<double>(img.height - 1) / (out_h - 1) : 0.0;
    double sx = out_w > 1 ? static_cast<double>(img.width - 1) / (out_w - 1) : 0.0;
    for (int y = 0; y < out_h; ++y) {
        double fy = y * sy;
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, img.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = x * sx;
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, img.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                double v00 = img.at(y0, x0, c);
                double v01 = img.at(y0, x1, c);
                double v10 = img.at(y1, x0, c);
                double v11 = img.at(y1, x1, c);
                double v = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11);
                out.at(y, x, c) = static_cast<float>(v);
            }
        }
    }
    return out;
}

inline Image crop(const Image& img, int y0, int x0, int side) {
    if (y0 < 0 || x0 < 0 || y0 + side > img.height || x0 + side > img.width || side < 1)
        throw ArgumentError("crop: window out of bounds");
    Image out(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

inline Image hflip(const Image& img) {
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
    return out;
}

struct PatchGrid {
    std::vector<Image> patches;
    std::vector<std::pair<int, int>> positions;  // (row, col) in patch units
    int patch_side = 0;
};

// Non-overlapping tiling from the top-left corner. Remainder rows/columns
// narrower than the patch are discarded.
inline PatchGrid partition_patches(const Image& img, int patch) {
    if (patch < 1) throw ArgumentError("partition_patches: patch must be >= 1");
    if (img.height < patch || img.width < patch)
        throw ArgumentError("partition_patches: image smaller than patch");
    PatchGrid grid;
    grid.patch_side = patch;
    int rows = img.height / patch;
    int cols = img.width / patch;
    grid.patches.reserve(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            grid.patches.push_back(crop(img, r * patch, c * patch, patch));
            grid.positions.emplace_back(r, c);
        }
    return grid;
}

}  // namespace iapl
