#pragma once

#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/image.hpp"

namespace iapl {

struct HighpassKernel {
    std::string id;
    int kh = 0, kw = 0;
    std::vector<double> taps;  // row-major, un-normalized
    double quant = 1.0;        // divisor applied to the response
};

// Derivative-style residual kernel bank: first-order horizontal, second-order
// along both axes, and the 3x3 "KB" Laplacian-style kernel.
inline const std::vector<HighpassKernel>& highpass_kernels() {
    static const std::vector<HighpassKernel> ks = {
        {"d1h", 1, 2, {-1.0, 1.0}, 1.0},
        {"d2h", 1, 3, {1.0, -2.0, 1.0}, 2.0},
        {"d2v", 3, 1, {1.0, -2.0, 1.0}, 2.0},
        {"kb", 3, 3, {-1.0, 2.0, -1.0, 2.0, -4.0, 2.0, -1.0, 2.0, -1.0}, 4.0},
    };
    return ks;
}

// One filtered plane per (channel, kernel) pair, channel-major. Plane k of
// channel c sits at index c * kernel_count + k.
struct ResidualStack {
    int side = 0;
    int kernel_count = 0;
    std::vector<std::string> filter_ids;
    std::vector<std::vector<double>> planes;  // each side*side

    int plane_count() const { return static_cast<int>(planes.size()); }
};

// True convolution (kernel flipped), same-size output. Border outputs whose
// kernel window would overhang the patch stay zero, so a constant patch maps
// to an all-zero stack. The anchor is the kernel's top-left-biased center.
inline std::vector<double> convolve_same(const std::vector<double>& in, int h, int w,
                                         const HighpassKernel& k) {
    std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
    int ah = (k.kh - 1) / 2;
    int aw = (k.kw - 1) / 2;
    int y0 = k.kh - 1 - ah, y1 = h - 1 - ah;
    int x0 = k.kw - 1 - aw, x1 = w - 1 - aw;
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k.kh; ++i)
                for (int j = 0; j < k.kw; ++j)
                    acc += k.taps[static_cast<size_t>(i) * k.kw + j] *
                           in[static_cast<size_t>(y + ah - i) * w + (x + aw - j)];
            out[static_cast<size_t>(y) * w + x] = acc / k.quant;
        }
    return out;
}

inline ResidualStack highpass_residual(const Image& patch) {
    if (patch.height != patch.width) throw ArgumentError("highpass_residual: patch must be square");
    const auto& kernels = highpass_kernels();
    ResidualStack rs;
    rs.side = patch.height;
    rs.kernel_count = static_cast<int>(kernels.size());
    for (const auto& k : kernels) rs.filter_ids.push_back(k.id);
    rs.planes.reserve(3u * kernels.size());
    std::vector<double> chan(static_cast<size_t>(patch.height) * patch.width);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < patch.height; ++y)
            for (int x = 0; x < patch.width; ++x)
                chan[static_cast<size_t>(y) * patch.width + x] = patch.at(y, x, c);
        for (const auto& k : kernels)
            rs.planes.push_back(convolve_same(chan, patch.height, patch.width, k));
    }
    return rs;
}

}  // namespace iapl
