#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "iapl/dct.hpp"
#include "iapl/image.hpp"
#include "iapl/image_io.hpp"
#include "iapl/residual.hpp"
#include "iapl/rng.hpp"
#include "iapl/views.hpp"

using namespace iapl;

namespace {

std::filesystem::path tmp_dir() {
    auto p = std::filesystem::temp_directory_path() / "iapl_imaging_test";
    std::filesystem::create_directories(p);
    return p;
}

Image const_image(int h, int w, float v) {
    Image img(h, w);
    std::fill(img.data.begin(), img.data.end(), v);
    return img;
}

Image random_image(int h, int w, Rng& rng) {
    Image img(h, w);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    return img;
}

// Direct evaluation of the orthonormal DCT-II definition.
std::vector<double> dct2_oracle(const std::vector<double>& x, int n) {
    std::vector<double> y(n * n, 0.0);
    for (int u = 0; u < n; ++u)
        for (int v = 0; v < n; ++v) {
            double su = u == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            double sv = v == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            double acc = 0.0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    acc += x[i * n + j] * std::cos(M_PI * (2 * i + 1) * u / (2.0 * n)) *
                           std::cos(M_PI * (2 * j + 1) * v / (2.0 * n));
            y[u * n + v] = su * sv * acc;
        }
    return y;
}

}  // namespace

TEST(ImageIo, PngAllWhiteReadsAsOnes) {
    auto path = (tmp_dir() / "white.png").string();
    save_png(const_image(2, 2, 1.0f), path);
    Image img = load_image(path);
    ASSERT_EQ(img.height, 2);
    ASSERT_EQ(img.width, 2);
    for (float v : img.data) EXPECT_FLOAT_EQ(v, 1.0f);
}

TEST(ImageIo, PngBlackPixelReadsAsZero) {
    auto path = (tmp_dir() / "black.png").string();
    save_png(const_image(1, 1, 0.0f), path);
    Image img = load_image(path);
    for (float v : img.data) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(ImageIo, MidGrayNormalization) {
    auto path = (tmp_dir() / "gray.png").string();
    save_png(const_image(3, 3, 128.0f / 255.0f), path);
    Image img = load_image(path);
    for (float v : img.data) EXPECT_FLOAT_EQ(v, 128.0f / 255.0f);
    EXPECT_NEAR(img.data[0], 0.50196, 1e-5);
}

TEST(ImageIo, PpmRoundTrip) {
    Rng rng(42);
    Image img = random_image(5, 7, rng);
    auto path = (tmp_dir() / "rt.ppm").string();
    save_ppm(img, path);
    Image back = load_image(path);
    ASSERT_EQ(back.height, 5);
    ASSERT_EQ(back.width, 7);
    for (size_t i = 0; i < img.data.size(); ++i)
        EXPECT_NEAR(back.data[i], img.data[i], 0.5f / 255.0f + 1e-6f);
}

TEST(ImageIo, PngRoundTripBitExact) {
    Rng rng(43);
    Image img = random_image(9, 4, rng);
    auto p1 = (tmp_dir() / "a.png").string();
    auto p2 = (tmp_dir() / "b.png").string();
    save_png(img, p1);
    Image back = load_image(p1);
    save_png(back, p2);
    Image back2 = load_image(p2);
    EXPECT_EQ(back.data, back2.data);
}

TEST(ImageIo, Errors) {
    EXPECT_THROW(load_image((tmp_dir() / "missing.png").string()), IoError);
    auto junk = (tmp_dir() / "junk.bin").string();
    {
        std::ofstream f(junk, std::ios::binary);
        f << "GIF89a not a real image";
    }
    EXPECT_THROW(load_image(junk), FormatError);
    auto trunc = (tmp_dir() / "trunc.ppm").string();
    {
        std::ofstream f(trunc, std::ios::binary);
        f << "P6\n4 4\n255\nxx";
    }
    EXPECT_THROW(load_image(trunc), FormatError);
    auto deep = (tmp_dir() / "deep.ppm").string();
    {
        std::ofstream f(deep, std::ios::binary);
        f << "P6\n1 1\n65535\nxxxxxx";
    }
    EXPECT_THROW(load_image(deep), FormatError);
}

TEST(Resize, ConstantStaysConstant) {
    Image img = const_image(5, 9, 0.37f);
    Image out = resize_bilinear(img, 13, 4);
    for (float v : out.data) EXPECT_NEAR(v, 0.37f, 1e-6f);
}

TEST(Resize, SameSizeIsIdentity) {
    Rng rng(7);
    Image img = random_image(6, 6, rng);
    Image out = resize_bilinear(img, 6, 6);
    EXPECT_EQ(out.data, img.data);
}

TEST(Resize, CornerAlignedColumn) {
    Image img(2, 1);
    for (int c = 0; c < 3; ++c) {
        img.at(0, 0, c) = 0.0f;
        img.at(1, 0, c) = 1.0f;
    }
    Image out = resize_bilinear(img, 3, 1);
    EXPECT_FLOAT_EQ(out.at(0, 0, 0), 0.0f);
    EXPECT_FLOAT_EQ(out.at(1, 0, 0), 0.5f);
    EXPECT_FLOAT_EQ(out.at(2, 0, 0), 1.0f);
}

TEST(Resize, RejectsBadDims) {
    Image img = const_image(4, 4, 0.5f);
    EXPECT_THROW(resize_bilinear(img, 0, 4), ArgumentError);
}

TEST(Views, SingleViewIsGlobalResize) {
    Rng rng(1);
    Image img = random_image(40, 52, rng);
    ViewSet vs = generate_views(img, 1, 16, rng);
    ASSERT_EQ(vs.count(), 1u);
    EXPECT_EQ(vs.origins[0].kind, ViewKind::GlobalResize);
    EXPECT_EQ(vs.views[0].data, resize_bilinear(img, 16, 16).data);
}

TEST(Views, DeterministicForSeed) {
    Rng rng_img(2);
    Image img = random_image(100, 100, rng_img);
    Rng a(99), b(99);
    ViewSet va = generate_views(img, 8, 32, a);
    ViewSet vb = generate_views(img, 8, 32, b);
    for (size_t i = 0; i < va.count(); ++i) {
        EXPECT_EQ(va.views[i].data, vb.views[i].data);
        EXPECT_EQ(va.origins[i].flipped, vb.origins[i].flipped);
        EXPECT_EQ(va.origins[i].x, vb.origins[i].x);
    }
}

TEST(Views, CropOriginsInBounds) {
    Rng rng_img(3);
    Image img = random_image(128, 128, rng_img);
    Rng rng(5);
    ViewSet vs = generate_views(img, 32, 64, rng);
    ASSERT_EQ(vs.count(), 32u);
    for (size_t i = 1; i < vs.count(); ++i) {
        EXPECT_EQ(vs.origins[i].kind, ViewKind::Crop);
        EXPECT_LE(vs.origins[i].x + 64, 128);
        EXPECT_LE(vs.origins[i].y + 64, 128);
        EXPECT_EQ(vs.views[i].height, 64);
        EXPECT_EQ(vs.views[i].width, 64);
        EXPECT_EQ(vs.views[i].data.size(), 64u * 64u * 3u);
    }
}

TEST(Views, SmallImageFallsBackToCropResize) {
    Rng rng_img(4);
    Image img = random_image(40, 40, rng_img);
    Rng rng(6);
    ViewSet vs = generate_views(img, 32, 64, rng);
    for (size_t i = 1; i < vs.count(); ++i) {
        EXPECT_EQ(vs.origins[i].kind, ViewKind::CropResize);
        EXPECT_GE(vs.origins[i].side, 20);
        EXPECT_LE(vs.origins[i].side, 40);
        EXPECT_EQ(vs.views[i].height, 64);
    }
}

TEST(Views, ZeroViewsRejected) {
    Rng rng(1);
    Image img = const_image(16, 16, 0.3f);
    EXPECT_THROW(generate_views(img, 0, 16, rng), ArgumentError);
}

TEST(Views, FlipActuallyMirrors) {
    Rng rng_img(8);
    Image img = random_image(64, 64, rng_img);
    Rng rng(11);
    ViewSet vs = generate_views(img, 64, 32, rng);
    int flipped = 0;
    for (size_t i = 1; i < vs.count(); ++i) {
        const auto& o = vs.origins[i];
        Image expect = crop(img, o.y, o.x, o.side);
        if (o.flipped) {
            expect = hflip(expect);
            ++flipped;
        }
        EXPECT_EQ(vs.views[i].data, expect.data);
    }
    EXPECT_GT(flipped, 10);
    EXPECT_LT(flipped, 53);
}

TEST(Patches, ExactTiling) {
    Image img = const_image(64, 64, 0.2f);
    PatchGrid grid = partition_patches(img, 32);
    ASSERT_EQ(grid.patches.size(), 4u);
    EXPECT_EQ(grid.positions[0], std::make_pair(0, 0));
    EXPECT_EQ(grid.positions[1], std::make_pair(0, 1));
    EXPECT_EQ(grid.positions[2], std::make_pair(1, 0));
    EXPECT_EQ(grid.positions[3], std::make_pair(1, 1));
}

TEST(Patches, RemainderDiscarded) {
    Image img = const_image(70, 70, 0.1f);
    EXPECT_EQ(partition_patches(img, 32).patches.size(), 4u);
}

TEST(Patches, CountMatchesLoopOracle) {
    Image img = const_image(448, 448, 0.0f);
    PatchGrid grid = partition_patches(img, 32);
    size_t expect = 0;
    for (int y = 0; y + 32 <= 448; y += 32)
        for (int x = 0; x + 32 <= 448; x += 32) ++expect;
    EXPECT_EQ(grid.patches.size(), expect);
    EXPECT_EQ(expect, 196u);
}

TEST(Patches, TooSmallRejected) {
    Image img = const_image(16, 16, 0.0f);
    EXPECT_THROW(partition_patches(img, 32), ArgumentError);
}

TEST(Dct, ConstantSignal) {
    int n = 8;
    std::vector<double> x(n * n, 0.7);
    std::vector<double> y = dct2(x, n);
    EXPECT_NEAR(y[0], 0.7 * n, 1e-12);
    for (int i = 1; i < n * n; ++i) EXPECT_NEAR(y[i], 0.0, 1e-12);
}

TEST(Dct, TwoByTwoKnownValues) {
    std::vector<double> x = {1, 0, 0, 0};
    std::vector<double> y = dct2(x, 2);
    for (double v : y) EXPECT_NEAR(v, 0.5, 1e-15);
}

TEST(Dct, MatchesDefinitionOracle) {
    Rng rng(17);
    int n = 8;
    std::vector<double> x(n * n);
    for (auto& v : x) v = rng.uniform(-1, 1);
    std::vector<double> got = dct2(x, n);
    std::vector<double> want = dct2_oracle(x, n);
    for (int i = 0; i < n * n; ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Dct, ParsevalAndRoundTrip) {
    Rng rng(18);
    int n = 16;
    std::vector<double> x(n * n);
    for (auto& v : x) v = rng.uniform(-2, 2);
    std::vector<double> y = dct2(x, n);
    double ex = 0, ey = 0;
    for (int i = 0; i < n * n; ++i) {
        ex += x[i] * x[i];
        ey += y[i] * y[i];
    }
    EXPECT_NEAR(ey / ex, 1.0, 1e-9);
    std::vector<double> back = idct2(y, n);
    for (int i = 0; i < n * n; ++i) EXPECT_NEAR(back[i], x[i], 1e-9);
}

TEST(Richness, ConstantPatchScoresZero) {
    EXPECT_NEAR(dct_richness(const_image(32, 32, 0.42f)), 0.0, 1e-9);
}

TEST(Richness, CheckerboardBeatsGradient) {
    Image checker(32, 32), grad(32, 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int c = 0; c < 3; ++c) {
                checker.at(y, x, c) = ((x + y) % 2) ? 1.0f : 0.0f;
                grad.at(y, x, c) = static_cast<float>(x) / 31.0f;
            }
    EXPECT_GE(dct_richness(checker), dct_richness(grad));
}

TEST(Richness, OffsetInvariant) {
    // dyadic values keep the +0.25 shift exact in float storage
    Rng rng(19);
    Image a(32, 32);
    for (auto& v : a.data) v = static_cast<float>(rng.uniform_int(51, 153)) / 256.0f;
    Image b = a;
    for (auto& v : b.data) v += 0.25f;
    EXPECT_NEAR(dct_richness(a), dct_richness(b), 1e-9);
}

TEST(RichestPatch, UniqueTexturedWins) {
    Image img = const_image(64, 64, 0.5f);
    for (int y = 32; y < 64; ++y)
        for (int x = 32; x < 64; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = ((x + y) % 2) ? 0.9f : 0.1f;
    PatchGrid grid = partition_patches(img, 32);
    EXPECT_EQ(select_richest_patch(grid), 3u);
}

TEST(RichestPatch, TieBreaksToFirst) {
    PatchGrid grid = partition_patches(const_image(64, 64, 0.5f), 32);
    EXPECT_EQ(select_richest_patch(grid), 0u);
}

TEST(RichestPatch, MatchesBruteForce) {
    Rng rng(20);
    for (int trial = 0; trial < 100; ++trial) {
        Image img = random_image(64, 64, rng);
        PatchGrid grid = partition_patches(img, 16);
        size_t got = select_richest_patch(grid);
        size_t best = 0;
        double best_score = -1;
        for (size_t i = 0; i < grid.patches.size(); ++i) {
            double s = dct_richness(grid.patches[i]);
            if (s > best_score) {
                best_score = s;
                best = i;
            }
        }
        EXPECT_EQ(got, best);
    }
}

TEST(RichestPatch, EmptyGridRejected) {
    PatchGrid grid;
    EXPECT_THROW(select_richest_patch(grid), ArgumentError);
}

TEST(Residual, ConstantGivesZero) {
    ResidualStack rs = highpass_residual(const_image(32, 32, 0.77f));
    ASSERT_EQ(rs.planes.size(), 12u);
    for (const auto& plane : rs.planes)
        for (double v : plane) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Residual, SecondDifferenceKillsRamp) {
    Image ramp(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) ramp.at(y, x, c) = 0.03125f * x;  // exact dyadic slope
    ResidualStack rs = highpass_residual(ramp);
    // d2h is plane index 1 within each channel block
    const auto& d2h = rs.planes[1];
    for (int y = 0; y < 16; ++y)
        for (int x = 1; x < 15; ++x) EXPECT_NEAR(d2h[y * 16 + x], 0.0, 1e-9);
}

TEST(Residual, ImpulseReproducesFlippedKernel) {
    Image imp(8, 8);
    imp.at(4, 3, 0) = 1.0f;  // red channel impulse
    ResidualStack rs = highpass_residual(imp);
    for (size_t k = 0; k < highpass_kernels().size(); ++k) {
        const auto& ker = highpass_kernels()[k];
        const auto& plane = rs.planes[k];  // channel 0 block
        int ah = (ker.kh - 1) / 2, aw = (ker.kw - 1) / 2;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                // direct convolution identity: response of an impulse at (p,q)
                // equals taps[i][j]/quant at (p - ah + i, q - aw + j)
                int i = y - 4 + ah, j = x - 3 + aw;
                double want = 0.0;
                if (i >= 0 && i < ker.kh && j >= 0 && j < ker.kw)
                    want = ker.taps[i * ker.kw + j] / ker.quant;
                EXPECT_NEAR(plane[y * 8 + x], want, 1e-12) << ker.id << " at " << y << "," << x;
            }
    }
}

TEST(Residual, Linearity) {
    // dyadic pixel values keep a*x + b*y exactly representable, so the
    // identity can be held to 1e-9
    Rng rng(21);
    Image x(16, 16), y(16, 16);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform_int(0, 256)) / 256.0f;
    for (auto& v : y.data) v = static_cast<float>(rng.uniform_int(0, 256)) / 256.0f;
    double a = 0.5, b = 0.25;
    Image mix(16, 16);
    for (size_t i = 0; i < mix.data.size(); ++i)
        mix.data[i] = static_cast<float>(a * x.data[i] + b * y.data[i]);
    ResidualStack rx = highpass_residual(x), ry = highpass_residual(y), rm = highpass_residual(mix);
    for (size_t p = 0; p < rm.planes.size(); ++p)
        for (size_t i = 0; i < rm.planes[p].size(); ++i) {
            double lin = a * rx.planes[p][i] + b * ry.planes[p][i];
            EXPECT_NEAR(rm.planes[p][i], lin, 1e-9);
        }
}
