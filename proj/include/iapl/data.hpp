#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/image.hpp"
#include "iapl/image_io.hpp"
#include "iapl/rng.hpp"

namespace iapl {

enum class Family { Real, FakeA, FakeB, External };

inline std::string family_name(Family f) {
    switch (f) {
        case Family::Real: return "real";
        case Family::FakeA: return "fakeA";
        case Family::FakeB: return "fakeB";
        case Family::External: return "external";
    }
    return "?";
}

inline Family family_from_name(const std::string& s) {
    if (s == "real") return Family::Real;
    if (s == "fakeA") return Family::FakeA;
    if (s == "fakeB") return Family::FakeB;
    if (s == "external") return Family::External;
    throw ArgumentError("unknown family: " + s);
}

struct Sample {
    Image image;
    int label = 0;  // 0 real, 1 fake
    Family family = Family::Real;
};

struct SyntheticParams {
    double checker_amp = 0.03;   // fakeA checkerboard amplitude
    double sine_amp = 0.03;      // fakeB sinusoid amplitude
    double block_strength = 0.02;  // fakeB blockwise mean quantization
};

namespace detail {

// One octave: a coarse uniform grid bilinearly upsampled to size x size
// (corner aligned).
inline void add_octave(std::vector<double>& acc, int size, int grid, double amp, Rng& rng) {
    std::vector<double> g(static_cast<size_t>(grid) * grid);
    for (auto& v : g) v = rng.uniform();
    double s = grid > 1 ? static_cast<double>(grid - 1) / (size - 1) : 0.0;
    for (int y = 0; y < size; ++y) {
        double fy = y * s;
        int y0 = std::min(static_cast<int>(fy), grid - 1);
        int y1 = std::min(y0 + 1, grid - 1);
        double wy = fy - y0;
        for (int x = 0; x < size; ++x) {
            double fx = x * s;
            int x0 = std::min(static_cast<int>(fx), grid - 1);
            int x1 = std::min(x0 + 1, grid - 1);
            double wx = fx - x0;
            double v = (1 - wy) * ((1 - wx) * g[y0 * grid + x0] + wx * g[y0 * grid + x1]) +
                       wy * ((1 - wx) * g[y1 * grid + x0] + wx * g[y1 * grid + x1]);
            acc[static_cast<size_t>(y) * size + x] += amp * v;
        }
    }
}

}  // namespace detail

// Stand-in for natural images: 3-6 octaves of smooth value noise per channel,
// min-max normalized to [0,1].
inline Image gen_real(Rng& rng, int size) {
    if (size < 16) throw ArgumentError("gen_real: size must be >= 16");
    Image img(size, size);
    int octaves = rng.uniform_int(3, 6);
    for (int c = 0; c < 3; ++c) {
        std::vector<double> acc(static_cast<size_t>(size) * size, 0.0);
        for (int o = 0; o < octaves; ++o) {
            int grid = (2 << o) + 1;  // 3, 5, 9, 17, ...
            detail::add_octave(acc, size, grid, std::pow(0.5, o), rng);
        }
        double lo = acc[0], hi = acc[0];
        for (double v : acc) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        double span = hi - lo;
        for (int i = 0; i < size * size; ++i) {
            double v = span > 0 ? (acc[i] - lo) / span : 0.5;
            img.data[static_cast<size_t>(i) * 3 + c] = static_cast<float>(v);
        }
    }
    return img;
}

// Procedural generator traces. fakeA carries a period-2 checkerboard (an
// upsampling-style trace); fakeB carries a diagonal mid-frequency sinusoid
// plus 8x8 blockwise mean quantization (a codec-style trace).
inline Image gen_fake(Rng& rng, Family family, int size,
                      const SyntheticParams& sp = SyntheticParams{}) {
    if (family != Family::FakeA && family != Family::FakeB)
        throw ArgumentError("gen_fake: family must be fakeA or fakeB");
    Image img = gen_real(rng, size);
    auto clip01 = [](double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); };
    if (family == Family::FakeA) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                double sign = ((x + y) % 2 == 0) ? 1.0 : -1.0;
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = clip01(img.at(y, x, c) + sp.checker_amp * sign);
            }
        return img;
    }
    // fakeB: period-4 diagonal sinusoid
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double s = std::sin(2.0 * M_PI * (x + y) / 4.0);
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = clip01(img.at(y, x, c) + sp.sine_amp * s);
        }
    // blockwise mean quantization, 8x8, mean snapped to multiples of 1/8
    const int bs = 8;
    for (int by = 0; by < size; by += bs)
        for (int bx = 0; bx < size; bx += bs) {
            int h = std::min(bs, size - by), w = std::min(bs, size - bx);
            for (int c = 0; c < 3; ++c) {
                double mean = 0.0;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) mean += img.at(by + y, bx + x, c);
                mean /= h * w;
                double shift = std::round(mean * 8.0) / 8.0 - mean;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        img.at(by + y, bx + x, c) =
                            clip01(img.at(by + y, bx + x, c) + sp.block_strength * shift);
            }
        }
    return img;
}

struct DatasetSpec {
    enum class Kind { Synthetic, Directory } kind = Kind::Synthetic;
    std::map<Family, int> counts;  // synthetic
    int size = 64;
    uint64_t seed = 0;
    std::string root;  // directory
    SyntheticParams synth;
};

namespace detail {

inline std::vector<std::string> sorted_files(const std::filesystem::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file()) out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<Sample> load_directory(const DatasetSpec& spec) {
    namespace fs = std::filesystem;
    fs::path root(spec.root);
    if (!fs::is_directory(root)) throw DataError("dataset root not found: " + spec.root);
    // Family tags come from manifest.csv when present, else "external".
    std::map<std::string, Family> families;
    fs::path manifest = root / "manifest.csv";
    if (fs::exists(manifest)) {
        std::ifstream in(manifest);
        std::string line;
        std::getline(in, line);  // header
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            size_t c1 = line.find(',');
            size_t c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw DataError("bad manifest line: " + line);
            families[line.substr(0, c1)] = family_from_name(line.substr(c2 + 1));
        }
    }
    std::vector<Sample> out;
    for (const char* cls : {"real", "fake"}) {
        fs::path dir = root / cls;
        if (!fs::is_directory(dir)) throw DataError("missing class folder: " + dir.string());
        std::vector<std::string> files = sorted_files(dir);
        if (files.empty()) throw DataError("empty class folder: " + dir.string());
        for (const auto& f : files) {
            Sample s;
            s.image = load_image(f);
            s.label = std::string(cls) == "fake" ? 1 : 0;
            std::string rel = (fs::path(cls) / fs::path(f).filename()).string();
            auto it = families.find(rel);
            s.family = it != families.end()
                           ? it->second
                           : (s.label ? Family::External : Family::Real);
            out.push_back(std::move(s));
        }
    }
    return out;
}

}  // namespace detail

// Synthetic datasets are sample-indexed: sample i draws from fork(seed, i),
// so generation order or parallelism cannot change the content.
inline std::vector<Sample> build_dataset(const DatasetSpec& spec) {
    if (spec.kind == DatasetSpec::Kind::Directory) return detail::load_directory(spec);
    std::vector<Sample> out;
    Rng base(spec.seed);
    uint64_t index = 0;
    for (const auto& [family, count] : spec.counts) {
        if (count < 0) throw ArgumentError("build_dataset: negative count");
        for (int i = 0; i < count; ++i, ++index) {
            Rng rng = base.fork(index);
            Sample s;
            s.family = family;
            if (family == Family::Real) {
                s.image = gen_real(rng, spec.size);
                s.label = 0;
            } else if (family == Family::FakeA || family == Family::FakeB) {
                s.image = gen_fake(rng, family, spec.size, spec.synth);
                s.label = 1;
            } else {
                throw ArgumentError("build_dataset: synthetic spec cannot contain external");
            }
            out.push_back(std::move(s));
        }
    }
    if (out.empty()) throw DataError("build_dataset: empty dataset");
    return out;
}

// Writes <root>/{real,fake}/*.png plus manifest.csv (path,label,family).
inline void write_dataset(const std::vector<Sample>& samples, const std::string& root) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(root) / "real");
    fs::create_directories(fs::path(root) / "fake");
    std::ofstream manifest(fs::path(root) / "manifest.csv");
    if (!manifest) throw IoError("cannot write manifest under " + root);
    manifest << "path,label,family\n";
    std::map<Family, int> counters;
    for (const auto& s : samples) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%05d.png", family_name(s.family).c_str(),
                      counters[s.family]++);
        std::string cls = s.label ? "fake" : "real";
        std::string rel = cls + "/" + name;
        save_png(s.image, (fs::path(root) / rel).string());
        manifest << rel << "," << s.label << "," << family_name(s.family) << "\n";
    }
}

}  // namespace iapl
