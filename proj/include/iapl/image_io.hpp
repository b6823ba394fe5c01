#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "iapl/errors.hpp"
#include "iapl/image.hpp"

namespace iapl {

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline Image decode_png(std::FILE* fp, const std::string& path) {
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png: out of memory");
    }
    std::vector<uint8_t> pixels;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("png: failed to decode " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_set_interlace_handling(png);
    png_read_update_info(png, info);

    size_t stride = png_get_rowbytes(png, info);
    pixels.resize(stride * h);
    rows.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = pixels.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (stride < static_cast<size_t>(w) * 3) throw FormatError("png: unexpected row layout in " + path);
    Image out(static_cast<int>(h), static_cast<int>(w));
    for (png_uint_32 y = 0; y < h; ++y)
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = pixels[y * stride + x * 3 + c] / 255.0f;
    return out;
}

inline int ppm_next_token(std::FILE* fp, std::string& tok) {
    tok.clear();
    int ch;
    while ((ch = std::fgetc(fp)) != EOF) {
        if (ch == '#') {
            while ((ch = std::fgetc(fp)) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return 0;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok.empty() ? -1 : 0;
}

inline Image decode_ppm(std::FILE* fp, const std::string& path) {
    std::string tok;
    if (ppm_next_token(fp, tok) != 0 || tok != "P6") throw FormatError("ppm: bad magic in " + path);
    long vals[3];
    for (int i = 0; i < 3; ++i) {
        if (ppm_next_token(fp, tok) != 0) throw FormatError("ppm: truncated header in " + path);
        vals[i] = std::strtol(tok.c_str(), nullptr, 10);
    }
    long w = vals[0], h = vals[1], maxval = vals[2];
    if (w < 1 || h < 1) throw FormatError("ppm: bad dimensions in " + path);
    if (maxval != 255) throw FormatError("ppm: only 8-bit maxval supported in " + path);
    std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
    if (std::fread(raw.data(), 1, raw.size(), fp) != raw.size())
        throw FormatError("ppm: truncated pixel data in " + path);
    Image out(static_cast<int>(h), static_cast<int>(w));
    for (size_t i = 0; i < raw.size(); ++i) out.data[i] = raw[i] / 255.0f;
    return out;
}

inline uint8_t quantize8(float v) {
    float x = v * 255.0f + 0.5f;
    if (x < 0.0f) x = 0.0f;
    if (x > 255.0f) x = 255.0f;
    return static_cast<uint8_t>(x);
}

}  // namespace detail

// Reads a PNG or binary PPM (P6) raster; 8-bit samples are normalized by 255.
// The format is sniffed from the file's magic bytes.
inline Image load_image(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);
    uint8_t sig[8] = {0};
    size_t got = std::fread(sig, 1, sizeof(sig), fp.get());
    std::rewind(fp.get());
    static const uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (got >= 8 && std::memcmp(sig, png_sig, 8) == 0) return detail::decode_png(fp.get(), path);
    if (got >= 2 && sig[0] == 'P' && sig[1] == '6') return detail::decode_ppm(fp.get(), path);
    throw FormatError("unsupported image format: " + path);
}

inline void save_png(const Image& img, const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png: out of memory");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png: out of memory");
    }
    std::vector<uint8_t> raw(static_cast<size_t>(img.height) * img.width * 3);
    std::vector<png_bytep> rows(img.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png: failed to encode " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = detail::quantize8(img.data[i]);
    for (int y = 0; y < img.height; ++y)
        rows[y] = raw.data() + static_cast<size_t>(y) * img.width * 3;
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline void save_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> raw(static_cast<size_t>(img.height) * img.width * 3);
    for (size_t i = 0; i < raw.size(); ++i) raw[i] = detail::quantize8(img.data[i]);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace iapl
