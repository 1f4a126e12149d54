// File formats: 8-bit grayscale PNG, flat little-endian float32 tensors with
// a shape header, and JSON sidecar records.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "micrograin/errors.hpp"
#include "micrograin/field.hpp"

namespace micrograin {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// PNG

inline void write_png_gray8(const std::string& path, int rows, int cols,
                            const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != static_cast<std::size_t>(rows) * cols)
        throw ShapeError("write_png_gray8: pixel count mismatch");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("libpng write failure: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, cols, rows, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> row_ptrs(rows);
    for (int i = 0; i < rows; ++i)
        row_ptrs[i] = const_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(i) * cols);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

struct GrayImage {
    int rows = 0;
    int cols = 0;
    std::vector<std::uint8_t> pixels;
};

// Reads any PNG, converting to 8-bit grayscale.
inline GrayImage read_png_gray8(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open for reading: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("libpng read failure: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
        color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);

    GrayImage img;
    img.rows = static_cast<int>(png_get_image_height(png, info));
    img.cols = static_cast<int>(png_get_image_width(png, info));
    img.pixels.resize(static_cast<std::size_t>(img.rows) * img.cols);
    std::vector<png_bytep> row_ptrs(img.rows);
    for (int i = 0; i < img.rows; ++i)
        row_ptrs[i] = img.pixels.data() + static_cast<std::size_t>(i) * img.cols;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void write_microstructure_png(const std::string& path, const Microstructure& m) {
    std::vector<std::uint8_t> px(m.cells.size());
    for (std::size_t k = 0; k < m.cells.size(); ++k) px[k] = m.cells[k] ? 255 : 0;
    write_png_gray8(path, m.rows, m.cols, px);
}

// 0 = amorphous, 255 = crystal; anything in between splits at 128.
inline Microstructure read_microstructure_png(const std::string& path, double tc, std::uint64_t seed) {
    GrayImage img = read_png_gray8(path);
    std::vector<std::uint8_t> cells(img.pixels.size());
    for (std::size_t k = 0; k < img.pixels.size(); ++k) cells[k] = img.pixels[k] >= 128 ? 1 : 0;
    return Microstructure(img.rows, img.cols, std::move(cells), tc, seed);
}

// ---------------------------------------------------------------------------
// Flat float32 tensor files: magic "MGT1", u32 ndim, u32 dims[ndim], payload.
// All integers and floats little-endian.

struct TensorFile {
    std::vector<std::uint32_t> shape;
    std::vector<float> data;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

inline void write_tensor_f32(const std::string& path, const TensorFile& t) {
    if (t.data.size() != t.element_count())
        throw ShapeError("write_tensor_f32: payload does not match shape");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    const char magic[4] = {'M', 'G', 'T', '1'};
    out.write(magic, 4);
    std::uint32_t ndim = static_cast<std::uint32_t>(t.shape.size());
    out.write(reinterpret_cast<const char*>(&ndim), 4);
    out.write(reinterpret_cast<const char*>(t.shape.data()), 4 * ndim);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(4 * t.data.size()));
    if (!out) throw IoError("short write: " + path);
}

inline TensorFile read_tensor_f32(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MGT1", 4) != 0)
        throw IoError("bad tensor magic: " + path);
    std::uint32_t ndim = 0;
    in.read(reinterpret_cast<char*>(&ndim), 4);
    if (!in || ndim > 8) throw IoError("bad tensor rank: " + path);
    TensorFile t;
    t.shape.resize(ndim);
    in.read(reinterpret_cast<char*>(t.shape.data()), 4 * ndim);
    t.data.resize(t.element_count());
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(4 * t.data.size()));
    if (!in) throw IoError("short read: " + path);
    return t;
}

// ---------------------------------------------------------------------------
// JSON sidecars

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

inline json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    json j;
    in >> j;
    return j;
}

// Sidecar record written next to every exported microstructure.
inline json microstructure_metadata(const Microstructure& m, long steps) {
    json j;
    j["tc"] = m.tc;
    j["seed"] = m.seed;
    j["grid"] = {m.rows, m.cols};
    j["steps"] = steps;
    j["crystal_fraction"] = m.crystal_fraction;
    return j;
}

} // namespace micrograin
