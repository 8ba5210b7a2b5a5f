#include "hyperlora/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>

#include "hyperlora/common.hpp"

namespace hyperlora {

void write_png(const std::string& path, const ImageU8& img) {
    if (img.width <= 0 || img.height <= 0 || img.rgb.size() != static_cast<size_t>(3 * img.width * img.height))
        throw IoError("write_png: inconsistent image buffer");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("write_png: cannot open '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("write_png: libpng failure for '" + path + "'");
    }
    png_init_io(png, fp);
    png_set_compression_level(png, 6);  // fixed settings keep files reproducible
    png_set_filter(png, 0, PNG_FILTER_NONE);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] = const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(3 * y * img.width));
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

ImageU8 read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("read_png: cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("read_png: libpng failure for '" + path + "'");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    ImageU8 img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.rgb.resize(static_cast<size_t>(3 * img.width * img.height));
    std::vector<png_bytep> rows(static_cast<size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<size_t>(y)] = img.rgb.data() + static_cast<size_t>(3 * y * img.width);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

ImageU8 to_u8(const Tensor& chw) {
    if (chw.shape().rank != 3 || chw.shape()[0] != 3) throw ShapeError("to_u8 expects [3,H,W], got " + chw.shape().str());
    const int h = static_cast<int>(chw.shape()[1]), w = static_cast<int>(chw.shape()[2]);
    ImageU8 img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(3 * w * h));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = chw.at((c * h + y) * w + x);
                v = std::min(1.0f, std::max(-1.0f, v));
                img.rgb[static_cast<size_t>(3 * (y * w + x) + c)] =
                    static_cast<uint8_t>(std::lround((v + 1.0f) * 0.5f * 255.0f));
            }
    return img;
}

Tensor to_tensor(const ImageU8& img) {
    Tensor t(Shape{3, img.height, img.width});
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                t.at((c * img.height + y) * img.width + x) =
                    static_cast<float>(img.rgb[static_cast<size_t>(3 * (y * img.width + x) + c)]) / 255.0f * 2.0f -
                    1.0f;
    return t;
}

}  // namespace hyperlora
