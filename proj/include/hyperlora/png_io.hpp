#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hyperlora/tensor.hpp"

namespace hyperlora {

// 8-bit RGB image, row-major, channel-interleaved.
struct ImageU8 {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> rgb;  // 3 * width * height
};

// Lossless PNG with fixed encoder settings, so identical pixels produce
// identical files.
void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

// Tensor layout for model images is CHW in [-1, 1]. The u8 mapping is the
// linear one: u8 = round((x + 1) / 2 * 255).
ImageU8 to_u8(const Tensor& chw);
Tensor to_tensor(const ImageU8& img);

}  // namespace hyperlora
