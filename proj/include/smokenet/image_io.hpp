#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smokenet/common.hpp"

namespace smokenet {

// 8-bit raster, row-interleaved (HWC); channels is 1 (grayscale) or 3 (RGB).
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int y, int x, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    std::uint8_t& at(int y, int x, int c) {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
};

// Decode a raster file to RGB (force_channels=3) or grayscale (1).
ImageU8 read_image(const std::string& path, int force_channels);

// Encode as PNG.
void write_image(const std::string& path, const ImageU8& img);

}  // namespace smokenet
