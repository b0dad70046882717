#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace synb {

// 8-bit image, RGB (channels == 3) or grayscale (channels == 1), row-major
// interleaved pixels.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;  // width * height * channels

    std::uint8_t at(int y, int x, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t& at(int y, int x, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// Deterministic encode: filter type 0 on every scanline, zlib level 6.
std::vector<std::uint8_t> png_encode(const Image8& img);
void png_write(const std::string& path, const Image8& img);

// Decodes 8-bit RGB / RGBA / grayscale PNGs with any scanline filter;
// RGBA collapses to RGB. Throws std::runtime_error on malformed input.
Image8 png_decode(const std::vector<std::uint8_t>& bytes);
Image8 png_read(const std::string& path);

}  // namespace synb
