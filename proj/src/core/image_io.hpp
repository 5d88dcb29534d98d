#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace preview {

// Binary PGM (P5), 8 bit. Sufficient for the grayscale tile grids and
// trivially decodable in tests.
struct gray_image {
    int height = 0, width = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int r, int c) const { return pixels[size_t(r) * size_t(width) + size_t(c)]; }
    std::uint8_t& at(int r, int c) { return pixels[size_t(r) * size_t(width) + size_t(c)]; }
};

void write_pgm(const std::filesystem::path& path, const gray_image& img);
gray_image read_pgm(const std::filesystem::path& path);

}  // namespace preview
