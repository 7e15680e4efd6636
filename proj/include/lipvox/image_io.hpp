#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace lipvox::image {

// 8-bit RGB, row-major HWC.
void write_png_rgb(const std::filesystem::path& path, std::span<const uint8_t> pixels,
                   int width, int height);
std::vector<uint8_t> read_png_rgb(const std::filesystem::path& path, int& width,
                                  int& height);

}  // namespace lipvox::image
