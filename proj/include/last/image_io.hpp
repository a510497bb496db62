#pragma once

#include <filesystem>
#include <vector>

namespace last {

/// 8-bit RGB image as floats in [0, 1], row-major HWC.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;
};

/// Throws std::runtime_error on I/O or decode failure.
RgbImage read_png(const std::filesystem::path& path);

/// Values are clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace last
