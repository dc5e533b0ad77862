#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace graspbench {

/// 8-bit raster, row-major, interleaved channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> data;

  Image() = default;
  Image(int w, int h, int c);

  uint8_t& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
  uint8_t at(int x, int y, int c) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }

  static Image filled(int w, int h, std::array<uint8_t, 3> rgb);
};

// Binary P6 PPM. Requires channels == 3.
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace graspbench
