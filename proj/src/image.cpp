#include "graspbench/image.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

namespace graspbench {

Image::Image(int w, int h, int c)
    : width(w), height(h), channels(c),
      data(static_cast<size_t>(w) * h * c, 0) {
  if (w <= 0 || h <= 0 || c <= 0) {
    throw std::invalid_argument("Image: dimensions must be positive");
  }
}

Image Image::filled(int w, int h, std::array<uint8_t, 3> rgb) {
  Image img(w, h, 3);
  for (size_t i = 0; i < img.data.size(); i += 3) {
    img.data[i] = rgb[0];
    img.data[i + 1] = rgb[1];
    img.data[i + 2] = rgb[2];
  }
  return img;
}

void write_ppm(const Image& img, const std::filesystem::path& path) {
  if (img.channels != 3) {
    throw std::invalid_argument("write_ppm: requires a 3-channel image");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path.string());
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255) {
    throw std::runtime_error("read_ppm: bad header in " + path.string());
  }
  in.get();  // single whitespace after maxval
  Image img(w, h, 3);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (!in) throw std::runtime_error("read_ppm: truncated pixel data in " + path.string());
  return img;
}

}  // namespace graspbench
