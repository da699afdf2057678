#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace beamsight {

// Row-major interleaved byte image; c = 1 for masks/planes, 3 for RGB.
struct ImageU8 {
  int w = 0;
  int h = 0;
  int c = 1;
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(int width, int height, int channels, std::uint8_t fill = 0)
      : w(width), h(height), c(channels),
        data(static_cast<std::size_t>(width) * height * channels, fill) {}

  std::uint8_t& at(int x, int y, int ch = 0) {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  std::uint8_t at(int x, int y, int ch = 0) const {
    return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
  }
  bool same_dims(const ImageU8& o) const { return w == o.w && h == o.h && c == o.c; }
};

// Binary PPM (P6) for RGB, binary PGM (P5) for single-channel.
void save_ppm(const ImageU8& img, const std::string& path);
ImageU8 load_ppm(const std::string& path);
void save_pgm(const ImageU8& img, const std::string& path);
ImageU8 load_pgm(const std::string& path);

// Stream forms used by multi-plane container formats.
void write_pgm(std::ostream& os, const ImageU8& img);
ImageU8 read_pgm(std::istream& is);

// Nearest-neighbour resize (any channel count).
ImageU8 resize_nearest(const ImageU8& src, int out_w, int out_h);

}  // namespace beamsight
