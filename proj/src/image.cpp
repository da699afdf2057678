#include "beamsight/image.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace beamsight {

namespace {

void write_magic(std::ostream& os, const ImageU8& img, const char* magic) {
  os << magic << "\n" << img.w << " " << img.h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()),
           static_cast<std::streamsize>(img.data.size()));
}

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& is) {
  std::string tok;
  while (is >> tok) {
    if (tok[0] == '#') {
      std::string rest;
      std::getline(is, rest);
      continue;
    }
    return tok;
  }
  throw std::runtime_error("truncated PNM header");
}

ImageU8 read_pnm(std::istream& is, const char* magic, int channels) {
  const std::string m = next_token(is);
  if (m != magic) throw std::runtime_error("bad PNM magic: " + m);
  const int w = std::stoi(next_token(is));
  const int h = std::stoi(next_token(is));
  const int maxval = std::stoi(next_token(is));
  if (w <= 0 || h <= 0 || maxval != 255) throw std::runtime_error("unsupported PNM header");
  is.get();  // single whitespace before raster
  ImageU8 img(w, h, channels);
  is.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (!is) throw std::runtime_error("truncated PNM raster");
  return img;
}

}  // namespace

void save_ppm(const ImageU8& img, const std::string& path) {
  if (img.c != 3) throw std::invalid_argument("save_ppm expects a 3-channel image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_magic(os, img, "P6");
  if (!os) throw std::runtime_error("write failed: " + path);
}

ImageU8 load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_pnm(is, "P6", 3);
}

void save_pgm(const ImageU8& img, const std::string& path) {
  if (img.c != 1) throw std::invalid_argument("save_pgm expects a 1-channel image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  write_magic(os, img, "P5");
  if (!os) throw std::runtime_error("write failed: " + path);
}

ImageU8 load_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_pnm(is, "P5", 1);
}

void write_pgm(std::ostream& os, const ImageU8& img) {
  if (img.c != 1) throw std::invalid_argument("write_pgm expects a 1-channel image");
  write_magic(os, img, "P5");
}

ImageU8 read_pgm(std::istream& is) { return read_pnm(is, "P5", 1); }

ImageU8 resize_nearest(const ImageU8& src, int out_w, int out_h) {
  ImageU8 dst(out_w, out_h, src.c);
  for (int y = 0; y < out_h; ++y) {
    int sy = static_cast<int>((y + 0.5) * src.h / out_h);
    if (sy >= src.h) sy = src.h - 1;
    for (int x = 0; x < out_w; ++x) {
      int sx = static_cast<int>((x + 0.5) * src.w / out_w);
      if (sx >= src.w) sx = src.w - 1;
      for (int ch = 0; ch < src.c; ++ch) dst.at(x, y, ch) = src.at(sx, sy, ch);
    }
  }
  return dst;
}

}  // namespace beamsight
