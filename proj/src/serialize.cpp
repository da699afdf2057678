#include "beamsight/serialize.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace beamsight {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                       static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("truncated tensor container");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xffffffffu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

void save_tensors(const std::string& path, const std::vector<TensorRef>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, static_cast<std::uint32_t>(tensors.size()));
  std::vector<std::uint8_t> payload;
  for (const auto& t : tensors) {
    put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(os, d);
    const std::size_t n = t.size();
    payload.resize(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
      const float f = static_cast<float>(t.data[i]);
      std::memcpy(payload.data() + i * 4, &f, 4);
    }
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    put_u32(os, crc32(payload.data(), payload.size()));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

void load_tensors(const std::string& path, const std::vector<TensorRef>& tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad tensor container magic: " + path);
  if (get_u32(is) != kVersion) throw std::runtime_error("unsupported container version");
  const std::uint32_t count = get_u32(is);
  if (count != tensors.size()) throw std::runtime_error("tensor count mismatch in " + path);
  std::vector<std::uint8_t> payload;
  for (const auto& t : tensors) {
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (name != t.name) throw std::runtime_error("tensor name mismatch: " + name + " vs " + t.name);
    const std::uint32_t ndim = get_u32(is);
    if (ndim != t.shape.size()) throw std::runtime_error("tensor rank mismatch: " + name);
    for (auto d : t.shape) {
      if (get_u32(is) != d) throw std::runtime_error("tensor shape mismatch: " + name);
    }
    const std::size_t n = t.size();
    payload.resize(n * 4);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!is) throw std::runtime_error("truncated tensor payload: " + name);
    const std::uint32_t crc = get_u32(is);
    if (crc != crc32(payload.data(), payload.size()))
      throw std::runtime_error("tensor checksum mismatch: " + name);
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, payload.data() + i * 4, 4);
      t.data[i] = static_cast<double>(f);
    }
  }
}

}  // namespace beamsight
