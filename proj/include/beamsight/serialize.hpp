#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace beamsight {

// Named tensor view used for model persistence and gradient bookkeeping.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  std::vector<std::uint32_t> shape;
  std::size_t size() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
};

std::uint32_t crc32(const std::uint8_t* data, std::size_t n);

// Container layout (little-endian):
//   magic "BSNT", u32 version, u32 tensor count, then per tensor:
//   u32 name length, name bytes, u32 ndim, u32 dims..., f32 payload,
//   u32 crc32 of the payload bytes.
void save_tensors(const std::string& path, const std::vector<TensorRef>& tensors);

// Loads into pre-registered tensors; names and shapes must match.
void load_tensors(const std::string& path, const std::vector<TensorRef>& tensors);

}  // namespace beamsight
