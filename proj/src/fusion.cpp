#include "beamsight/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace beamsight::fusion {

std::pair<int, int> ColumnMap::interval(int q) const {
  const int c0 = std::clamp(static_cast<int>(std::ceil(bounds[q])), 0, width);
  const int c1 = std::clamp(static_cast<int>(std::ceil(bounds[q + 1])), 0, width);
  return {c0, std::max(c0, c1)};
}

int ColumnMap::beam_of_column(double col) const {
  if (bounds.empty() || col < bounds.front() || col >= bounds.back()) return -1;
  const auto it = std::upper_bound(bounds.begin(), bounds.end(), col);
  return static_cast<int>(it - bounds.begin()) - 1;
}

double azimuth_to_anchor_col(const scene::Camera& cam, double azimuth, int anchor_row) {
  const double ca = std::cos(cam.pitch_down), sa = std::sin(cam.pitch_down);
  const double cyaw = std::cos(cam.yaw), syaw = std::sin(cam.yaw);
  const Eigen::Vector3d right(cyaw, 0, -syaw);
  const Eigen::Vector3d up(syaw * sa, ca, cyaw * sa);
  const Eigen::Vector3d forward(syaw * ca, -sa, cyaw * ca);
  const Eigen::Vector3d dir(std::sin(azimuth), 0, std::cos(azimuth));
  const Eigen::Vector3d base(0, -cam.height_m, 0);  // ground under the camera

  // Solve v(P(s)) == anchor_row for the ground-ray parameter s; both camera
  // coordinates are affine in s, so this is linear.
  const double a1 = dir.dot(forward), b1 = base.dot(forward);
  const double a2 = dir.dot(up), b2 = base.dot(up);
  const double dv = cam.cy - anchor_row;
  const double denom = dv * a1 - cam.focal_px * a2;
  if (std::abs(denom) < 1e-12)
    throw std::domain_error("azimuth_to_anchor_col: ray parallel to anchor row");
  const double s = (cam.focal_px * b2 - dv * b1) / denom;
  const Eigen::Vector3d d = base + s * dir;
  const double zc = d.dot(forward);
  if (s <= 0 || zc <= 0)
    throw std::domain_error("azimuth_to_anchor_col: anchor row not reachable for this azimuth");
  return cam.cx + cam.focal_px * d.dot(right) / zc;
}

ColumnMap beam_column_map(const channel::Codebook& cb, const scene::Camera& cam) {
  ColumnMap map;
  map.width = cam.width_px;
  map.height = cam.height_px;
  map.anchor_row = cam.height_px - 1;
  map.bounds.resize(cb.size() + 1);
  for (int q = 0; q < cb.size(); ++q) {
    map.bounds[q] = azimuth_to_anchor_col(cam, cb.spans[q].lo, map.anchor_row);
  }
  map.bounds[cb.size()] = azimuth_to_anchor_col(cam, cb.spans.back().hi, map.anchor_row);
  for (int q = 0; q < cb.size(); ++q) {
    if (map.bounds[q + 1] < map.bounds[q])
      throw std::domain_error("beam_column_map: non-monotone column bounds");
  }
  if (map.bounds.back() <= 0 || map.bounds.front() >= map.width)
    throw std::invalid_argument("beam_column_map: sector does not overlap the field of view");
  return map;
}

ImageU8 rasterize_profile(const channel::PowerProfile& profile, const ColumnMap& colmap, int h,
                          int w) {
  if (profile.size() != colmap.beams())
    throw std::invalid_argument("rasterize_profile: profile/colmap beam count mismatch");
  ImageU8 plane(w, h, 1, 0);
  const double max_p = profile.powers.empty()
                           ? 0.0
                           : *std::max_element(profile.powers.begin(), profile.powers.end());
  if (max_p <= 0) return plane;
  for (int q = 0; q < profile.size(); ++q) {
    const auto [c0, c1] = colmap.interval(q);
    if (c0 >= c1 || c0 >= w) continue;
    const auto value =
        static_cast<std::uint8_t>(std::lround(255.0 * profile.powers[q] / max_p));
    const int hi = std::min(c1, w);
    for (int y = 0; y < h; ++y)
      for (int x = c0; x < hi; ++x) plane.at(x, y) = value;
  }
  return plane;
}

FusedImage fuse(const ImageU8& visual_plane, const ImageU8& power_plane,
                scene::PreprocessMode mode) {
  if (!visual_plane.same_dims(power_plane))
    throw std::invalid_argument("fuse: plane dimension mismatch");
  FusedImage fused;
  fused.plane1 = visual_plane;
  fused.plane2 = power_plane;
  fused.plane3 = ImageU8(visual_plane.w, visual_plane.h, 1, 0);
  fused.mode = mode;
  return fused;
}

std::string mode_name(scene::PreprocessMode mode) {
  switch (mode) {
    case scene::PreprocessMode::rgb: return "rgb";
    case scene::PreprocessMode::method1: return "method1";
    case scene::PreprocessMode::method2: return "method2";
  }
  return "method1";
}

scene::PreprocessMode mode_from_name(const std::string& name) {
  if (name == "rgb") return scene::PreprocessMode::rgb;
  if (name == "method1") return scene::PreprocessMode::method1;
  if (name == "method2") return scene::PreprocessMode::method2;
  throw std::invalid_argument("unknown preprocess mode: " + name);
}

void save_fused(const FusedImage& fused, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "fused " << mode_name(fused.mode) << "\n";
  write_pgm(os, fused.plane1);
  write_pgm(os, fused.plane2);
  write_pgm(os, fused.plane3);
  if (!os) throw std::runtime_error("write failed: " + path);
}

FusedImage load_fused(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string tag, mode;
  is >> tag >> mode;
  if (tag != "fused") throw std::runtime_error("bad fused header in " + path);
  is.get();
  FusedImage fused;
  fused.mode = mode_from_name(mode);
  fused.plane1 = read_pgm(is);
  fused.plane2 = read_pgm(is);
  fused.plane3 = read_pgm(is);
  return fused;
}

}  // namespace beamsight::fusion
