#pragma once

#include <string>
#include <vector>

#include "beamsight/channel.hpp"
#include "beamsight/image.hpp"
#include "beamsight/scene.hpp"

namespace beamsight::fusion {

// Beam span boundaries projected onto pixel columns at the anchor row (the
// bottom image row, where street objects sit). bounds has Q+1 monotone
// entries in continuous column coordinates; integer intervals are derived
// half-open and clipped to [0, width).
struct ColumnMap {
  std::vector<double> bounds;
  int width = 0;
  int height = 0;
  int anchor_row = 0;

  int beams() const { return static_cast<int>(bounds.size()) - 1; }
  std::pair<int, int> interval(int q) const;
  // Beam whose continuous column range contains `col`, -1 outside.
  int beam_of_column(double col) const;
};

// Continuous column at which the ground ray at `azimuth` crosses the anchor
// row. Throws when the ray cannot reach that row in front of the camera.
double azimuth_to_anchor_col(const scene::Camera& cam, double azimuth, int anchor_row);

// Span boundaries of every beam projected at the bottom row; throws when the
// codebook sector has no overlap with the camera field of view.
ColumnMap beam_column_map(const channel::Codebook& cb, const scene::Camera& cam);

// Full-column fill with the per-frame max-normalised profile, quantised to
// bytes; zero profile gives a zero plane.
ImageU8 rasterize_profile(const channel::PowerProfile& profile, const ColumnMap& colmap, int h,
                          int w);

struct FusedImage {
  ImageU8 plane1;  // preprocessed visual
  ImageU8 plane2;  // power raster
  ImageU8 plane3;  // all zeros
  scene::PreprocessMode mode = scene::PreprocessMode::method1;
};

FusedImage fuse(const ImageU8& visual_plane, const ImageU8& power_plane,
                scene::PreprocessMode mode);

std::string mode_name(scene::PreprocessMode mode);
scene::PreprocessMode mode_from_name(const std::string& name);

// One-line mode header followed by three concatenated binary PGM planes.
void save_fused(const FusedImage& fused, const std::string& path);
FusedImage load_fused(const std::string& path);

}  // namespace beamsight::fusion
