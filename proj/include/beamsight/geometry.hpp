#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "beamsight/bbox.hpp"
#include "beamsight/fusion.hpp"
#include "beamsight/image.hpp"

namespace beamsight::geometry {

using Segment = std::array<Eigen::Vector2d, 2>;

struct VanishingPoint {
  Eigen::Vector2d vp = Eigen::Vector2d::Zero();
  double residual = 0;  // mean squared point-line distance
};

enum class RegionVariant { strip, fan };

struct BeamRegion {
  int beam = -1;
  std::vector<Eigen::Vector2d> polygon;  // clipped to the image rectangle
  RegionVariant variant = RegionVariant::strip;
};

struct SearchSpace {
  std::vector<std::uint8_t> bits;
  int frame_t = 0;

  int popcount() const;
  std::string to_string01() const;
};

// Least-squares intersection of the segments' support lines; nullopt when
// all segments are parallel (untilted camera, caller falls back to strips).
std::optional<VanishingPoint> estimate_vp(const std::vector<Segment>& segments);

// Shared membership machinery for both region variants. A pixel belongs to
// beam q when its anchor-row column (identity for strips, the fan-line
// intersection through the vanishing point otherwise) falls in colmap's
// continuous span q.
struct RegionMap {
  RegionVariant variant = RegionVariant::strip;
  fusion::ColumnMap colmap;
  std::optional<Eigen::Vector2d> vp;

  double anchor_col_of(double x, double y) const;
  int beam_of_pixel(int x, int y) const;
};

RegionMap make_region_map(RegionVariant variant, const fusion::ColumnMap& colmap,
                          std::optional<VanishingPoint> vp);

BeamRegion beam_region_strip(int q, const fusion::ColumnMap& colmap, int h);

// Quadrilateral between the two lines joining the vanishing point to beam
// q's anchor-row boundary columns, clipped to the image. Throws when the
// vanishing point falls inside the image band.
BeamRegion beam_region_fan(int q, const fusion::ColumnMap& colmap, const VanishingPoint& vp,
                           int h);

std::vector<BeamRegion> beam_regions(const RegionMap& map);

// Zeroes pixels outside the box; throws when the box misses the image.
ImageU8 isolate_tx(const ImageU8& image, const BBox& bbox);

// Bit q set when at least one nonzero isolated pixel lies in region q;
// nullopt when no bit is set (caller decides the fallback).
std::optional<SearchSpace> reduce_search_space(const ImageU8& isolated, const RegionMap& map,
                                               int frame_t = 0);

// Region overlay (plus optional box) as an SVG document.
std::string regions_to_svg(const RegionMap& map, const BBox* highlight_box = nullptr);

}  // namespace beamsight::geometry
