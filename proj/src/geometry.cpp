#include "beamsight/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace beamsight::geometry {

int SearchSpace::popcount() const {
  int n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

std::string SearchSpace::to_string01() const {
  std::string s(bits.size(), '0');
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) s[i] = '1';
  return s;
}

std::optional<VanishingPoint> estimate_vp(const std::vector<Segment>& segments) {
  if (segments.size() < 2) throw std::invalid_argument("estimate_vp: need >= 2 segments");
  Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
  Eigen::Vector2d rhs = Eigen::Vector2d::Zero();
  std::vector<std::pair<Eigen::Vector2d, double>> lines;  // unit normal, offset
  lines.reserve(segments.size());
  for (const auto& seg : segments) {
    const Eigen::Vector2d d = seg[1] - seg[0];
    const double len = d.norm();
    if (len < 1e-12) throw std::invalid_argument("estimate_vp: degenerate segment");
    const Eigen::Vector2d n(-d.y() / len, d.x() / len);
    const double c = n.dot(seg[0]);
    a += n * n.transpose();
    rhs += n * c;
    lines.emplace_back(n, c);
  }
  // Parallel segments leave the normal matrix rank deficient.
  const double det = a.determinant();
  if (det < 1e-9 * std::max(1.0, a.trace() * a.trace())) return std::nullopt;
  VanishingPoint out;
  out.vp = a.ldlt().solve(rhs);
  double sq = 0;
  for (const auto& [n, c] : lines) {
    const double d = n.dot(out.vp) - c;
    sq += d * d;
  }
  out.residual = sq / static_cast<double>(lines.size());
  return out;
}

double RegionMap::anchor_col_of(double x, double y) const {
  if (variant == RegionVariant::strip) return x;
  const double vx = vp->x(), vy = vp->y();
  const double anchor_y = static_cast<double>(colmap.anchor_row);
  return vx + (x - vx) * (anchor_y - vy) / (y - vy);
}

int RegionMap::beam_of_pixel(int x, int y) const {
  return colmap.beam_of_column(anchor_col_of(x, y));
}

RegionMap make_region_map(RegionVariant variant, const fusion::ColumnMap& colmap,
                          std::optional<VanishingPoint> vp) {
  RegionMap map;
  map.variant = variant;
  map.colmap = colmap;
  if (variant == RegionVariant::fan) {
    if (!vp) throw std::invalid_argument("make_region_map: fan variant requires a vanishing point");
    if (vp->vp.y() >= 0 && vp->vp.y() < colmap.height)
      throw std::domain_error("make_region_map: vanishing point inside the image band");
    map.vp = vp->vp;
  }
  return map;
}

namespace {

// Sutherland-Hodgman against the axis-aligned image rectangle.
std::vector<Eigen::Vector2d> clip_to_rect(std::vector<Eigen::Vector2d> poly, double w, double h) {
  struct Edge {
    int axis;
    double bound;
    bool keep_less;
  };
  const Edge edges[4] = {{0, 0.0, false}, {0, w, true}, {1, 0.0, false}, {1, h, true}};
  for (const auto& e : edges) {
    if (poly.empty()) break;
    std::vector<Eigen::Vector2d> out;
    out.reserve(poly.size() + 2);
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::Vector2d& cur = poly[i];
      const Eigen::Vector2d& nxt = poly[(i + 1) % n];
      const double cv = e.axis == 0 ? cur.x() : cur.y();
      const double nv = e.axis == 0 ? nxt.x() : nxt.y();
      const bool cin = e.keep_less ? cv <= e.bound : cv >= e.bound;
      const bool nin = e.keep_less ? nv <= e.bound : nv >= e.bound;
      if (cin) out.push_back(cur);
      if (cin != nin) {
        const double t = (e.bound - cv) / (nv - cv);
        out.push_back(cur + t * (nxt - cur));
      }
    }
    poly = std::move(out);
  }
  return poly;
}

}  // namespace

BeamRegion beam_region_strip(int q, const fusion::ColumnMap& colmap, int h) {
  BeamRegion region;
  region.beam = q;
  region.variant = RegionVariant::strip;
  const double lo = colmap.bounds[q], hi = colmap.bounds[q + 1];
  region.polygon = clip_to_rect(
      {{lo, 0.0}, {hi, 0.0}, {hi, static_cast<double>(h)}, {lo, static_cast<double>(h)}},
      colmap.width, h);
  return region;
}

BeamRegion beam_region_fan(int q, const fusion::ColumnMap& colmap, const VanishingPoint& vp,
                           int h) {
  if (vp.vp.y() >= 0 && vp.vp.y() < h)
    throw std::domain_error("beam_region_fan: vanishing point inside the image band");
  BeamRegion region;
  region.beam = q;
  region.variant = RegionVariant::fan;
  const double anchor_y = static_cast<double>(colmap.anchor_row);
  auto col_at = [&](double anchor_col, double y) {
    return vp.vp.x() + (anchor_col - vp.vp.x()) * (y - vp.vp.y()) / (anchor_y - vp.vp.y());
  };
  const double lo = colmap.bounds[q], hi = colmap.bounds[q + 1];
  region.polygon = clip_to_rect({{col_at(lo, 0.0), 0.0},
                                 {col_at(hi, 0.0), 0.0},
                                 {col_at(hi, h), static_cast<double>(h)},
                                 {col_at(lo, h), static_cast<double>(h)}},
                                colmap.width, h);
  return region;
}

std::vector<BeamRegion> beam_regions(const RegionMap& map) {
  std::vector<BeamRegion> regions;
  regions.reserve(map.colmap.beams());
  for (int q = 0; q < map.colmap.beams(); ++q) {
    if (map.variant == RegionVariant::strip) {
      regions.push_back(beam_region_strip(q, map.colmap, map.colmap.height));
    } else {
      VanishingPoint vp;
      vp.vp = *map.vp;
      regions.push_back(beam_region_fan(q, map.colmap, vp, map.colmap.height));
    }
  }
  return regions;
}

ImageU8 isolate_tx(const ImageU8& image, const BBox& bbox) {
  const int x0 = std::max(0, static_cast<int>(std::ceil(bbox.left())));
  const int x1 = std::min(image.w - 1, static_cast<int>(std::floor(bbox.right())));
  const int y0 = std::max(0, static_cast<int>(std::ceil(bbox.top())));
  const int y1 = std::min(image.h - 1, static_cast<int>(std::floor(bbox.bottom())));
  if (x0 > x1 || y0 > y1) throw std::invalid_argument("isolate_tx: box does not intersect image");
  ImageU8 out(image.w, image.h, image.c, 0);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      for (int ch = 0; ch < image.c; ++ch) out.at(x, y, ch) = image.at(x, y, ch);
  return out;
}

std::optional<SearchSpace> reduce_search_space(const ImageU8& isolated, const RegionMap& map,
                                               int frame_t) {
  SearchSpace space;
  space.frame_t = frame_t;
  space.bits.assign(map.colmap.beams(), 0);
  bool any = false;
  for (int y = 0; y < isolated.h; ++y) {
    for (int x = 0; x < isolated.w; ++x) {
      bool nonzero = false;
      for (int ch = 0; ch < isolated.c; ++ch) nonzero = nonzero || isolated.at(x, y, ch) != 0;
      if (!nonzero) continue;
      const int q = map.beam_of_pixel(x, y);
      if (q >= 0) {
        space.bits[q] = 1;
        any = true;
      }
    }
  }
  if (!any) return std::nullopt;
  return space;
}

std::string regions_to_svg(const RegionMap& map, const BBox* highlight_box) {
  const int w = map.colmap.width, h = map.colmap.height;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h
     << "\" fill=\"#101018\"/>\n";
  const auto regions = beam_regions(map);
  for (const auto& region : regions) {
    if (region.polygon.size() < 3) continue;
    const int hue = (region.beam * 360) / std::max(1, map.colmap.beams());
    os << "  <polygon points=\"";
    for (std::size_t i = 0; i < region.polygon.size(); ++i) {
      if (i) os << " ";
      os << region.polygon[i].x() << "," << region.polygon[i].y();
    }
    os << "\" fill=\"hsl(" << hue << ",60%,45%)\" fill-opacity=\"0.35\" "
       << "stroke=\"hsl(" << hue << ",70%,70%)\" stroke-width=\"0.5\"/>\n";
  }
  if (highlight_box) {
    os << "  <rect x=\"" << highlight_box->left() << "\" y=\"" << highlight_box->top()
       << "\" width=\"" << highlight_box->w << "\" height=\"" << highlight_box->h
       << "\" fill=\"none\" stroke=\"#ffffff\" stroke-width=\"1.5\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace beamsight::geometry
