#pragma once

#include <algorithm>

namespace beamsight {

// Axis-aligned box, centre + extents, in pixel coordinates.
struct BBox {
  double x = 0;  // centre column
  double y = 0;  // centre row
  double w = 0;
  double h = 0;

  double left() const { return x - 0.5 * w; }
  double right() const { return x + 0.5 * w; }
  double top() const { return y - 0.5 * h; }
  double bottom() const { return y + 0.5 * h; }
  double area() const { return w * h; }

  bool intersects(double img_w, double img_h) const {
    return right() > 0 && left() < img_w && bottom() > 0 && top() < img_h;
  }
};

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
  const double iy = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace beamsight
