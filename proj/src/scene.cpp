#include "beamsight/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "beamsight/rng.hpp"

namespace beamsight::scene {

namespace {

struct CameraBasis {
  Eigen::Vector3d right, up, forward, pos;
};

CameraBasis basis_of(const Camera& cam) {
  const double ca = std::cos(cam.pitch_down), sa = std::sin(cam.pitch_down);
  const double cy = std::cos(cam.yaw), sy = std::sin(cam.yaw);
  // Pitch about x, then yaw about world y.
  const Eigen::Vector3d right(cy, 0, -sy);
  const Eigen::Vector3d up(sy * sa, ca, cy * sa);
  const Eigen::Vector3d forward(sy * ca, -sa, cy * ca);
  return {right, up, forward, Eigen::Vector3d(0, cam.height_m, 0)};
}

std::optional<Eigen::Vector2d> project_dir(const Camera& cam, const CameraBasis& b,
                                           const Eigen::Vector3d& d) {
  const double zc = d.dot(b.forward);
  if (zc <= 1e-9) return std::nullopt;
  const double u = cam.cx + cam.focal_px * d.dot(b.right) / zc;
  const double v = cam.cy - cam.focal_px * d.dot(b.up) / zc;
  return Eigen::Vector2d(u, v);
}

// Andrew monotone chain; returns CCW hull (image coordinates, y down).
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const auto& a, const auto& b) { return a == b; }),
            pts.end());
  const auto n = pts.size();
  if (n < 3) return pts;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Scanline fill of a convex polygon onto image + mask.
void fill_convex(ImageU8& img, ImageU8& mask, const std::vector<Eigen::Vector2d>& poly,
                 const std::array<std::uint8_t, 3>& color, std::uint8_t mask_value) {
  if (poly.size() < 3) return;
  double min_y = poly[0].y(), max_y = poly[0].y();
  for (const auto& p : poly) {
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  const int y0 = std::max(0, static_cast<int>(std::ceil(min_y)));
  const int y1 = std::min(img.h - 1, static_cast<int>(std::floor(max_y)));
  for (int y = y0; y <= y1; ++y) {
    double lo = 1e300, hi = -1e300;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = poly[i];
      const auto& b = poly[(i + 1) % n];
      const double ay = a.y(), by = b.y();
      if ((ay <= y && by >= y) || (by <= y && ay >= y)) {
        if (ay == by) {
          lo = std::min({lo, a.x(), b.x()});
          hi = std::max({hi, a.x(), b.x()});
        } else {
          const double x = a.x() + (b.x() - a.x()) * (y - ay) / (by - ay);
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
      }
    }
    if (lo > hi) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(lo)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::floor(hi)));
    for (int x = x0; x <= x1; ++x) {
      img.at(x, y, 0) = color[0];
      img.at(x, y, 1) = color[1];
      img.at(x, y, 2) = color[2];
      mask.at(x, y) = mask_value;
    }
  }
}

}  // namespace

std::optional<Eigen::Vector2d> project(const Camera& cam, const Eigen::Vector3d& world_point) {
  const auto b = basis_of(cam);
  return project_dir(cam, b, world_point - b.pos);
}

std::optional<Eigen::Vector2d> project_direction(const Camera& cam, const Eigen::Vector3d& dir) {
  const auto b = basis_of(cam);
  return project_dir(cam, b, dir);
}

void step_scene(std::vector<WorldObject>& objects, double dt, const StreetBounds& street) {
  if (dt <= 0) throw std::invalid_argument("step_scene: dt must be > 0");
  const double span = street.x_max - street.x_min;
  for (auto it = objects.begin(); it != objects.end();) {
    it->position_m += it->velocity_mps * dt;
    const double x = it->position_m.x();
    if (it->kind != Kind::pole && (x < street.x_min || x > street.x_max)) {
      if (street.policy == EdgePolicy::wrap) {
        double nx = x;
        while (nx < street.x_min) nx += span;
        while (nx > street.x_max) nx -= span;
        it->position_m.x() = nx;
      } else {
        it = objects.erase(it);
        continue;
      }
    }
    ++it;
  }
}

RenderResult render(const Camera& cam, const std::vector<WorldObject>& objects, double noise_std,
                    std::uint64_t noise_seed, std::array<std::uint8_t, 3> background) {
  if (noise_std < 0) throw std::invalid_argument("render: noise_std must be >= 0");
  RenderResult out;
  out.image = ImageU8(cam.width_px, cam.height_px, 3);
  out.object_mask = ImageU8(cam.width_px, cam.height_px, 1, 0);
  for (int y = 0; y < cam.height_px; ++y)
    for (int x = 0; x < cam.width_px; ++x)
      for (int ch = 0; ch < 3; ++ch) out.image.at(x, y, ch) = background[ch];

  const auto b = basis_of(cam);

  // Far-to-near painter order.
  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return (objects[i].position_m - b.pos).squaredNorm() >
           (objects[j].position_m - b.pos).squaredNorm();
  });

  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const std::size_t slot = order[rank];
    const auto& obj = objects[slot];
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(8);
    bool behind = false;
    for (int corner = 0; corner < 8; ++corner) {
      const Eigen::Vector3d offset(((corner & 1) ? 0.5 : -0.5) * obj.size_m.x(),
                                   ((corner & 2) ? 0.5 : -0.5) * obj.size_m.y(),
                                   ((corner & 4) ? 0.5 : -0.5) * obj.size_m.z());
      const auto px = project_dir(cam, b, obj.position_m + offset - b.pos);
      if (!px) {
        behind = true;
        break;
      }
      pts.push_back(*px);
    }
    if (behind) continue;
    double min_x = pts[0].x(), max_x = pts[0].x(), min_y = pts[0].y(), max_y = pts[0].y();
    for (const auto& p : pts) {
      min_x = std::min(min_x, p.x());
      max_x = std::max(max_x, p.x());
      min_y = std::min(min_y, p.y());
      max_y = std::max(max_y, p.y());
    }
    BBox box{0.5 * (min_x + max_x), 0.5 * (min_y + max_y), max_x - min_x, max_y - min_y};
    if (!box.intersects(cam.width_px, cam.height_px) || box.w <= 0 || box.h <= 0) continue;
    fill_convex(out.image, out.object_mask, convex_hull(pts), obj.color,
                static_cast<std::uint8_t>(slot + 1));
    out.boxes.emplace_back(obj.id, box);
  }

  if (noise_std > 0) {
    Rng rng(noise_seed);
    for (auto& byte : out.image.data) {
      const double v = byte + rng.gaussian() * noise_std;
      byte = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  }
  return out;
}

double tx_azimuth(const std::vector<WorldObject>& objects, double boresight_yaw) {
  for (const auto& obj : objects) {
    if (obj.kind == Kind::tx) {
      const double az_world = std::atan2(obj.position_m.x(), obj.position_m.z());
      double az = az_world - boresight_yaw;
      while (az > M_PI) az -= 2 * M_PI;
      while (az < -M_PI) az += 2 * M_PI;
      return az;
    }
  }
  throw std::logic_error("tx_azimuth: no TX object in scene");
}

ImageU8 preprocess(const RenderResult& frame, PreprocessMode mode) {
  const int w = frame.image.w, h = frame.image.h;
  ImageU8 plane(w, h, 1, 0);
  switch (mode) {
    case PreprocessMode::method2:
      break;
    case PreprocessMode::method1:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (frame.object_mask.at(x, y) != 0) plane.at(x, y) = 255;
      break;
    case PreprocessMode::rgb:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double luma = 0.299 * frame.image.at(x, y, 0) + 0.587 * frame.image.at(x, y, 1) +
                              0.114 * frame.image.at(x, y, 2);
          plane.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(luma, 0.0, 255.0)));
        }
      break;
  }
  return plane;
}

std::vector<std::array<Eigen::Vector2d, 2>> pole_segments(
    const Camera& cam, const std::vector<WorldObject>& objects) {
  std::vector<std::array<Eigen::Vector2d, 2>> segments;
  for (const auto& obj : objects) {
    if (obj.kind != Kind::pole) continue;
    const Eigen::Vector3d half(0, 0.5 * obj.size_m.y(), 0);
    const auto bottom = project(cam, obj.position_m - half);
    const auto top = project(cam, obj.position_m + half);
    if (bottom && top) segments.push_back({*bottom, *top});
  }
  return segments;
}

}  // namespace beamsight::scene
