#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "beamsight/bbox.hpp"
#include "beamsight/image.hpp"

namespace beamsight::scene {

// Pinhole camera at (0, height_m, 0), looking along +z, pitched down and
// yawed about the vertical axis. Pixel rows grow downward.
struct Camera {
  double focal_px = 240;
  double cx = 128;
  double cy = 96;
  int width_px = 256;
  int height_px = 192;
  double height_m = 6.0;
  double pitch_down = 0.28;
  double yaw = 0.0;
};

enum class Kind { tx, distractor, pole };

struct WorldObject {
  int id = 0;
  Kind kind = Kind::distractor;
  Eigen::Vector3d position_m = Eigen::Vector3d::Zero();   // centre, y up
  Eigen::Vector3d size_m = Eigen::Vector3d::Ones();       // extents
  Eigen::Vector3d velocity_mps = Eigen::Vector3d::Zero();
  std::array<std::uint8_t, 3> color = {128, 128, 128};
};

enum class EdgePolicy { wrap, despawn };

struct StreetBounds {
  double x_min = -30;
  double x_max = 30;
  EdgePolicy policy = EdgePolicy::wrap;
};

struct RenderResult {
  ImageU8 image;                            // H x W x 3
  ImageU8 object_mask;                      // H x W x 1, object slot + 1, 0 = background
  std::vector<std::pair<int, BBox>> boxes;  // (object id, tight projected bound)
};

enum class PreprocessMode { rgb, method1, method2 };

// Rotated/translated pinhole projection; nullopt behind the camera.
std::optional<Eigen::Vector2d> project(const Camera& cam, const Eigen::Vector3d& world_point);

// Projection of a direction (point at infinity); nullopt when it points
// behind the image plane.
std::optional<Eigen::Vector2d> project_direction(const Camera& cam, const Eigen::Vector3d& dir);

// Euler step; objects crossing the street bounds wrap or despawn.
void step_scene(std::vector<WorldObject>& objects, double dt, const StreetBounds& street);

// Painter's algorithm over flat-shaded convex hulls of projected corners;
// seeded Gaussian grain on top. Boxes are tight bounds of the hull points.
RenderResult render(const Camera& cam, const std::vector<WorldObject>& objects, double noise_std,
                    std::uint64_t noise_seed, std::array<std::uint8_t, 3> background = {18, 20, 26});

// Azimuth of the TX centroid relative to the array boresight (+z rotated by
// boresight_yaw); throws when no TX object exists.
double tx_azimuth(const std::vector<WorldObject>& objects, double boresight_yaw = 0.0);

// One-channel visual plane: grayscale (rgb), binary silhouette of all object
// pixels (method1), or all zeros (method2).
ImageU8 preprocess(const RenderResult& frame, PreprocessMode mode);

// Image segments of the vertical centre axes of pole objects; feeds the
// vanishing-point estimator.
std::vector<std::array<Eigen::Vector2d, 2>> pole_segments(const Camera& cam,
                                                          const std::vector<WorldObject>& objects);

}  // namespace beamsight::scene
