#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "beamsight/bbox.hpp"

namespace beamsight::track {

struct TrackerConfig {
  double iou_gate = 0.3;
  int max_misses = 5;
  double process_noise = 1.0;      // position/extent diffusion per frame
  double velocity_noise = 0.5;     // velocity diffusion per frame
  double measurement_noise = 1.0;  // box measurement variance
};

// Constant-velocity state (cx, cy, w, h, vx, vy); unit frame step,
// velocities in px/frame.
struct Track {
  int id = 0;
  Eigen::Matrix<double, 6, 1> state = Eigen::Matrix<double, 6, 1>::Zero();
  Eigen::Matrix<double, 6, 6> cov = Eigen::Matrix<double, 6, 6>::Identity();
  int age = 0;
  int hits = 0;
  int misses = 0;
  bool is_tx = false;

  BBox bbox() const { return {state(0), state(1), state(2), state(3)}; }
};

Track make_track(int id, const BBox& box, const TrackerConfig& cfg);

// Advances the state by one frame and propagates the covariance; returns the
// predicted box.
BBox predict(Track& track, const TrackerConfig& cfg);

struct Association {
  std::vector<std::pair<int, int>> matches;  // (track index, detection index)
  std::vector<int> unmatched_tracks;
  std::vector<int> unmatched_detections;
};

// Greedy descending-IoU matching; pairs below the gate stay unmatched; ties
// broken by higher IoU then lower track id.
Association associate(const std::vector<Track>& tracks, const std::vector<BBox>& detections,
                      double gate);

// Kalman measurement update (Joseph form).
void update(Track& track, const BBox& detection, const TrackerConfig& cfg);

// Frame-by-frame multi-object tracker; ids are never reused.
class MultiTracker {
 public:
  explicit MultiTracker(TrackerConfig cfg = {}) : cfg_(cfg) {}

  // Returns, per detection, the id of the track it now belongs to.
  std::vector<int> step(const std::vector<BBox>& detections);

  std::vector<Track>& tracks() { return tracks_; }
  const std::vector<Track>& tracks() const { return tracks_; }
  const TrackerConfig& config() const { return cfg_; }

  // Marks the track currently owning `track_id` as the TX.
  bool flag_tx(int track_id);
  std::optional<BBox> tx_box() const;
  bool tx_alive() const;

 private:
  TrackerConfig cfg_;
  std::vector<Track> tracks_;
  int next_id_ = 0;
};

struct TrackSequenceResult {
  std::vector<std::optional<BBox>> tx_boxes;  // one per input frame
  bool lost = false;
  int lost_at_frame = -1;  // first frame with no live TX track
};

// Seeds a TX track from the identification stage and follows it through the
// remaining frames' detections.
TrackSequenceResult track_sequence(const std::vector<std::vector<BBox>>& frame_detections,
                                   const BBox& tx_seed_bbox, const TrackerConfig& cfg);

}  // namespace beamsight::track
