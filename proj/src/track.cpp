#include "beamsight/track.hpp"

#include <algorithm>

namespace beamsight::track {

namespace {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat46 = Eigen::Matrix<double, 4, 6>;
using Mat4 = Eigen::Matrix<double, 4, 4>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec4 = Eigen::Matrix<double, 4, 1>;

Mat6 transition() {
  Mat6 f = Mat6::Identity();
  f(0, 4) = 1.0;
  f(1, 5) = 1.0;
  return f;
}

Mat46 measurement() {
  Mat46 h = Mat46::Zero();
  h(0, 0) = h(1, 1) = h(2, 2) = h(3, 3) = 1.0;
  return h;
}

Mat6 process_noise(const TrackerConfig& cfg) {
  Vec6 d;
  d << cfg.process_noise, cfg.process_noise, cfg.process_noise, cfg.process_noise,
      cfg.velocity_noise, cfg.velocity_noise;
  return d.asDiagonal();
}

}  // namespace

Track make_track(int id, const BBox& box, const TrackerConfig& cfg) {
  Track t;
  t.id = id;
  t.state << box.x, box.y, box.w, box.h, 0.0, 0.0;
  Vec6 d;
  const double p = std::max(cfg.measurement_noise, 1e-6);
  d << p, p, p, p, 100.0 * std::max(cfg.velocity_noise, 1e-6),
      100.0 * std::max(cfg.velocity_noise, 1e-6);
  t.cov = d.asDiagonal();
  t.hits = 1;
  return t;
}

BBox predict(Track& track, const TrackerConfig& cfg) {
  const Mat6 f = transition();
  track.state = f * track.state;
  track.cov = f * track.cov * f.transpose() + process_noise(cfg);
  track.cov = 0.5 * (track.cov + track.cov.transpose()).eval();
  track.age += 1;
  return track.bbox();
}

Association associate(const std::vector<Track>& tracks, const std::vector<BBox>& detections,
                      double gate) {
  struct Pair {
    double score;
    int t, d;
  };
  std::vector<Pair> pairs;
  for (int t = 0; t < static_cast<int>(tracks.size()); ++t) {
    for (int d = 0; d < static_cast<int>(detections.size()); ++d) {
      const double score = iou(tracks[t].bbox(), detections[d]);
      if (score >= gate) pairs.push_back({score, t, d});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [&](const Pair& a, const Pair& b) {
    if (a.score != b.score) return a.score > b.score;
    if (tracks[a.t].id != tracks[b.t].id) return tracks[a.t].id < tracks[b.t].id;
    return a.d < b.d;
  });
  Association out;
  std::vector<bool> t_used(tracks.size(), false), d_used(detections.size(), false);
  for (const auto& p : pairs) {
    if (t_used[p.t] || d_used[p.d]) continue;
    t_used[p.t] = d_used[p.d] = true;
    out.matches.emplace_back(p.t, p.d);
  }
  for (int t = 0; t < static_cast<int>(tracks.size()); ++t)
    if (!t_used[t]) out.unmatched_tracks.push_back(t);
  for (int d = 0; d < static_cast<int>(detections.size()); ++d)
    if (!d_used[d]) out.unmatched_detections.push_back(d);
  return out;
}

void update(Track& track, const BBox& detection, const TrackerConfig& cfg) {
  const Mat46 h = measurement();
  const Mat4 r = Mat4::Identity() * cfg.measurement_noise;
  Vec4 z;
  z << detection.x, detection.y, detection.w, detection.h;
  const Vec4 innovation = z - h * track.state;
  const Mat4 s = h * track.cov * h.transpose() + r;
  const Eigen::Matrix<double, 6, 4> k = track.cov * h.transpose() * s.inverse();
  track.state += k * innovation;
  const Mat6 ikh = Mat6::Identity() - k * h;
  track.cov = ikh * track.cov * ikh.transpose() + k * r * k.transpose();
  track.cov = 0.5 * (track.cov + track.cov.transpose()).eval();
  track.hits += 1;
  track.misses = 0;
}

std::vector<int> MultiTracker::step(const std::vector<BBox>& detections) {
  for (auto& t : tracks_) predict(t, cfg_);
  const Association assoc = associate(tracks_, detections, cfg_.iou_gate);
  std::vector<int> det_track_ids(detections.size(), -1);
  for (const auto& [t, d] : assoc.matches) {
    update(tracks_[t], detections[d], cfg_);
    det_track_ids[d] = tracks_[t].id;
  }
  for (int t : assoc.unmatched_tracks) tracks_[t].misses += 1;
  tracks_.erase(std::remove_if(tracks_.begin(), tracks_.end(),
                               [&](const Track& t) { return t.misses > cfg_.max_misses; }),
                tracks_.end());
  for (int d : assoc.unmatched_detections) {
    Track t = make_track(next_id_++, detections[d], cfg_);
    det_track_ids[d] = t.id;
    tracks_.push_back(std::move(t));
  }
  return det_track_ids;
}

bool MultiTracker::flag_tx(int track_id) {
  for (auto& t : tracks_) {
    if (t.id == track_id) {
      t.is_tx = true;
      return true;
    }
  }
  return false;
}

std::optional<BBox> MultiTracker::tx_box() const {
  for (const auto& t : tracks_)
    if (t.is_tx) return t.bbox();
  return std::nullopt;
}

bool MultiTracker::tx_alive() const {
  for (const auto& t : tracks_)
    if (t.is_tx) return true;
  return false;
}

TrackSequenceResult track_sequence(const std::vector<std::vector<BBox>>& frame_detections,
                                   const BBox& tx_seed_bbox, const TrackerConfig& cfg) {
  TrackSequenceResult out;
  out.tx_boxes.resize(frame_detections.size());
  MultiTracker tracker(cfg);
  tracker.step({tx_seed_bbox});
  tracker.flag_tx(tracker.tracks().front().id);
  for (std::size_t f = 0; f < frame_detections.size(); ++f) {
    tracker.step(frame_detections[f]);
    if (!tracker.tx_alive()) {
      out.lost = true;
      out.lost_at_frame = static_cast<int>(f);
      break;
    }
    out.tx_boxes[f] = tracker.tx_box();
  }
  return out;
}

}  // namespace beamsight::track
