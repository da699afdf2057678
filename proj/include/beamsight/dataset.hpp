#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "beamsight/channel.hpp"
#include "beamsight/geometry.hpp"
#include "beamsight/scene.hpp"

namespace beamsight::dataset {

struct SceneConfig {
  int width_px = 256;
  int height_px = 192;
  double focal_px = 240;
  double cam_height_m = 6.0;
  double pitch_down = 0.28;
  double yaw = 0.0;
  std::vector<double> lanes_z_m = {34, 50};
  double x_min = -26, x_max = 26;
  int cars_per_lane = 3;
  double car_length = 4.2, car_height = 1.6, car_depth = 1.9;
  double size_jitter = 0.12;
  double height_jitter = 0.04;
  double speed_min = 5, speed_max = 9;
  double dt = 0.05;
  int n_poles = 5;
  double pole_z = 85, pole_height = 9, pole_width = 0.2;
  double noise_std = 6;
  std::array<std::uint8_t, 3> background = {18, 20, 26};
};

struct ChannelConfig {
  int m_ant = 64;
  int q = 64;
  double spacing_wavelengths = 0.5;
  double sector_lo = -0.52, sector_hi = 0.52;
  int k_subcarriers = 16;
  double sigma_sq = 0.0;
  double signal_power = 1.0;
  int n_reflectors = 2;
  double reflector_gain = 0.3;
  double phase_scale = 1.0;
};

struct DatasetConfig {
  int sequences = 68;
  int frames_per_seq = 36;
  int transfer_sequences = 16;
  int train_samples = 1204;
  double train_fraction = 0.7;
};

scene::Camera make_camera(const SceneConfig& cfg);

struct FrameInfo {
  int t = 0;
  std::string image_path;
  std::string mask_path;
  std::vector<std::pair<int, BBox>> boxes;
  int tx_id = -1;
  std::optional<BBox> tx_box;
  double tx_azimuth = 0;
  std::vector<double> profile;
  std::vector<int> oracle_beams;
  channel::PathSet paths;
  std::uint64_t chan_seed = 0;
  bool usable = false;
};

struct SequenceInfo {
  std::string dir;
  std::vector<FrameInfo> frames;
};

struct FrameKey {
  int seq = 0;
  int t = 0;
  bool operator<(const FrameKey& o) const { return seq < o.seq || (seq == o.seq && t < o.t); }
  bool operator==(const FrameKey& o) const { return seq == o.seq && t == o.t; }
};

struct SplitManifest {
  std::vector<FrameKey> train;
  std::vector<FrameKey> test;
  std::map<int, int> train_class_counts;  // oracle best beam -> count
  std::map<int, int> test_class_counts;
};

struct Dataset {
  std::string root;
  std::vector<SequenceInfo> scenario_a;
  std::vector<SequenceInfo> scenario_b;
  SplitManifest split;
  channel::Codebook codebook;
};

// Fully seeded scene synthesis for one sequence; pure in (cfg, seed).
std::vector<scene::WorldObject> spawn_scene(const SceneConfig& cfg, Rng& rng);

// Per-frame path set: unit-gain LOS at the TX azimuth plus per-sequence
// reflectors with fixed azimuths and complex gains.
struct ReflectorSet {
  std::vector<double> azimuths;
  std::vector<std::complex<double>> gains;
};
ReflectorSet draw_reflectors(const ChannelConfig& cfg, Rng& rng);
channel::PathSet make_paths(double tx_azimuth, const ReflectorSet& reflectors,
                            const ChannelConfig& cfg);

// Writes scenario directories, per-frame PPM/mask PGM, profiles.csv,
// annotations.jsonl, plus split.json; byte-identical for a fixed seed.
Dataset generate_dataset(const SceneConfig& scene_a, const SceneConfig& scene_b,
                         const ChannelConfig& chan, const DatasetConfig& cfg, std::uint64_t seed,
                         const std::string& out_dir, int threads = 0);

Dataset load_dataset(const std::string& out_dir, const ChannelConfig& chan);

// Recomputes every frame's power profile and oracle list from the stored
// path sets; returns the number of mismatching frames (0 when consistent)
// and rewrites profiles when `rewrite` is set.
long oracle_sweep(Dataset& ds, const ChannelConfig& chan, bool rewrite);

}  // namespace beamsight::dataset
