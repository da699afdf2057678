#include "beamsight/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "beamsight/threads.hpp"
#include "json.hpp"

namespace beamsight::dataset {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

scene::Camera make_camera(const SceneConfig& cfg) {
  scene::Camera cam;
  cam.width_px = cfg.width_px;
  cam.height_px = cfg.height_px;
  cam.focal_px = cfg.focal_px;
  cam.cx = cfg.width_px / 2.0;
  cam.cy = cfg.height_px / 2.0;
  cam.height_m = cfg.cam_height_m;
  cam.pitch_down = cfg.pitch_down;
  cam.yaw = cfg.yaw;
  return cam;
}

std::vector<scene::WorldObject> spawn_scene(const SceneConfig& cfg, Rng& rng) {
  std::vector<scene::WorldObject> objects;
  const int lanes = static_cast<int>(cfg.lanes_z_m.size());
  const int n_cars = lanes * cfg.cars_per_lane;
  const double span = cfg.x_max - cfg.x_min;

  // Cars occupy interleaved slots across lanes so azimuth alignments between
  // lanes stay rare within a sequence.
  int next_id = 1;
  for (int slot = 0; slot < n_cars; ++slot) {
    const int lane = slot % lanes;
    scene::WorldObject car;
    car.id = next_id++;
    car.kind = scene::Kind::distractor;
    const double slot_x = cfg.x_min + span * (slot + 0.5) / n_cars;
    const double x = slot_x + rng.uniform(-1.5, 1.5);
    const double z = cfg.lanes_z_m[lane] + rng.uniform(-0.5, 0.5);
    const double sy = cfg.car_height * (1.0 + rng.uniform(-cfg.height_jitter, cfg.height_jitter));
    car.size_m = Eigen::Vector3d(
        cfg.car_length * (1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter)), sy,
        cfg.car_depth * (1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter)));
    car.position_m = Eigen::Vector3d(x, sy / 2.0, z);
    car.velocity_mps = Eigen::Vector3d(rng.uniform(cfg.speed_min, cfg.speed_max), 0, 0);
    for (int ch = 0; ch < 3; ++ch)
      car.color[ch] = static_cast<std::uint8_t>(rng.uniform_int(60, 200));
    objects.push_back(car);
  }
  // One of the cars, uniformly, is the transmitter.
  const auto tx_index = static_cast<std::size_t>(rng.uniform_int(0, n_cars - 1));
  objects[tx_index].kind = scene::Kind::tx;

  for (int p = 0; p < cfg.n_poles; ++p) {
    scene::WorldObject pole;
    pole.id = next_id++;
    pole.kind = scene::Kind::pole;
    const double x = cfg.x_min + 4 + (span - 8) * (p + 0.5) / cfg.n_poles;
    pole.size_m = Eigen::Vector3d(cfg.pole_width, cfg.pole_height, cfg.pole_width);
    pole.position_m = Eigen::Vector3d(x, cfg.pole_height / 2.0, cfg.pole_z);
    pole.color = {168, 170, 182};
    objects.push_back(pole);
  }
  return objects;
}

ReflectorSet draw_reflectors(const ChannelConfig& cfg, Rng& rng) {
  ReflectorSet set;
  for (int r = 0; r < cfg.n_reflectors; ++r) {
    set.azimuths.push_back(rng.uniform(cfg.sector_lo, cfg.sector_hi));
    const double phase = rng.uniform(0, 2 * M_PI);
    set.gains.push_back(cfg.reflector_gain *
                        std::complex<double>(std::cos(phase), std::sin(phase)));
  }
  return set;
}

channel::PathSet make_paths(double tx_azimuth, const ReflectorSet& reflectors,
                            const ChannelConfig& cfg) {
  channel::PathSet paths;
  paths.phase_scale = cfg.phase_scale;
  paths.paths.push_back({tx_azimuth, {1.0, 0.0}, true});
  for (std::size_t r = 0; r < reflectors.azimuths.size(); ++r)
    paths.paths.push_back({reflectors.azimuths[r], reflectors.gains[r], false});
  return paths;
}

namespace {

std::string seq_dir_name(int seq) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%04d", seq);
  return buf;
}

std::string frame_file(int t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "f_%04d.%s", t, ext);
  return buf;
}

// Frame is usable for supervision when the TX box sits fully inside the
// image and its azimuth stays a beam-width clear of the sector edges.
bool frame_usable(const FrameInfo& frame, const scene::Camera& cam, const ChannelConfig& chan) {
  if (!frame.tx_box) return false;
  const BBox& b = *frame.tx_box;
  if (b.left() < 1 || b.top() < 1 || b.right() > cam.width_px - 2 ||
      b.bottom() > cam.height_px - 2)
    return false;
  if (b.area() < 30) return false;
  const double beam_width = (std::sin(chan.sector_hi) - std::sin(chan.sector_lo)) / chan.q;
  const double margin = 1.5 * beam_width;
  const double s = std::sin(frame.tx_azimuth);
  return s > std::sin(chan.sector_lo) + margin && s < std::sin(chan.sector_hi) - margin;
}

json frame_annotation(const FrameInfo& frame) {
  json boxes = json::array();
  for (const auto& [id, box] : frame.boxes)
    boxes.push_back(json{{"id", id}, {"x", box.x}, {"y", box.y}, {"w", box.w}, {"h", box.h}});
  json paths = json::array();
  for (const auto& p : frame.paths.paths) {
    paths.push_back(json{{"az", p.azimuth},
                         {"gain_re", p.gain.real()},
                         {"gain_im", p.gain.imag()},
                         {"los", p.is_los}});
  }
  char seed_hex[24];
  std::snprintf(seed_hex, sizeof(seed_hex), "%016llx",
                static_cast<unsigned long long>(frame.chan_seed));
  json j{{"t", frame.t},
         {"boxes", boxes},
         {"tx_id", frame.tx_id},
         {"tx_azimuth", frame.tx_azimuth},
         {"usable", frame.usable},
         {"oracle_beams", frame.oracle_beams},
         {"phase_scale", frame.paths.phase_scale},
         {"chan_seed", seed_hex},
         {"paths", paths}};
  return j;
}

FrameInfo frame_from_annotation(const json& j, const std::string& dir) {
  FrameInfo f;
  f.t = j.at("t").get<int>();
  f.image_path = dir + "/" + frame_file(f.t, "ppm");
  f.mask_path = dir + "/" + frame_file(f.t, "pgm");
  for (const auto& jb : j.at("boxes")) {
    BBox box{jb.at("x").get<double>(), jb.at("y").get<double>(), jb.at("w").get<double>(),
             jb.at("h").get<double>()};
    f.boxes.emplace_back(jb.at("id").get<int>(), box);
  }
  f.tx_id = j.at("tx_id").get<int>();
  for (const auto& [id, box] : f.boxes)
    if (id == f.tx_id) f.tx_box = box;
  f.tx_azimuth = j.at("tx_azimuth").get<double>();
  f.usable = j.at("usable").get<bool>();
  f.oracle_beams = j.at("oracle_beams").get<std::vector<int>>();
  f.chan_seed = std::stoull(j.at("chan_seed").get<std::string>(), nullptr, 16);
  f.paths.phase_scale = j.at("phase_scale").get<double>();
  for (const auto& jp : j.at("paths")) {
    channel::Path p;
    p.azimuth = jp.at("az").get<double>();
    p.gain = {jp.at("gain_re").get<double>(), jp.at("gain_im").get<double>()};
    p.is_los = jp.at("los").get<bool>();
    f.paths.paths.push_back(p);
  }
  return f;
}

std::string profile_row(int frame_id, const std::vector<double>& powers) {
  std::string row = std::to_string(frame_id);
  char buf[32];
  for (double p : powers) {
    std::snprintf(buf, sizeof(buf), ",%.6g", p);
    row += buf;
  }
  return row;
}

std::vector<SequenceInfo> generate_scenario(const SceneConfig& scfg, const ChannelConfig& chan,
                                            const channel::Codebook& codebook, int n_sequences,
                                            int frames_per_seq, std::uint64_t seed,
                                            std::uint64_t scenario_tag, const std::string& dir,
                                            int threads) {
  const scene::Camera cam = make_camera(scfg);
  const channel::NoiseModel noise{chan.sigma_sq, chan.signal_power};
  std::vector<SequenceInfo> sequences(n_sequences);

  parallel_for(static_cast<std::size_t>(n_sequences), [&](std::size_t s) {
    const std::string sdir = dir + "/" + seq_dir_name(static_cast<int>(s));
    fs::create_directories(sdir);
    SequenceInfo& seq = sequences[s];
    seq.dir = sdir;

    Rng rng(hash_mix(seed, scenario_tag, s));
    auto objects = spawn_scene(scfg, rng);
    const ReflectorSet reflectors = draw_reflectors(chan, rng);
    const scene::StreetBounds street{scfg.x_min, scfg.x_max, scene::EdgePolicy::wrap};

    std::ofstream annot(sdir + "/annotations.jsonl");
    std::ofstream profiles(sdir + "/profiles.csv");
    if (!annot || !profiles) throw std::runtime_error("cannot write dataset files in " + sdir);

    for (int t = 0; t < frames_per_seq; ++t) {
      if (t > 0) scene::step_scene(objects, scfg.dt, street);
      FrameInfo frame;
      frame.t = t;
      const std::uint64_t frame_seed = hash_mix(seed, hash_mix(scenario_tag, s), t);
      const auto rendered =
          scene::render(cam, objects, scfg.noise_std, frame_seed, scfg.background);
      frame.boxes = rendered.boxes;
      for (const auto& obj : objects)
        if (obj.kind == scene::Kind::tx) frame.tx_id = obj.id;
      for (const auto& [id, box] : frame.boxes)
        if (id == frame.tx_id) frame.tx_box = box;
      frame.tx_azimuth = scene::tx_azimuth(objects, cam.yaw);
      frame.paths = make_paths(frame.tx_azimuth, reflectors, chan);
      frame.chan_seed = hash_mix(frame_seed, 0xc4a7);
      const auto state = channel::synth_channel(frame.paths, {chan.m_ant, chan.spacing_wavelengths},
                                                chan.k_subcarriers, frame.chan_seed);
      const auto profile = channel::power_profile(state, codebook, noise);
      frame.profile = profile.powers;
      frame.oracle_beams = channel::oracle_top_n(profile, std::min(5, codebook.size()));
      frame.usable = frame_usable(frame, cam, chan);

      frame.image_path = sdir + "/" + frame_file(t, "ppm");
      frame.mask_path = sdir + "/" + frame_file(t, "pgm");
      save_ppm(rendered.image, frame.image_path);
      save_pgm(rendered.object_mask, frame.mask_path);
      annot << frame_annotation(frame).dump() << "\n";
      profiles << profile_row(t, frame.profile) << "\n";
      seq.frames.push_back(std::move(frame));
    }
  }, threads);
  return sequences;
}

SplitManifest make_split(const std::vector<SequenceInfo>& sequences, const DatasetConfig& cfg,
                         std::uint64_t seed) {
  // Group usable frames by oracle-best beam and split each class 70:30.
  std::map<int, std::vector<FrameKey>> by_class;
  for (int s = 0; s < static_cast<int>(sequences.size()); ++s)
    for (const auto& f : sequences[s].frames)
      if (f.usable) by_class[f.oracle_beams[0]].push_back({s, f.t});

  SplitManifest split;
  Rng rng(hash_mix(seed, 0x5e717));
  std::map<int, std::vector<FrameKey>> train_pool;
  for (auto& [beam, keys] : by_class) {
    rng.shuffle(keys);
    const auto n_train = static_cast<std::size_t>(
        std::floor(cfg.train_fraction * static_cast<double>(keys.size())));
    train_pool[beam] = {keys.begin(), keys.begin() + n_train};
    for (std::size_t i = n_train; i < keys.size(); ++i) split.test.push_back(keys[i]);
  }

  std::size_t total_train = 0;
  for (const auto& [beam, keys] : train_pool) total_train += keys.size();
  if (total_train < static_cast<std::size_t>(cfg.train_samples))
    throw std::runtime_error("dataset too small: train pool " + std::to_string(total_train) +
                             " < requested " + std::to_string(cfg.train_samples));

  // Trim the largest classes round-robin down to the requested count,
  // keeping at least one sample per producible class.
  std::size_t excess = total_train - cfg.train_samples;
  while (excess > 0) {
    auto largest = train_pool.begin();
    for (auto it = train_pool.begin(); it != train_pool.end(); ++it)
      if (it->second.size() > largest->second.size()) largest = it;
    if (largest->second.size() <= 1) break;
    largest->second.pop_back();
    --excess;
  }
  for (const auto& [beam, keys] : train_pool) {
    for (const auto& k : keys) split.train.push_back(k);
    split.train_class_counts[beam] = static_cast<int>(keys.size());
  }
  for (const auto& k : split.test) {
    int beam = -1;
    for (const auto& f : sequences[k.seq].frames)
      if (f.t == k.t) beam = f.oracle_beams[0];
    split.test_class_counts[beam] += 1;
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

json split_to_json(const SplitManifest& split) {
  auto keys_to_json = [](const std::vector<FrameKey>& keys) {
    json arr = json::array();
    for (const auto& k : keys) arr.push_back(json::array({k.seq, k.t}));
    return arr;
  };
  json counts_train, counts_test;
  for (const auto& [beam, n] : split.train_class_counts) counts_train[std::to_string(beam)] = n;
  for (const auto& [beam, n] : split.test_class_counts) counts_test[std::to_string(beam)] = n;
  return json{{"train", keys_to_json(split.train)},
              {"test", keys_to_json(split.test)},
              {"train_class_counts", counts_train},
              {"test_class_counts", counts_test}};
}

SplitManifest split_from_json(const json& j) {
  SplitManifest split;
  for (const auto& k : j.at("train")) split.train.push_back({k[0].get<int>(), k[1].get<int>()});
  for (const auto& k : j.at("test")) split.test.push_back({k[0].get<int>(), k[1].get<int>()});
  for (const auto& [beam, n] : j.at("train_class_counts").items())
    split.train_class_counts[std::stoi(beam)] = n.get<int>();
  for (const auto& [beam, n] : j.at("test_class_counts").items())
    split.test_class_counts[std::stoi(beam)] = n.get<int>();
  return split;
}

std::vector<SequenceInfo> load_scenario(const std::string& dir) {
  std::vector<SequenceInfo> sequences;
  for (int s = 0;; ++s) {
    const std::string sdir = dir + "/" + seq_dir_name(s);
    if (!fs::exists(sdir)) break;
    SequenceInfo seq;
    seq.dir = sdir;
    std::ifstream annot(sdir + "/annotations.jsonl");
    if (!annot) throw std::runtime_error("missing annotations in " + sdir);
    std::string line;
    while (std::getline(annot, line)) {
      if (line.empty()) continue;
      seq.frames.push_back(frame_from_annotation(json::parse(line), sdir));
    }
    // Profiles live in profiles.csv; reload them for completeness.
    std::ifstream profiles(sdir + "/profiles.csv");
    std::string row;
    std::size_t idx = 0;
    while (std::getline(profiles, row) && idx < seq.frames.size()) {
      std::vector<double> powers;
      std::size_t pos = row.find(',');
      while (pos != std::string::npos) {
        const std::size_t next = row.find(',', pos + 1);
        powers.push_back(std::stod(row.substr(pos + 1, next - pos - 1)));
        pos = next;
      }
      seq.frames[idx++].profile = std::move(powers);
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

}  // namespace

Dataset generate_dataset(const SceneConfig& scene_a, const SceneConfig& scene_b,
                         const ChannelConfig& chan, const DatasetConfig& cfg, std::uint64_t seed,
                         const std::string& out_dir, int threads) {
  Dataset ds;
  ds.root = out_dir;
  ds.codebook = channel::build_codebook({chan.m_ant, chan.spacing_wavelengths}, chan.q,
                                        chan.sector_lo, chan.sector_hi);
  fs::create_directories(out_dir);
  ds.scenario_a = generate_scenario(scene_a, chan, ds.codebook, cfg.sequences,
                                    cfg.frames_per_seq, seed, 0xa, out_dir + "/scenario_a",
                                    threads);
  ds.scenario_b = generate_scenario(scene_b, chan, ds.codebook, cfg.transfer_sequences,
                                    cfg.frames_per_seq, seed, 0xb, out_dir + "/scenario_b",
                                    threads);
  ds.split = make_split(ds.scenario_a, cfg, seed);
  std::ofstream split_file(out_dir + "/split.json");
  split_file << split_to_json(ds.split).dump(2) << "\n";
  if (!split_file) throw std::runtime_error("cannot write split.json");
  return ds;
}

Dataset load_dataset(const std::string& out_dir, const ChannelConfig& chan) {
  Dataset ds;
  ds.root = out_dir;
  ds.codebook = channel::build_codebook({chan.m_ant, chan.spacing_wavelengths}, chan.q,
                                        chan.sector_lo, chan.sector_hi);
  ds.scenario_a = load_scenario(out_dir + "/scenario_a");
  ds.scenario_b = load_scenario(out_dir + "/scenario_b");
  std::ifstream split_file(out_dir + "/split.json");
  if (!split_file) throw std::runtime_error("missing split.json in " + out_dir);
  json j;
  split_file >> j;
  ds.split = split_from_json(j);
  return ds;
}

long oracle_sweep(Dataset& ds, const ChannelConfig& chan, bool rewrite) {
  const channel::NoiseModel noise{chan.sigma_sq, chan.signal_power};
  long mismatches = 0;
  auto sweep_scenario = [&](std::vector<SequenceInfo>& sequences) {
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      std::ofstream profiles;
      if (rewrite) profiles.open(sequences[s].dir + "/profiles.csv");
      for (auto& frame : sequences[s].frames) {
        const auto state =
            channel::synth_channel(frame.paths, {chan.m_ant, chan.spacing_wavelengths},
                                   chan.k_subcarriers, frame.chan_seed);
        const auto profile = channel::power_profile(state, ds.codebook, noise);
        const auto oracle = channel::oracle_top_n(profile, std::min(5, ds.codebook.size()));
        if (oracle != frame.oracle_beams) ++mismatches;
        if (rewrite) {
          frame.profile = profile.powers;
          frame.oracle_beams = oracle;
          profiles << profile_row(frame.t, frame.profile) << "\n";
        }
      }
    }
  };
  sweep_scenario(ds.scenario_a);
  sweep_scenario(ds.scenario_b);
  return mismatches;
}

}  // namespace beamsight::dataset
