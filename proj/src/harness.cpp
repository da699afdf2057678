#include "beamsight/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "beamsight/threads.hpp"
#include "json.hpp"

namespace beamsight::harness {

using json = nlohmann::ordered_json;

namespace {

json scene_to_json(const dataset::SceneConfig& s) {
  return json{{"width_px", s.width_px},
              {"height_px", s.height_px},
              {"focal_px", s.focal_px},
              {"cam_height_m", s.cam_height_m},
              {"pitch_down_rad", s.pitch_down},
              {"yaw_rad", s.yaw},
              {"lanes_z_m", s.lanes_z_m},
              {"x_min_m", s.x_min},
              {"x_max_m", s.x_max},
              {"cars_per_lane", s.cars_per_lane},
              {"car_size_m", {s.car_length, s.car_height, s.car_depth}},
              {"size_jitter", s.size_jitter},
              {"height_jitter", s.height_jitter},
              {"speed_mps", {s.speed_min, s.speed_max}},
              {"dt_s", s.dt},
              {"n_poles", s.n_poles},
              {"pole_z_m", s.pole_z},
              {"pole_height_m", s.pole_height},
              {"noise_std", s.noise_std},
              {"background", {s.background[0], s.background[1], s.background[2]}}};
}

dataset::SceneConfig scene_from_json(const json& j, const dataset::SceneConfig& base) {
  dataset::SceneConfig s = base;
  s.width_px = j.value("width_px", s.width_px);
  s.height_px = j.value("height_px", s.height_px);
  s.focal_px = j.value("focal_px", s.focal_px);
  s.cam_height_m = j.value("cam_height_m", s.cam_height_m);
  s.pitch_down = j.value("pitch_down_rad", s.pitch_down);
  s.yaw = j.value("yaw_rad", s.yaw);
  s.lanes_z_m = j.value("lanes_z_m", s.lanes_z_m);
  s.x_min = j.value("x_min_m", s.x_min);
  s.x_max = j.value("x_max_m", s.x_max);
  s.cars_per_lane = j.value("cars_per_lane", s.cars_per_lane);
  if (j.contains("car_size_m")) {
    s.car_length = j["car_size_m"][0].get<double>();
    s.car_height = j["car_size_m"][1].get<double>();
    s.car_depth = j["car_size_m"][2].get<double>();
  }
  s.size_jitter = j.value("size_jitter", s.size_jitter);
  s.height_jitter = j.value("height_jitter", s.height_jitter);
  if (j.contains("speed_mps")) {
    s.speed_min = j["speed_mps"][0].get<double>();
    s.speed_max = j["speed_mps"][1].get<double>();
  }
  s.dt = j.value("dt_s", s.dt);
  s.n_poles = j.value("n_poles", s.n_poles);
  s.pole_z = j.value("pole_z_m", s.pole_z);
  s.pole_height = j.value("pole_height_m", s.pole_height);
  s.noise_std = j.value("noise_std", s.noise_std);
  if (j.contains("background"))
    for (int i = 0; i < 3; ++i) s.background[i] = j["background"][i].get<std::uint8_t>();
  return s;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig cfg;
  // Scenario B: lower camera, shallower tilt, shifted lanes.
  cfg.scene_b.pitch_down = 0.22;
  cfg.scene_b.cam_height_m = 5.2;
  cfg.scene_b.lanes_z_m = {30, 50};
  return cfg;
}

ExperimentConfig config_from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig cfg = default_config();
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw std::invalid_argument("config: missing or unsupported schema_version");
  if (j.contains("scene_a")) cfg.scene_a = scene_from_json(j["scene_a"], cfg.scene_a);
  if (j.contains("scene_b")) cfg.scene_b = scene_from_json(j["scene_b"], cfg.scene_b);
  if (j.contains("channel")) {
    const auto& c = j["channel"];
    cfg.channel.m_ant = c.value("m_ant", cfg.channel.m_ant);
    cfg.channel.q = c.value("q", cfg.channel.q);
    cfg.channel.spacing_wavelengths = c.value("spacing_wavelengths", 0.5);
    if (c.contains("sector_rad")) {
      cfg.channel.sector_lo = c["sector_rad"][0].get<double>();
      cfg.channel.sector_hi = c["sector_rad"][1].get<double>();
    }
    cfg.channel.k_subcarriers = c.value("k_subcarriers", cfg.channel.k_subcarriers);
    cfg.channel.sigma_sq = c.value("sigma_sq", cfg.channel.sigma_sq);
    cfg.channel.signal_power = c.value("signal_power", cfg.channel.signal_power);
    cfg.channel.n_reflectors = c.value("n_reflectors", cfg.channel.n_reflectors);
    cfg.channel.reflector_gain = c.value("reflector_gain", cfg.channel.reflector_gain);
    cfg.channel.phase_scale = c.value("phase_scale", cfg.channel.phase_scale);
  }
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    cfg.data.sequences = d.value("sequences", cfg.data.sequences);
    cfg.data.frames_per_seq = d.value("frames_per_seq", cfg.data.frames_per_seq);
    cfg.data.transfer_sequences = d.value("transfer_sequences", cfg.data.transfer_sequences);
    cfg.data.train_samples = d.value("train_samples", cfg.data.train_samples);
    cfg.data.train_fraction = d.value("train_fraction", cfg.data.train_fraction);
  }
  if (j.contains("identify")) {
    const auto& i = j["identify"];
    cfg.identify.m_id = i.value("m_id", cfg.identify.m_id);
    cfg.identify.iou_threshold = i.value("iou_threshold", cfg.identify.iou_threshold);
    cfg.identify.confidence = i.value("confidence", cfg.identify.confidence);
    cfg.identify.min_area_px2 = i.value("min_area_px2", cfg.identify.min_area_px2);
    cfg.identify.crop_px = i.value("crop_px", cfg.identify.crop_px);
    cfg.identify.epochs = i.value("epochs", cfg.identify.epochs);
    cfg.identify.lr = i.value("lr", cfg.identify.lr);
    cfg.identify.batch_size = i.value("batch_size", cfg.identify.batch_size);
    cfg.id_mode = fusion::mode_from_name(i.value("mode", std::string("method1")));
  }
  if (j.contains("geometry")) {
    const std::string variant = j["geometry"].value("variant", std::string("fan"));
    if (variant == "fan") cfg.variant = geometry::RegionVariant::fan;
    else if (variant == "strip") cfg.variant = geometry::RegionVariant::strip;
    else throw std::invalid_argument("config: unknown geometry variant " + variant);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.lr_after_decay = t.value("lr_after_decay", cfg.train.lr_after_decay);
    cfg.train.decay_trigger_val_acc = t.value("decay_trigger_val_acc", cfg.train.decay_trigger_val_acc);
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
  }
  if (j.contains("tracker")) {
    const auto& t = j["tracker"];
    cfg.tracker.iou_gate = t.value("iou_gate", cfg.tracker.iou_gate);
    cfg.tracker.max_misses = t.value("max_misses", cfg.tracker.max_misses);
    cfg.tracker.process_noise = t.value("process_noise", cfg.tracker.process_noise);
    cfg.tracker.velocity_noise = t.value("velocity_noise", cfg.tracker.velocity_noise);
    cfg.tracker.measurement_noise = t.value("measurement_noise", cfg.tracker.measurement_noise);
  }
  cfg.seed = j.value("seed", cfg.seed);
  cfg.threads = j.value("threads", cfg.threads);
  validate(cfg);
  return cfg;
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json j{{"schema_version", cfg.schema_version},
         {"scene_a", scene_to_json(cfg.scene_a)},
         {"scene_b", scene_to_json(cfg.scene_b)},
         {"channel",
          {{"m_ant", cfg.channel.m_ant},
           {"q", cfg.channel.q},
           {"spacing_wavelengths", cfg.channel.spacing_wavelengths},
           {"sector_rad", {cfg.channel.sector_lo, cfg.channel.sector_hi}},
           {"k_subcarriers", cfg.channel.k_subcarriers},
           {"sigma_sq", cfg.channel.sigma_sq},
           {"signal_power", cfg.channel.signal_power},
           {"n_reflectors", cfg.channel.n_reflectors},
           {"reflector_gain", cfg.channel.reflector_gain},
           {"phase_scale", cfg.channel.phase_scale}}},
         {"dataset",
          {{"sequences", cfg.data.sequences},
           {"frames_per_seq", cfg.data.frames_per_seq},
           {"transfer_sequences", cfg.data.transfer_sequences},
           {"train_samples", cfg.data.train_samples},
           {"train_fraction", cfg.data.train_fraction}}},
         {"identify",
          {{"m_id", cfg.identify.m_id},
           {"iou_threshold", cfg.identify.iou_threshold},
           {"confidence", cfg.identify.confidence},
           {"min_area_px2", cfg.identify.min_area_px2},
           {"crop_px", cfg.identify.crop_px},
           {"epochs", cfg.identify.epochs},
           {"lr", cfg.identify.lr},
           {"batch_size", cfg.identify.batch_size},
           {"mode", fusion::mode_name(cfg.id_mode)}}},
         {"geometry",
          {{"variant", cfg.variant == geometry::RegionVariant::fan ? "fan" : "strip"}}},
         {"train",
          {{"lr", cfg.train.lr},
           {"lr_after_decay", cfg.train.lr_after_decay},
           {"decay_trigger_val_acc", cfg.train.decay_trigger_val_acc},
           {"epochs", cfg.train.epochs},
           {"batch_size", cfg.train.batch_size}}},
         {"tracker",
          {{"iou_gate", cfg.tracker.iou_gate},
           {"max_misses", cfg.tracker.max_misses},
           {"process_noise", cfg.tracker.process_noise},
           {"velocity_noise", cfg.tracker.velocity_noise},
           {"measurement_noise", cfg.tracker.measurement_noise}}},
         {"seed", cfg.seed},
         {"threads", cfg.threads}};
  return j.dump(2) + "\n";
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return config_from_json_text(text);
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.channel.q < 1 || cfg.channel.m_ant < 1)
    throw std::invalid_argument("config: q and m_ant must be >= 1");
  if (cfg.channel.sector_lo >= cfg.channel.sector_hi)
    throw std::invalid_argument("config: empty codebook sector");
  if (cfg.data.train_fraction <= 0 || cfg.data.train_fraction >= 1)
    throw std::invalid_argument("config: train_fraction must be in (0,1)");
  if (cfg.train.lr <= cfg.train.lr_after_decay || cfg.train.lr_after_decay <= 0)
    throw std::invalid_argument("config: need lr > lr_after_decay > 0");
  if (cfg.identify.m_id < 1) throw std::invalid_argument("config: m_id must be >= 1");
  if (cfg.id_mode == scene::PreprocessMode::method2)
    throw std::invalid_argument("config: method2 is an identification-study input, not a pipeline mode");
  if (cfg.scene_a.width_px < 64 || cfg.scene_a.height_px < 64)
    throw std::invalid_argument("config: image must be at least 64x64");
}

GeoContext make_geo_context(const dataset::SceneConfig& scfg, const channel::Codebook& codebook) {
  GeoContext geo;
  geo.cam = dataset::make_camera(scfg);
  geo.colmap = fusion::beam_column_map(codebook, geo.cam);
  // Vanishing point from the known pole layout, once per camera config.
  Rng rng(0x9e0);
  auto objects = dataset::spawn_scene(scfg, rng);
  const auto segments = scene::pole_segments(geo.cam, objects);
  if (segments.size() >= 2) geo.vp = geometry::estimate_vp(segments);
  geo.strip_map = geometry::make_region_map(geometry::RegionVariant::strip, geo.colmap, {});
  if (geo.vp) {
    geo.fan_map = geometry::make_region_map(geometry::RegionVariant::fan, geo.colmap, geo.vp);
  } else {
    geo.fan_map = geo.strip_map;  // untilted camera: fan degenerates to strips
  }
  return geo;
}

fusion::FusedImage fused_for_frame(const dataset::FrameInfo& frame,
                                   const fusion::ColumnMap& colmap, scene::PreprocessMode mode,
                                   bool zero_power) {
  scene::RenderResult render_like;
  render_like.image = load_ppm(frame.image_path);
  render_like.object_mask = load_pgm(frame.mask_path);
  const ImageU8 plane1 = scene::preprocess(render_like, mode);
  ImageU8 plane2(plane1.w, plane1.h, 1, 0);
  if (!zero_power) {
    channel::PowerProfile profile;
    profile.powers = frame.profile;
    plane2 = fusion::rasterize_profile(profile, colmap, plane1.h, plane1.w);
  }
  return fusion::fuse(plane1, plane2, mode);
}

beamnet::Sample beam_sample(const ImageU8& image, const std::optional<BBox>& isolate_box,
                            const geometry::RegionMap& map, int oracle_best,
                            BeamSampleStats* stats) {
  ImageU8 working = isolate_box ? geometry::isolate_tx(image, *isolate_box) : image;
  const auto space = geometry::reduce_search_space(working, map);
  beamnet::Sample sample;
  sample.label = static_cast<std::uint8_t>(oracle_best);
  if (space) {
    for (int q = 0; q < beamnet::kBeams && q < static_cast<int>(space->bits.size()); ++q)
      sample.bits[q] = space->bits[q];
  } else {
    sample.bits.fill(1);  // empty overlap: fall back to the full beam set
  }
  if (stats) {
    stats->fallback = !space.has_value();
    stats->popcount = space ? space->popcount() : beamnet::kBeams;
    stats->contained = sample.bits[oracle_best] != 0;
  }
  const ImageU8 resized = resize_nearest(working, beamnet::kInputHw, beamnet::kInputHw);
  const int hw = beamnet::kInputHw * beamnet::kInputHw;
  sample.image.resize(3 * static_cast<std::size_t>(hw));
  for (int y = 0; y < beamnet::kInputHw; ++y)
    for (int x = 0; x < beamnet::kInputHw; ++x)
      for (int ch = 0; ch < 3; ++ch)
        sample.image[static_cast<std::size_t>(ch) * hw + y * beamnet::kInputHw + x] =
            resized.at(x, y, ch);
  return sample;
}

BeamSampleSet build_beam_samples(const dataset::Dataset& ds,
                                 const std::vector<dataset::FrameKey>& keys,
                                 const GeoContext& geo, geometry::RegionVariant variant,
                                 bool full_frame, int threads) {
  BeamSampleSet set;
  set.samples.resize(keys.size());
  set.oracle_best.resize(keys.size());
  const geometry::RegionMap& map =
      variant == geometry::RegionVariant::fan ? geo.fan_map : geo.strip_map;
  parallel_for(keys.size(), [&](std::size_t i) {
    const auto& key = keys[i];
    const dataset::FrameInfo& frame = ds.scenario_a[key.seq].frames[key.t];
    const ImageU8 image = load_ppm(frame.image_path);
    const std::optional<BBox> box = full_frame ? std::nullopt : frame.tx_box;
    set.samples[i] = beam_sample(image, box, map, frame.oracle_beams[0], nullptr);
    set.oracle_best[i] = frame.oracle_beams[0];
  }, threads);
  return set;
}

identify::IdTrainHistory train_id_pipeline(const ExperimentConfig& cfg,
                                           const dataset::Dataset& ds, identify::IdModel& model,
                                           scene::PreprocessMode mode, bool zero_power) {
  // Crops from the train split; a proposal is positive when it matches the
  // ground-truth TX box at the configured IoU threshold.
  std::vector<identify::IdSample> train_samples, val_samples;
  const fusion::ColumnMap colmap =
      fusion::beam_column_map(ds.codebook, dataset::make_camera(cfg.scene_a));
  auto collect = [&](const std::vector<dataset::FrameKey>& keys,
                     std::vector<identify::IdSample>& out) {
    std::vector<std::vector<identify::IdSample>> per_key(keys.size());
    parallel_for(keys.size(), [&](std::size_t i) {
      const auto& key = keys[i];
      const dataset::FrameInfo& frame = ds.scenario_a[key.seq].frames[key.t];
      const auto fused = fused_for_frame(frame, colmap, mode, zero_power);
      auto proposals = identify::propose(fused, cfg.identify);
      for (const auto& p : proposals) {
        identify::IdSample sample;
        sample.crop = identify::crop_fused(fused, p.bbox, cfg.identify);
        sample.label = frame.tx_box && iou(p.bbox, *frame.tx_box) >= cfg.identify.iou_threshold;
        per_key[i].push_back(std::move(sample));
      }
    }, cfg.threads);
    for (auto& chunk : per_key)
      for (auto& s : chunk) out.push_back(std::move(s));
  };
  collect(ds.split.train, train_samples);
  // Small validation slice from the test split keeps training observable.
  std::vector<dataset::FrameKey> val_keys = ds.split.test;
  if (val_keys.size() > 120) val_keys.resize(120);
  collect(val_keys, val_samples);

  identify::IdConfig train_cfg = cfg.identify;
  train_cfg.seed = hash_mix(cfg.seed, 0x1de);
  return identify::train_id(model, train_samples, val_samples, train_cfg);
}

beamnet::TrainHistory train_beam_pipeline(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                                          beamnet::BeamNetParams& params, int ablation) {
  const GeoContext geo = make_geo_context(cfg.scene_a, ds.codebook);
  const geometry::RegionVariant variant =
      ablation == 3 ? geometry::RegionVariant::strip : cfg.variant;
  const bool full_frame = ablation == 1;
  const BeamSampleSet train_set =
      build_beam_samples(ds, ds.split.train, geo, variant, full_frame, cfg.threads);
  const BeamSampleSet val_set =
      build_beam_samples(ds, ds.split.test, geo, variant, full_frame, cfg.threads);
  params = beamnet::init_beamnet(hash_mix(cfg.seed, 0xbea0 + ablation), ablation != 2);
  beamnet::TrainConfig train_cfg = cfg.train;
  train_cfg.seed = hash_mix(cfg.seed, 0x7a1 + ablation);
  return beamnet::train(params, train_set.samples, val_set.samples, train_cfg);
}

namespace {

struct SequenceResult {
  // Stateless detector metrics over metric frames, in time order.
  std::vector<std::optional<BBox>> det_preds;
  std::vector<BBox> det_gts;
  std::vector<int> det_picked_tracks;  // -1 when nothing detected
  std::vector<int> det_frame_beams;
  int tx_id = -1;
  std::map<int, std::map<int, int>> track_object_votes;  // track -> object -> count
  // Beam metrics.
  long gt_eval = 0, gt_top1 = 0, gt_top3 = 0, gt_top5 = 0;
  long e2e_eval = 0, e2e_top1 = 0, e2e_top3 = 0, e2e_top5 = 0;
  long e2e_with_box = 0, e2e_top1_x = 0, e2e_top3_x = 0, e2e_top5_x = 0;
  long excluded = 0, reid = 0;
  long contain_fan = 0, contain_strip = 0;
  long popcount_sum = 0, fallback = 0;
};

bool in_top(const beamnet::Prediction& pred, int oracle, int n) {
  const int limit = std::min<int>(n, static_cast<int>(pred.top.size()));
  for (int i = 0; i < limit; ++i)
    if (pred.top[i] == oracle) return true;
  return false;
}

SequenceResult eval_sequence(const ExperimentConfig& cfg, const dataset::SequenceInfo& seq,
                             const GeoContext& geo,
                             const std::set<std::pair<int, int>>* test_filter, int seq_index,
                             const identify::IdModel& id_model,
                             const beamnet::BeamNetParams& beam_params) {
  SequenceResult res;
  const geometry::RegionMap& variant_map =
      cfg.variant == geometry::RegionVariant::fan ? geo.fan_map : geo.strip_map;

  track::MultiTracker tracker(cfg.tracker);
  enum class Stage { identifying, tracking };
  Stage stage = Stage::identifying;
  int votes_left = cfg.identify.m_id;
  std::map<int, int> votes;
  std::map<int, double> vote_scores;

  for (const auto& frame : seq.frames) {
    if (frame.tx_id >= 0) res.tx_id = frame.tx_id;
    scene::RenderResult render_like;
    render_like.image = load_ppm(frame.image_path);
    render_like.object_mask = load_pgm(frame.mask_path);

    channel::PowerProfile profile;
    profile.powers = frame.profile;
    const ImageU8 plane2 =
        fusion::rasterize_profile(profile, geo.colmap, render_like.image.h, render_like.image.w);
    const ImageU8 plane1 = scene::preprocess(render_like, cfg.id_mode);
    fusion::FusedImage fused = fusion::fuse(plane1, plane2, cfg.id_mode);

    auto proposals = identify::propose(fused, cfg.identify);
    std::vector<BBox> boxes;
    boxes.reserve(proposals.size());
    for (const auto& p : proposals) boxes.push_back(p.bbox);
    const std::vector<int> det_track_ids = tracker.step(boxes);

    // Track -> ground-truth object correspondence accumulates every frame.
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      double best_iou = 0.5;
      int best_obj = -1;
      for (const auto& [obj_id, gt_box] : frame.boxes) {
        const double v = iou(proposals[i].bbox, gt_box);
        if (v >= best_iou) {
          best_iou = v;
          best_obj = obj_id;
        }
      }
      if (best_obj >= 0) res.track_object_votes[det_track_ids[i]][best_obj] += 1;
    }

    const auto det = identify::detect_tx(id_model, fused, proposals, cfg.identify);

    // Identification / tracking state machine.
    if (stage == Stage::identifying) {
      if (det) {
        const int track = det_track_ids[*det];
        votes[track] += 1;
        vote_scores[track] += proposals[*det].score;
      }
      votes_left -= 1;
      if (votes_left == 0) {
        int best = -1, best_votes = -1;
        double best_mean = -1;
        for (const auto& [track, count] : votes) {
          const double mean = vote_scores[track] / count;
          if (count > best_votes || (count == best_votes && mean > best_mean)) {
            best = track;
            best_votes = count;
            best_mean = mean;
          }
        }
        votes.clear();
        vote_scores.clear();
        if (best >= 0 && tracker.flag_tx(best)) {
          stage = Stage::tracking;
        } else {
          res.reid += 1;  // identification failed outright; try again
          votes_left = cfg.identify.m_id;
        }
      }
    } else if (!tracker.tx_alive()) {
      res.reid += 1;
      stage = Stage::identifying;
      votes_left = cfg.identify.m_id;
    }

    const bool metric_frame =
        frame.usable &&
        (!test_filter || test_filter->count({seq_index, frame.t}) > 0);
    if (!metric_frame) continue;

    const int oracle = frame.oracle_beams[0];

    // Stateless detector record.
    res.det_preds.push_back(det ? std::optional<BBox>(proposals[*det].bbox) : std::nullopt);
    res.det_gts.push_back(*frame.tx_box);
    res.det_picked_tracks.push_back(det ? det_track_ids[*det] : -1);
    res.det_frame_beams.push_back(oracle);

    // Ground-truth-box condition (tracking independent).
    BeamSampleStats stats_fan, stats_strip;
    const beamnet::Sample sample_gt =
        beam_sample(render_like.image, frame.tx_box, geo.fan_map, oracle, &stats_fan);
    beam_sample(render_like.image, frame.tx_box, geo.strip_map, oracle, &stats_strip);
    res.contain_fan += stats_fan.contained ? 1 : 0;
    res.contain_strip += stats_strip.contained ? 1 : 0;
    res.popcount_sum += stats_fan.popcount;
    res.fallback += stats_fan.fallback ? 1 : 0;
    res.gt_eval += 1;
    const beamnet::Sample sample_for_variant =
        cfg.variant == geometry::RegionVariant::fan
            ? sample_gt
            : beam_sample(render_like.image, frame.tx_box, geo.strip_map, oracle, nullptr);
    const auto pred_gt = beamnet::predict_top_n(beam_params, sample_for_variant, 5);
    res.gt_top1 += in_top(pred_gt, oracle, 1) ? 1 : 0;
    res.gt_top3 += in_top(pred_gt, oracle, 3) ? 1 : 0;
    res.gt_top5 += in_top(pred_gt, oracle, 5) ? 1 : 0;

    // End-to-end condition: only frames after the identification window.
    if (frame.t >= cfg.identify.m_id) {
      res.e2e_eval += 1;
      const auto tx_box = stage == Stage::tracking ? tracker.tx_box() : std::nullopt;
      if (tx_box) {
        const beamnet::Sample sample_e2e =
            beam_sample(render_like.image, tx_box, variant_map, oracle, nullptr);
        const auto pred = beamnet::predict_top_n(beam_params, sample_e2e, 5);
        const bool t1 = in_top(pred, oracle, 1), t3 = in_top(pred, oracle, 3),
                   t5 = in_top(pred, oracle, 5);
        res.e2e_top1 += t1;
        res.e2e_top3 += t3;
        res.e2e_top5 += t5;
        res.e2e_with_box += 1;
        res.e2e_top1_x += t1;
        res.e2e_top3_x += t3;
        res.e2e_top5_x += t5;
      } else {
        res.excluded += 1;  // counted wrong in the primary metric
      }
    }
  }
  return res;
}

ScenarioMetrics merge_scenario(const ExperimentConfig& cfg,
                               const std::vector<SequenceResult>& results) {
  ScenarioMetrics m;
  long det_n = 0, det_hits = 0;
  std::map<int, std::pair<long, long>> window_counts;  // m -> (hits, total)
  long contain_fan = 0, contain_strip = 0, popcount_sum = 0;

  for (const auto& res : results) {
    m.frames_total += static_cast<long>(res.det_preds.size());
    // Frame-level detector accuracy (missing detection = failure).
    for (std::size_t i = 0; i < res.det_preds.size(); ++i) {
      det_n += 1;
      if (res.det_preds[i] &&
          iou(*res.det_preds[i], res.det_gts[i]) >= cfg.identify.iou_threshold)
        det_hits += 1;
    }
    // Identity windows: map picked tracks to objects by majority overlap.
    std::map<int, int> track_to_object;
    for (const auto& [track, votes] : res.track_object_votes) {
      int best_obj = -1, best = 0;
      for (const auto& [obj, count] : votes) {
        if (count > best) {
          best = count;
          best_obj = obj;
        }
      }
      track_to_object[track] = best_obj;
    }
    for (int mwin : {1, 3, 5}) {
      auto& [hits, total] = window_counts[mwin];
      const auto n = res.det_picked_tracks.size();
      for (std::size_t start = 0; start + mwin <= n; start += mwin) {
        std::map<int, int> votes;
        for (std::size_t i = start; i < start + mwin; ++i)
          if (res.det_picked_tracks[i] >= 0) votes[res.det_picked_tracks[i]] += 1;
        total += 1;
        if (votes.empty()) continue;
        int best_track = -1, best = -1;
        for (const auto& [track, count] : votes) {
          if (count > best) {
            best = count;
            best_track = track;
          }
        }
        const auto it = track_to_object.find(best_track);
        if (it != track_to_object.end() && it->second == res.tx_id) hits += 1;
      }
    }
    m.eval_frames += res.gt_eval;
    m.beam_gt.top1 += res.gt_top1;
    m.beam_gt.top3 += res.gt_top3;
    m.beam_gt.top5 += res.gt_top5;
    m.e2e_evaluated += res.e2e_eval;
    m.beam_e2e.top1 += res.e2e_top1;
    m.beam_e2e.top3 += res.e2e_top3;
    m.beam_e2e.top5 += res.e2e_top5;
    m.e2e_excluded += res.excluded;
    m.beam_e2e_excl.top1 += res.e2e_top1_x;
    m.beam_e2e_excl.top3 += res.e2e_top3_x;
    m.beam_e2e_excl.top5 += res.e2e_top5_x;
    m.reid_events += res.reid;
    contain_fan += res.contain_fan;
    contain_strip += res.contain_strip;
    popcount_sum += res.popcount_sum;
    m.fallback_frames += res.fallback;
  }
  const double gt_n = std::max<long>(1, m.eval_frames);
  m.beam_gt.top1 /= gt_n;
  m.beam_gt.top3 /= gt_n;
  m.beam_gt.top5 /= gt_n;
  const double e2e_n = std::max<long>(1, m.e2e_evaluated);
  m.beam_e2e.top1 /= e2e_n;
  m.beam_e2e.top3 /= e2e_n;
  m.beam_e2e.top5 /= e2e_n;
  const long with_box = m.e2e_evaluated - m.e2e_excluded;
  const double excl_n = std::max<long>(1, with_box);
  m.beam_e2e_excl.top1 /= excl_n;
  m.beam_e2e_excl.top3 /= excl_n;
  m.beam_e2e_excl.top5 /= excl_n;
  m.id_frame_accuracy = det_n > 0 ? static_cast<double>(det_hits) / det_n : 0;
  for (const auto& [mwin, counts] : window_counts)
    m.id_window_accuracy[mwin] =
        counts.second > 0 ? static_cast<double>(counts.first) / counts.second : 0;
  m.containment_fan = contain_fan / gt_n;
  m.containment_strip = contain_strip / gt_n;
  m.mean_search_bits = popcount_sum / gt_n;
  m.overhead_reduction = 1.0 - m.mean_search_bits / beamnet::kBeams;
  return m;
}

ScenarioMetrics eval_scenario(const ExperimentConfig& cfg,
                              const std::vector<dataset::SequenceInfo>& sequences,
                              const GeoContext& geo,
                              const std::set<std::pair<int, int>>* test_filter,
                              const identify::IdModel& id_model,
                              const beamnet::BeamNetParams& beam_params) {
  std::vector<SequenceResult> results(sequences.size());
  parallel_for(sequences.size(), [&](std::size_t s) {
    results[s] = eval_sequence(cfg, sequences[s], geo, test_filter, static_cast<int>(s),
                               id_model, beam_params);
  }, cfg.threads);
  return merge_scenario(cfg, results);
}

}  // namespace

MetricsReport evaluate(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                       const identify::IdModel& id_model,
                       const beamnet::BeamNetParams& beam_params) {
  MetricsReport report;
  report.beamnet_parameters = beamnet::param_count(beam_params);
  report.id_parameters = identify::param_count(id_model);

  const GeoContext geo_a = make_geo_context(cfg.scene_a, ds.codebook);
  const GeoContext geo_b = make_geo_context(cfg.scene_b, ds.codebook);
  std::set<std::pair<int, int>> test_filter;
  for (const auto& key : ds.split.test) test_filter.insert({key.seq, key.t});

  report.scenario_a =
      eval_scenario(cfg, ds.scenario_a, geo_a, &test_filter, id_model, beam_params);
  report.scenario_b = eval_scenario(cfg, ds.scenario_b, geo_b, nullptr, id_model, beam_params);
  return report;
}

UniformPickTest uniform_pick_test(const std::vector<int>& proposal_counts,
                                  const std::vector<int>& tx_matches,
                                  const std::vector<int>& hits) {
  UniformPickTest test;
  for (std::size_t i = 0; i < proposal_counts.size(); ++i) {
    if (proposal_counts[i] < 1) continue;
    const double p = static_cast<double>(tx_matches[i]) / proposal_counts[i];
    test.expected += p;
    test.variance += p * (1.0 - p);
    test.observed += hits[i];
  }
  if (test.variance <= 0) {
    test.p_value = 1.0;
    return test;
  }
  const double z = (test.observed - test.expected) / std::sqrt(test.variance);
  test.p_value = std::erfc(std::abs(z) / std::sqrt(2.0));
  return test;
}

namespace {

// Stateless detector evaluation for the identification ablations.
struct IdEval {
  double frame_accuracy = 0;
  UniformPickTest uniform;
};

IdEval eval_id_detector(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                        const identify::IdModel& model, scene::PreprocessMode mode,
                        bool zero_power) {
  const GeoContext geo = make_geo_context(cfg.scene_a, ds.codebook);
  const auto& keys = ds.split.test;
  std::vector<int> proposal_counts(keys.size(), 0), tx_matches(keys.size(), 0),
      hits(keys.size(), 0);
  std::vector<int> gated_hits(keys.size(), 0);
  parallel_for(keys.size(), [&](std::size_t i) {
    const auto& key = keys[i];
    const dataset::FrameInfo& frame = ds.scenario_a[key.seq].frames[key.t];
    const auto fused = fused_for_frame(frame, geo.colmap, mode, zero_power);
    auto proposals = identify::propose(fused, cfg.identify);
    proposal_counts[i] = static_cast<int>(proposals.size());
    if (proposals.empty()) return;
    for (const auto& p : proposals)
      if (iou(p.bbox, *frame.tx_box) >= cfg.identify.iou_threshold) tx_matches[i] += 1;
    const auto det = identify::detect_tx(model, fused, proposals, cfg.identify);
    // Forced argmax pick for the uniform-null comparison.
    int forced = 0;
    for (std::size_t p = 1; p < proposals.size(); ++p)
      if (proposals[p].score > proposals[forced].score) forced = static_cast<int>(p);
    if (iou(proposals[forced].bbox, *frame.tx_box) >= cfg.identify.iou_threshold) hits[i] = 1;
    if (det && iou(proposals[*det].bbox, *frame.tx_box) >= cfg.identify.iou_threshold)
      gated_hits[i] = 1;
  }, cfg.threads);
  IdEval out;
  long total = 0, correct = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    total += 1;
    correct += gated_hits[i];
  }
  out.frame_accuracy = total > 0 ? static_cast<double>(correct) / total : 0;
  out.uniform = uniform_pick_test(proposal_counts, tx_matches, hits);
  return out;
}

TopN eval_beam_gt(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                  const std::vector<dataset::SequenceInfo>& sequences, bool scenario_a,
                  const GeoContext& geo, const beamnet::BeamNetParams& params,
                  geometry::RegionVariant variant, bool full_frame) {
  std::vector<std::pair<int, int>> keys;  // (seq, t)
  if (scenario_a) {
    for (const auto& k : ds.split.test) keys.emplace_back(k.seq, k.t);
  } else {
    for (int s = 0; s < static_cast<int>(sequences.size()); ++s)
      for (const auto& f : sequences[s].frames)
        if (f.usable) keys.emplace_back(s, f.t);
  }
  const geometry::RegionMap& map =
      variant == geometry::RegionVariant::fan ? geo.fan_map : geo.strip_map;
  std::vector<std::array<int, 3>> hits(keys.size(), {0, 0, 0});
  parallel_for(keys.size(), [&](std::size_t i) {
    const auto& [s, t] = keys[i];
    const dataset::FrameInfo& frame = sequences[s].frames[t];
    const ImageU8 image = load_ppm(frame.image_path);
    const std::optional<BBox> box = full_frame ? std::nullopt : frame.tx_box;
    const auto sample = beam_sample(image, box, map, frame.oracle_beams[0], nullptr);
    const auto pred = beamnet::predict_top_n(params, sample, 5);
    hits[i] = {in_top(pred, frame.oracle_beams[0], 1) ? 1 : 0,
               in_top(pred, frame.oracle_beams[0], 3) ? 1 : 0,
               in_top(pred, frame.oracle_beams[0], 5) ? 1 : 0};
  }, cfg.threads);
  TopN out;
  for (const auto& h : hits) {
    out.top1 += h[0];
    out.top3 += h[1];
    out.top5 += h[2];
  }
  const double n = std::max<std::size_t>(1, keys.size());
  out.top1 /= n;
  out.top3 /= n;
  out.top5 /= n;
  return out;
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                            const std::string& which) {
  AblationResult result;
  result.name = which;
  if (which == "1" || which == "2" || which == "3") {
    const int ablation = which[0] - '0';
    beamnet::BeamNetParams params;
    train_beam_pipeline(cfg, ds, params, ablation);
    const GeoContext geo_a = make_geo_context(cfg.scene_a, ds.codebook);
    const GeoContext geo_b = make_geo_context(cfg.scene_b, ds.codebook);
    const geometry::RegionVariant variant =
        ablation == 3 ? geometry::RegionVariant::strip : cfg.variant;
    const bool full_frame = ablation == 1;
    result.beam_a =
        eval_beam_gt(cfg, ds, ds.scenario_a, true, geo_a, params, variant, full_frame);
    result.beam_b =
        eval_beam_gt(cfg, ds, ds.scenario_b, false, geo_b, params, variant, full_frame);
    return result;
  }
  if (which == "id-rgb" || which == "id-zero") {
    const bool zero_power = which == "id-zero";
    const scene::PreprocessMode mode =
        zero_power ? cfg.id_mode : scene::PreprocessMode::rgb;
    identify::IdModel model = identify::init_id_model(hash_mix(cfg.seed, 0x1dab), cfg.identify.crop_px);
    train_id_pipeline(cfg, ds, model, mode, zero_power);
    const IdEval eval = eval_id_detector(cfg, ds, model, mode, zero_power);
    result.id_frame_accuracy_a = eval.frame_accuracy;
    if (zero_power) result.chi2_p_value = eval.uniform.p_value;
    return result;
  }
  throw std::invalid_argument("unknown ablation: " + which);
}

std::vector<std::string> strict_failures(const MetricsReport& report) {
  std::vector<std::string> failures;
  const auto& a = report.scenario_a;
  const auto& b = report.scenario_b;
  if (a.beam_e2e.top5 < 0.95)
    failures.push_back("scenario A end-to-end top-5 below 0.95: " +
                       std::to_string(a.beam_e2e.top5));
  if (a.beam_e2e.top1 < 0.55)
    failures.push_back("scenario A end-to-end top-1 below 0.55: " +
                       std::to_string(a.beam_e2e.top1));
  if (a.beam_e2e.top5 - b.beam_e2e.top5 > 0.06)
    failures.push_back("transfer top-5 gap above 6 points: " +
                       std::to_string(a.beam_e2e.top5 - b.beam_e2e.top5));
  return failures;
}

}  // namespace beamsight::harness
