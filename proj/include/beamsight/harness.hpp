#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "beamsight/beamnet.hpp"
#include "beamsight/dataset.hpp"
#include "beamsight/geometry.hpp"
#include "beamsight/identify.hpp"
#include "beamsight/track.hpp"

namespace beamsight::harness {

struct ExperimentConfig {
  int schema_version = 1;
  dataset::SceneConfig scene_a;
  dataset::SceneConfig scene_b;  // transfer scenario
  dataset::ChannelConfig channel;
  dataset::DatasetConfig data;
  identify::IdConfig identify;
  scene::PreprocessMode id_mode = scene::PreprocessMode::method1;
  geometry::RegionVariant variant = geometry::RegionVariant::fan;
  beamnet::TrainConfig train;
  track::TrackerConfig tracker;
  std::uint64_t seed = 1234;
  int threads = 0;
};

ExperimentConfig default_config();
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& cfg);
ExperimentConfig load_config_file(const std::string& path);
void validate(const ExperimentConfig& cfg);  // throws std::invalid_argument

// Camera calibration shared by fusion and geometry: column map at the bottom
// anchor row plus the vanishing point estimated once per camera config from
// the pole layout.
struct GeoContext {
  scene::Camera cam;
  fusion::ColumnMap colmap;
  std::optional<geometry::VanishingPoint> vp;
  geometry::RegionMap fan_map;
  geometry::RegionMap strip_map;
};

GeoContext make_geo_context(const dataset::SceneConfig& scfg, const channel::Codebook& codebook);

fusion::FusedImage fused_for_frame(const dataset::FrameInfo& frame,
                                   const fusion::ColumnMap& colmap, scene::PreprocessMode mode,
                                   bool zero_power);

// Isolated (or full-frame) predictor input; bits fall back to all-true when
// the overlap is empty.
struct BeamSampleStats {
  int popcount = 0;
  bool contained = false;  // oracle best beam inside the reduced set
  bool fallback = false;
};
beamnet::Sample beam_sample(const ImageU8& image, const std::optional<BBox>& isolate_box,
                            const geometry::RegionMap& map, int oracle_best,
                            BeamSampleStats* stats = nullptr);

struct BeamSampleSet {
  std::vector<beamnet::Sample> samples;
  std::vector<int> oracle_best;
};
BeamSampleSet build_beam_samples(const dataset::Dataset& ds,
                                 const std::vector<dataset::FrameKey>& keys,
                                 const GeoContext& geo, geometry::RegionVariant variant,
                                 bool full_frame, int threads);

// Ablation codes: 0 full model, 1 full-frame input, 2 no search pathway or
// mask, 3 strip regions.
identify::IdTrainHistory train_id_pipeline(const ExperimentConfig& cfg,
                                           const dataset::Dataset& ds, identify::IdModel& model,
                                           scene::PreprocessMode mode, bool zero_power);
beamnet::TrainHistory train_beam_pipeline(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                                          beamnet::BeamNetParams& params, int ablation);

struct TopN {
  double top1 = 0, top3 = 0, top5 = 0;
};

struct ScenarioMetrics {
  long frames_total = 0;
  long eval_frames = 0;  // usable frames in the metric set
  double id_frame_accuracy = 0;
  std::map<int, double> id_window_accuracy;  // m -> identity accuracy
  TopN beam_gt;
  TopN beam_e2e;       // missing TX box counts as wrong
  TopN beam_e2e_excl;  // frames with a tracked box only
  long e2e_evaluated = 0;
  long e2e_excluded = 0;
  long reid_events = 0;
  double containment_fan = 0;
  double containment_strip = 0;
  double mean_search_bits = 0;
  double overhead_reduction = 0;
  long fallback_frames = 0;
};

struct MetricsReport {
  ScenarioMetrics scenario_a;
  ScenarioMetrics scenario_b;
  long calibration_misses = 0;
  std::size_t beamnet_parameters = 0;
  std::size_t id_parameters = 0;
};

MetricsReport evaluate(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                       const identify::IdModel& id_model,
                       const beamnet::BeamNetParams& beam_params);

struct AblationResult {
  std::string name;
  TopN beam_a;  // ground-truth-box condition, scenario A test split
  TopN beam_b;
  double id_frame_accuracy_a = 0;  // identification ablations only
  double chi2_p_value = -1;        // id-zero only: uniform-pick consistency
};

// which: "1", "2", "3" (beam variants) or "id-rgb", "id-zero".
AblationResult run_ablation(const ExperimentConfig& cfg, const dataset::Dataset& ds,
                            const std::string& which);

// Uniform-over-proposals consistency for a detector: one-dof chi-square
// p-value of the observed hit count against the uniform-pick null.
struct UniformPickTest {
  double observed = 0;
  double expected = 0;
  double variance = 0;
  double p_value = 1;
};
UniformPickTest uniform_pick_test(const std::vector<int>& proposal_counts,
                                  const std::vector<int>& tx_matches,
                                  const std::vector<int>& hits);

// Strict eval thresholds; returns human-readable failures (empty = pass).
std::vector<std::string> strict_failures(const MetricsReport& report);

}  // namespace beamsight::harness
