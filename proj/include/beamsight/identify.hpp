#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "beamsight/bbox.hpp"
#include "beamsight/fusion.hpp"
#include "beamsight/net.hpp"

namespace beamsight::identify {

struct Proposal {
  BBox bbox;
  double score = 0;
};

struct IdConfig {
  int m_id = 5;                    // identification frame count
  double iou_threshold = 0.5;      // Z
  double confidence = 0.5;
  double min_area_px2 = 25;
  double min_width_px = 3;         // rejects lamp-post-like slivers
  double max_aspect = 4.0;         // h/w cap, same purpose
  double propose_threshold = 0.2;  // plane fraction of 255
  int crop_px = 32;
  double crop_margin = 0.4;        // context around the box, fraction of size
  // training
  int epochs = 12;
  double lr = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 0;
};

// Same conv stack as the beam predictor at reduced width (8/16/32) over
// 32x32x3 fused crops, then fc 512 -> 32 -> 1 sigmoid.
struct IdModel {
  net::Conv3x3 c1, c2, c3;
  net::BatchNorm bn1, bn2, bn3;
  net::Fc f1, f2;
  int crop_px = 32;
};

IdModel init_id_model(std::uint64_t seed, int crop_px = 32);
std::size_t param_count(const IdModel& model);
std::vector<TensorRef> trainable_tensors(IdModel& model);
std::vector<TensorRef> all_tensors(IdModel& model);
void save_id_model(const IdModel& model, const std::string& path);
IdModel load_id_model(const std::string& path);

// Connected components of plane1 above threshold (rgb/method1); contiguous
// above-threshold column bands of plane2 as full-height boxes (method2).
std::vector<Proposal> propose(const fusion::FusedImage& fused, const IdConfig& cfg);

// 3-channel crop of the fused planes around the box, nearest-resized.
std::vector<std::uint8_t> crop_fused(const fusion::FusedImage& fused, const BBox& bbox,
                                     const IdConfig& cfg);

// Sigmoid scorer output in (0,1).
double score(const IdModel& model, const std::vector<std::uint8_t>& crop);
std::vector<double> score_batch(const IdModel& model,
                                const std::vector<std::vector<std::uint8_t>>& crops);

// Scores every proposal (in place) and returns the index of the best one at
// or above the confidence threshold.
std::optional<int> detect_tx(const IdModel& model, const fusion::FusedImage& fused,
                             std::vector<Proposal>& proposals, const IdConfig& cfg);

struct IdFrame {
  fusion::FusedImage fused;
  std::vector<Proposal> proposals;
  std::vector<int> track_ids;  // identity per proposal, from the tracker
};

// Per frame the detector picks a proposal; the modal track identity wins,
// ties broken by higher mean score. nullopt when no frame detects anything.
std::optional<int> identify_multiframe(const IdModel& model, std::vector<IdFrame>& frames,
                                       const IdConfig& cfg);
using DetectorFn = std::function<std::optional<int>(IdFrame&)>;
std::optional<int> identify_multiframe_with(const DetectorFn& detector,
                                            std::vector<IdFrame>& frames);

// Fraction of aligned entries with IoU >= z; missing predictions count as
// failures. Throws on empty input.
double id_accuracy(const std::vector<std::optional<BBox>>& preds, const std::vector<BBox>& gts,
                   double z);

struct IdSample {
  std::vector<std::uint8_t> crop;  // 3 * crop_px^2, channel-major
  std::uint8_t label = 0;
};

struct IdTrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> val_accuracy;
  std::size_t parameters = 0;
};

// Binary cross-entropy over proposal crops; needs both classes present.
IdTrainHistory train_id(IdModel& model, const std::vector<IdSample>& train_set,
                        const std::vector<IdSample>& val_set, const IdConfig& cfg);

}  // namespace beamsight::identify
