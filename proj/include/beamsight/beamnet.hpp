#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "beamsight/net.hpp"

namespace beamsight::beamnet {

constexpr int kBeams = 64;
constexpr int kInputHw = 64;
constexpr double kMaskValue = -1e9;

// Dual-pathway predictor: three conv blocks (16/32/64, each conv-bn-relu-pool)
// over the resized isolated-TX image, a two-layer path over the search bits,
// concatenation, then fc 128 -> fc 64 -> 64-way logits. The search pathway
// and mask can be disabled for the reduced variant.
struct BeamNetParams {
  bool use_search_path = true;
  net::Conv3x3 c1, c2, c3;
  net::BatchNorm bn1, bn2, bn3;
  net::Fc s1, s2;       // search bits 64 -> 32 -> 32
  net::Fc h1, h2, out;  // head (4096[+32]) -> 128 -> 64 -> 64
};

struct TrainConfig {
  double lr = 0.001;
  double lr_after_decay = 0.0001;
  double decay_trigger_val_acc = 0.59;
  int epochs = 30;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

struct Sample {
  std::vector<std::uint8_t> image;       // 3*64*64, channel-major
  std::array<std::uint8_t, kBeams> bits{};
  std::uint8_t label = 0;
};

struct Prediction {
  std::vector<double> masked_logits;
  std::vector<int> top;  // descending masked logit, ties by lower index
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;
  double val_top1 = 0;
  double lr = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  long calibration_misses = 0;  // samples whose label fell outside the bits
};

BeamNetParams init_beamnet(std::uint64_t seed, bool use_search_path = true);

std::size_t param_count(const BeamNetParams& params);

// Trainable parameters (conv/fc weights and biases, bn scale/shift).
std::vector<TensorRef> trainable_tensors(BeamNetParams& params);
// Trainable plus batch-norm running statistics; persistence registry.
std::vector<TensorRef> all_tensors(BeamNetParams& params);

struct Batch {
  net::Mat images;  // (3, batch*64*64), values already scaled to [0,1]
  net::Mat bits;    // (kBeams, batch)
  std::vector<int> labels;
  std::vector<std::uint8_t> masked;  // per-sample: train with mask?
  int size() const { return static_cast<int>(labels.size()); }
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices);

// Eval-mode forward (running BN statistics); deterministic.
net::Mat forward_eval(const BeamNetParams& params, const Batch& batch);

// Logits with kMaskValue written over false bits; throws on all-false bits.
net::Vec mask_logits(const net::Vec& logits, const std::array<std::uint8_t, kBeams>& bits);

// Cross-entropy of the true beam on masked logits.
double ce_loss(const net::Vec& masked_logits, int true_beam);

// Train-mode forward + mean loss over the batch (the finite-difference
// reference path for gradient checks).
double batch_loss(BeamNetParams& params, const Batch& batch);

// Train-mode forward/backward; returns mean loss and fills gradients
// (same-shaped parameter mirror).
double batch_backward(BeamNetParams& params, const Batch& batch, BeamNetParams& grads);

TrainHistory train(BeamNetParams& params, const std::vector<Sample>& train_set,
                   const std::vector<Sample>& val_set, const TrainConfig& cfg);

Prediction predict_top_n(const BeamNetParams& params, const Sample& sample, int n);

// Fraction of aligned entries whose oracle best beam appears in the
// prediction's first n entries.
double top_n_accuracy(const std::vector<Prediction>& predictions,
                      const std::vector<int>& oracle_best, int n);

void save_params(const BeamNetParams& params, const std::string& path);
BeamNetParams load_params(const std::string& path, bool use_search_path = true);

void save_history_csv(const TrainHistory& history, const std::string& path);

}  // namespace beamsight::beamnet
