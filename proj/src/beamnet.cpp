#include "beamsight/beamnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace beamsight::beamnet {

using net::Mat;
using net::Vec;

namespace {

constexpr int kC1 = 16, kC2 = 32, kC3 = 64;
constexpr int kSearchHidden = 32;
constexpr int kHead1 = 128, kHead2 = 64;
constexpr int kFlat = kC3 * 8 * 8;  // 4096 after three pools

struct ForwardCache {
  Mat x0, cols1, z1, bn1_out, r1, p1;
  Mat cols2, z2, bn2_out, r2, p2;
  Mat cols3, z3, bn3_out, r3, p3;
  net::BnCache bc1, bc2, bc3;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> am1, am2, am3;
  Mat flat;
  Mat s_in, s1_out, s1_relu, s2_out, s2_relu;
  Mat head_in, h1_out, h1_relu, h2_out, h2_relu, logits;
};

// Shared train/eval forward; caches are only needed for backward.
Mat forward_impl(BeamNetParams& params, const Batch& batch, bool train, ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  const int b = batch.size();

  conv_forward(params.c1, batch.images, kInputHw, kInputHw, b, c.cols1, c.z1);
  bn_forward(params.bn1, c.z1, c.bn1_out, train ? &c.bc1 : nullptr, train);
  relu_forward(c.bn1_out, c.r1);
  pool_forward(c.r1, kInputHw, kInputHw, b, c.p1, c.am1);

  conv_forward(params.c2, c.p1, 32, 32, b, c.cols2, c.z2);
  bn_forward(params.bn2, c.z2, c.bn2_out, train ? &c.bc2 : nullptr, train);
  relu_forward(c.bn2_out, c.r2);
  pool_forward(c.r2, 32, 32, b, c.p2, c.am2);

  conv_forward(params.c3, c.p2, 16, 16, b, c.cols3, c.z3);
  bn_forward(params.bn3, c.z3, c.bn3_out, train ? &c.bc3 : nullptr, train);
  relu_forward(c.bn3_out, c.r3);
  pool_forward(c.r3, 16, 16, b, c.p3, c.am3);

  flatten(c.p3, 8, 8, b, c.flat);

  if (params.use_search_path) {
    c.s_in = batch.bits;
    fc_forward(params.s1, c.s_in, c.s1_out);
    relu_forward(c.s1_out, c.s1_relu);
    fc_forward(params.s2, c.s1_relu, c.s2_out);
    relu_forward(c.s2_out, c.s2_relu);
    c.head_in.resize(kFlat + kSearchHidden, b);
    c.head_in.topRows(kFlat) = c.flat;
    c.head_in.bottomRows(kSearchHidden) = c.s2_relu;
  } else {
    c.head_in = c.flat;
  }

  fc_forward(params.h1, c.head_in, c.h1_out);
  relu_forward(c.h1_out, c.h1_relu);
  fc_forward(params.h2, c.h1_relu, c.h2_out);
  relu_forward(c.h2_out, c.h2_relu);
  fc_forward(params.out, c.h2_relu, c.logits);
  for (Eigen::Index i = 0; i < c.logits.size(); ++i) {
    if (!std::isfinite(c.logits.data()[i]))
      throw std::runtime_error("beamnet forward: non-finite logits at the output layer");
  }
  return c.logits;
}

// Masked softmax cross-entropy over logit columns; writes dlogits when
// grad != nullptr. Masking multiplies nothing through: suppressed entries
// carry exactly zero probability and zero gradient.
double loss_impl(const Mat& logits, const Batch& batch, Mat* dlogits) {
  const int b = batch.size();
  double total = 0;
  if (dlogits) dlogits->setZero(kBeams, b);
  for (int col = 0; col < b; ++col) {
    Vec masked = logits.col(col);
    if (batch.masked[col]) {
      for (int q = 0; q < kBeams; ++q)
        if (batch.bits(q, col) == 0.0) masked(q) = kMaskValue;
    }
    const double mx = masked.maxCoeff();
    Vec ex = (masked.array() - mx).exp();
    const double denom = ex.sum();
    const int label = batch.labels[col];
    total += -(masked(label) - mx - std::log(denom));
    if (dlogits) {
      dlogits->col(col) = ex / denom;
      (*dlogits)(label, col) -= 1.0;
      dlogits->col(col) /= static_cast<double>(b);
    }
  }
  return total / static_cast<double>(b);
}

void backward_impl(BeamNetParams& params, const Batch& batch, const ForwardCache& c,
                   const Mat& dlogits, BeamNetParams& grads) {
  const int b = batch.size();
  Mat d_h2relu, d_h2out, d_h1relu, d_h1out, d_head_in;
  fc_backward(params.out, c.h2_relu, dlogits, grads.out, d_h2relu);
  relu_backward(c.h2_out, d_h2relu, d_h2out);
  fc_backward(params.h2, c.h1_relu, d_h2out, grads.h2, d_h1relu);
  relu_backward(c.h1_out, d_h1relu, d_h1out);
  fc_backward(params.h1, c.head_in, d_h1out, grads.h1, d_head_in);

  Mat d_flat;
  if (params.use_search_path) {
    d_flat = d_head_in.topRows(kFlat);
    Mat d_s2relu = d_head_in.bottomRows(kSearchHidden);
    Mat d_s2out, d_s1relu, d_s1out, d_sin;
    relu_backward(c.s2_out, d_s2relu, d_s2out);
    fc_backward(params.s2, c.s1_relu, d_s2out, grads.s2, d_s1relu);
    relu_backward(c.s1_out, d_s1relu, d_s1out);
    fc_backward(params.s1, c.s_in, d_s1out, grads.s1, d_sin);
  } else {
    d_flat = d_head_in;
  }

  Mat d_p3, d_r3, d_bn3, d_z3, d_p2;
  unflatten(d_flat, kC3, 8, 8, b, d_p3);
  pool_backward(d_p3, c.am3, 16, 16, b, d_r3);
  relu_backward(c.bn3_out, d_r3, d_bn3);
  bn_backward(params.bn3, c.bc3, d_bn3, grads.bn3, d_z3);
  conv_backward(params.c3, c.cols3, d_z3, 16, 16, b, grads.c3, d_p2);

  Mat d_r2, d_bn2, d_z2, d_p1;
  pool_backward(d_p2, c.am2, 32, 32, b, d_r2);
  relu_backward(c.bn2_out, d_r2, d_bn2);
  bn_backward(params.bn2, c.bc2, d_bn2, grads.bn2, d_z2);
  conv_backward(params.c2, c.cols2, d_z2, 32, 32, b, grads.c2, d_p1);

  Mat d_r1, d_bn1, d_z1, d_x0;
  pool_backward(d_p1, c.am1, kInputHw, kInputHw, b, d_r1);
  relu_backward(c.bn1_out, d_r1, d_bn1);
  bn_backward(params.bn1, c.bc1, d_bn1, grads.bn1, d_z1);
  conv_backward(params.c1, c.cols1, d_z1, kInputHw, kInputHw, b, grads.c1, d_x0);
}

}  // namespace

BeamNetParams init_beamnet(std::uint64_t seed, bool use_search_path) {
  Rng rng(hash_mix(seed, 0xbea11e7));
  BeamNetParams p;
  p.use_search_path = use_search_path;
  p.c1 = net::make_conv(3, kC1, rng);
  p.c2 = net::make_conv(kC1, kC2, rng);
  p.c3 = net::make_conv(kC2, kC3, rng);
  p.bn1 = net::make_bn(kC1);
  p.bn2 = net::make_bn(kC2);
  p.bn3 = net::make_bn(kC3);
  p.s1 = net::make_fc(kBeams, kSearchHidden, rng);
  p.s2 = net::make_fc(kSearchHidden, kSearchHidden, rng);
  const int head_in = use_search_path ? kFlat + kSearchHidden : kFlat;
  p.h1 = net::make_fc(head_in, kHead1, rng);
  p.h2 = net::make_fc(kHead1, kHead2, rng);
  p.out = net::make_fc(kHead2, kBeams, rng);
  return p;
}

std::size_t param_count(const BeamNetParams& params) {
  std::size_t n = 0;
  for (const auto& t : trainable_tensors(const_cast<BeamNetParams&>(params))) n += t.size();
  return n;
}

namespace {

TensorRef ref(const char* name, Mat& m) {
  return {name, m.data(),
          {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}};
}
TensorRef ref(const char* name, Vec& v) {
  return {name, v.data(), {static_cast<std::uint32_t>(v.size())}};
}

}  // namespace

std::vector<TensorRef> trainable_tensors(BeamNetParams& p) {
  std::vector<TensorRef> t = {
      ref("conv1.w", p.c1.w),   ref("conv1.b", p.c1.b),     ref("bn1.gamma", p.bn1.gamma),
      ref("bn1.beta", p.bn1.beta), ref("conv2.w", p.c2.w),  ref("conv2.b", p.c2.b),
      ref("bn2.gamma", p.bn2.gamma), ref("bn2.beta", p.bn2.beta), ref("conv3.w", p.c3.w),
      ref("conv3.b", p.c3.b),   ref("bn3.gamma", p.bn3.gamma), ref("bn3.beta", p.bn3.beta),
  };
  if (p.use_search_path) {
    t.push_back(ref("search1.w", p.s1.w));
    t.push_back(ref("search1.b", p.s1.b));
    t.push_back(ref("search2.w", p.s2.w));
    t.push_back(ref("search2.b", p.s2.b));
  }
  t.push_back(ref("head1.w", p.h1.w));
  t.push_back(ref("head1.b", p.h1.b));
  t.push_back(ref("head2.w", p.h2.w));
  t.push_back(ref("head2.b", p.h2.b));
  t.push_back(ref("out.w", p.out.w));
  t.push_back(ref("out.b", p.out.b));
  return t;
}

std::vector<TensorRef> all_tensors(BeamNetParams& p) {
  auto t = trainable_tensors(p);
  t.push_back(ref("bn1.run_mean", p.bn1.run_mean));
  t.push_back(ref("bn1.run_var", p.bn1.run_var));
  t.push_back(ref("bn2.run_mean", p.bn2.run_mean));
  t.push_back(ref("bn2.run_var", p.bn2.run_var));
  t.push_back(ref("bn3.run_mean", p.bn3.run_mean));
  t.push_back(ref("bn3.run_var", p.bn3.run_var));
  return t;
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<int>& indices) {
  Batch batch;
  const int b = static_cast<int>(indices.size());
  const int hw = kInputHw * kInputHw;
  batch.images.resize(3, static_cast<Eigen::Index>(b) * hw);
  batch.bits.resize(kBeams, b);
  batch.labels.resize(b);
  batch.masked.resize(b);
  for (int i = 0; i < b; ++i) {
    const Sample& s = samples[indices[i]];
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < hw; ++p)
        batch.images(ch, static_cast<Eigen::Index>(i) * hw + p) =
            s.image[static_cast<std::size_t>(ch) * hw + p] / 255.0;
    for (int q = 0; q < kBeams; ++q) batch.bits(q, i) = s.bits[q] ? 1.0 : 0.0;
    batch.labels[i] = s.label;
    // Labels outside the reduced set train unmasked.
    batch.masked[i] = s.bits[s.label] ? 1 : 0;
  }
  return batch;
}

net::Mat forward_eval(const BeamNetParams& params, const Batch& batch) {
  return forward_impl(const_cast<BeamNetParams&>(params), batch, false, nullptr);
}

Vec mask_logits(const Vec& logits, const std::array<std::uint8_t, kBeams>& bits) {
  bool any = false;
  for (auto b : bits) any = any || b;
  if (!any) throw std::invalid_argument("mask_logits: empty search space");
  Vec masked = logits;
  for (int q = 0; q < kBeams; ++q)
    if (!bits[q]) masked(q) = kMaskValue;
  return masked;
}

double ce_loss(const Vec& masked_logits, int true_beam) {
  const double mx = masked_logits.maxCoeff();
  const double denom = (masked_logits.array() - mx).exp().sum();
  return -(masked_logits(true_beam) - mx - std::log(denom));
}

double batch_loss(BeamNetParams& params, const Batch& batch) {
  ForwardCache cache;
  const Mat logits = forward_impl(params, batch, true, &cache);
  return loss_impl(logits, batch, nullptr);
}

double batch_backward(BeamNetParams& params, const Batch& batch, BeamNetParams& grads) {
  ForwardCache cache;
  const Mat logits = forward_impl(params, batch, true, &cache);
  Mat dlogits;
  const double loss = loss_impl(logits, batch, &dlogits);
  backward_impl(params, batch, cache, dlogits, grads);
  return loss;
}

namespace {

double val_top1(BeamNetParams& params, const std::vector<Sample>& val_set, int batch_size) {
  if (val_set.empty()) return 0;
  long hits = 0;
  std::vector<int> idx(val_set.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    const std::vector<int> chunk(idx.begin() + start, idx.begin() + end);
    const Batch batch = make_batch(val_set, chunk);
    const Mat logits = forward_eval(params, batch);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const Sample& s = val_set[chunk[i]];
      Vec col = logits.col(static_cast<Eigen::Index>(i));
      if (params.use_search_path) col = mask_logits(col, s.bits);
      int best = 0;
      for (int q = 1; q < kBeams; ++q)
        if (col(q) > col(best)) best = q;
      if (best == s.label) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(val_set.size());
}

}  // namespace

TrainHistory train(BeamNetParams& params, const std::vector<Sample>& train_set,
                   const std::vector<Sample>& val_set, const TrainConfig& cfg) {
  if (train_set.empty()) throw std::invalid_argument("beamnet train: empty dataset");
  TrainHistory history;
  for (const auto& s : train_set)
    if (!s.bits[s.label]) ++history.calibration_misses;

  BeamNetParams grads = params;  // shape mirror; values overwritten per batch
  auto param_refs = trainable_tensors(params);
  auto grad_refs = trainable_tensors(grads);
  net::AdamState adam = net::make_adam_state(param_refs);
  net::AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
  bool decayed = false;

  Rng shuffle_rng(hash_mix(cfg.seed, 0x5bf1e));
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::vector<int> chunk(order.begin() + start, order.begin() + end);
      const Batch batch = make_batch(train_set, chunk);
      loss_sum += batch_backward(params, batch, grads);
      ++batches;
      net::adam_step(param_refs, grad_refs, adam, hyper);
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.train_loss = loss_sum / std::max<long>(1, batches);
    stats.val_top1 = val_top1(params, val_set, cfg.batch_size);
    stats.lr = hyper.lr;
    history.epochs.push_back(stats);
    if (!decayed && stats.val_top1 >= cfg.decay_trigger_val_acc) {
      hyper.lr = cfg.lr_after_decay;
      decayed = true;
    }
  }
  return history;
}

Prediction predict_top_n(const BeamNetParams& params, const Sample& sample, int n) {
  if (n < 1 || n > kBeams) throw std::invalid_argument("predict_top_n: n out of range");
  const Batch batch = make_batch({sample}, {0});
  const Mat logits = forward_eval(params, batch);
  Prediction pred;
  Vec col = logits.col(0);
  std::vector<int> allowed;
  if (params.use_search_path) {
    col = mask_logits(col, sample.bits);
    for (int q = 0; q < kBeams; ++q)
      if (sample.bits[q]) allowed.push_back(q);
  } else {
    allowed.resize(kBeams);
    std::iota(allowed.begin(), allowed.end(), 0);
  }
  pred.masked_logits.assign(col.data(), col.data() + kBeams);
  std::stable_sort(allowed.begin(), allowed.end(),
                   [&](int a, int b) { return col(a) > col(b); });
  const int keep = std::min<int>(n, static_cast<int>(allowed.size()));
  pred.top.assign(allowed.begin(), allowed.begin() + keep);
  return pred;
}

double top_n_accuracy(const std::vector<Prediction>& predictions,
                      const std::vector<int>& oracle_best, int n) {
  if (predictions.empty() || predictions.size() != oracle_best.size())
    throw std::invalid_argument("top_n_accuracy: empty or misaligned inputs");
  long hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& top = predictions[i].top;
    const int limit = std::min<int>(n, static_cast<int>(top.size()));
    for (int j = 0; j < limit; ++j) {
      if (top[j] == oracle_best[i]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

void save_params(const BeamNetParams& params, const std::string& path) {
  save_tensors(path, all_tensors(const_cast<BeamNetParams&>(params)));
}

BeamNetParams load_params(const std::string& path, bool use_search_path) {
  BeamNetParams params = init_beamnet(0, use_search_path);
  load_tensors(path, all_tensors(params));
  return params;
}

void save_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  os << "epoch,train_loss,val_top1,lr\n";
  for (const auto& e : history.epochs)
    os << e.epoch << "," << e.train_loss << "," << e.val_top1 << "," << e.lr << "\n";
}

}  // namespace beamsight::beamnet
