#include "beamsight/identify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace beamsight::identify {

using net::Mat;
using net::Vec;

namespace {

constexpr int kC1 = 8, kC2 = 16, kC3 = 32;
constexpr int kHidden = 32;

TensorRef ref(const char* name, Mat& m) {
  return {name, m.data(),
          {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}};
}
TensorRef ref(const char* name, Vec& v) {
  return {name, v.data(), {static_cast<std::uint32_t>(v.size())}};
}

struct ScoreCache {
  Mat cols1, z1, b1, r1, p1;
  Mat cols2, z2, b2, r2, p2;
  Mat cols3, z3, b3, r3, p3;
  net::BnCache bc1, bc2, bc3;
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> am1, am2, am3;
  Mat flat, f1_out, f1_relu, logit;
};

Mat crops_to_input(const std::vector<std::vector<std::uint8_t>>& crops, int crop_px) {
  const int hw = crop_px * crop_px;
  Mat x(3, static_cast<Eigen::Index>(crops.size()) * hw);
  for (std::size_t i = 0; i < crops.size(); ++i)
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < hw; ++p)
        x(ch, static_cast<Eigen::Index>(i) * hw + p) =
            crops[i][static_cast<std::size_t>(ch) * hw + p] / 255.0;
  return x;
}

Mat forward_impl(IdModel& m, const Mat& x, int batch, bool train, ScoreCache& c) {
  const int hw0 = m.crop_px;
  conv_forward(m.c1, x, hw0, hw0, batch, c.cols1, c.z1);
  bn_forward(m.bn1, c.z1, c.b1, train ? &c.bc1 : nullptr, train);
  relu_forward(c.b1, c.r1);
  pool_forward(c.r1, hw0, hw0, batch, c.p1, c.am1);

  conv_forward(m.c2, c.p1, hw0 / 2, hw0 / 2, batch, c.cols2, c.z2);
  bn_forward(m.bn2, c.z2, c.b2, train ? &c.bc2 : nullptr, train);
  relu_forward(c.b2, c.r2);
  pool_forward(c.r2, hw0 / 2, hw0 / 2, batch, c.p2, c.am2);

  conv_forward(m.c3, c.p2, hw0 / 4, hw0 / 4, batch, c.cols3, c.z3);
  bn_forward(m.bn3, c.z3, c.b3, train ? &c.bc3 : nullptr, train);
  relu_forward(c.b3, c.r3);
  pool_forward(c.r3, hw0 / 4, hw0 / 4, batch, c.p3, c.am3);

  flatten(c.p3, hw0 / 8, hw0 / 8, batch, c.flat);
  fc_forward(m.f1, c.flat, c.f1_out);
  relu_forward(c.f1_out, c.f1_relu);
  fc_forward(m.f2, c.f1_relu, c.logit);
  return c.logit;  // (1, batch)
}

struct IdGrads {
  net::Conv3x3 c1, c2, c3;
  net::BatchNorm bn1, bn2, bn3;
  net::Fc f1, f2;
};

void backward_impl(IdModel& m, const Mat& dlogit, const ScoreCache& c, int batch, IdGrads& g) {
  const int hw0 = m.crop_px;
  Mat d_f1relu, d_f1out, d_flat;
  fc_backward(m.f2, c.f1_relu, dlogit, g.f2, d_f1relu);
  relu_backward(c.f1_out, d_f1relu, d_f1out);
  fc_backward(m.f1, c.flat, d_f1out, g.f1, d_flat);

  Mat d_p3, d_r3, d_b3, d_z3, d_p2;
  unflatten(d_flat, kC3, hw0 / 8, hw0 / 8, batch, d_p3);
  pool_backward(d_p3, c.am3, hw0 / 4, hw0 / 4, batch, d_r3);
  relu_backward(c.b3, d_r3, d_b3);
  bn_backward(m.bn3, c.bc3, d_b3, g.bn3, d_z3);
  conv_backward(m.c3, c.cols3, d_z3, hw0 / 4, hw0 / 4, batch, g.c3, d_p2);

  Mat d_r2, d_b2, d_z2, d_p1;
  pool_backward(d_p2, c.am2, hw0 / 2, hw0 / 2, batch, d_r2);
  relu_backward(c.b2, d_r2, d_b2);
  bn_backward(m.bn2, c.bc2, d_b2, g.bn2, d_z2);
  conv_backward(m.c2, c.cols2, d_z2, hw0 / 2, hw0 / 2, batch, g.c2, d_p1);

  Mat d_r1, d_b1, d_z1, d_x;
  pool_backward(d_p1, c.am1, hw0, hw0, batch, d_r1);
  relu_backward(c.b1, d_r1, d_b1);
  bn_backward(m.bn1, c.bc1, d_b1, g.bn1, d_z1);
  conv_backward(m.c1, c.cols1, d_z1, hw0, hw0, batch, g.c1, d_x);
}

}  // namespace

IdModel init_id_model(std::uint64_t seed, int crop_px) {
  Rng rng(hash_mix(seed, 0x1d5c0));
  IdModel m;
  m.crop_px = crop_px;
  m.c1 = net::make_conv(3, kC1, rng);
  m.c2 = net::make_conv(kC1, kC2, rng);
  m.c3 = net::make_conv(kC2, kC3, rng);
  m.bn1 = net::make_bn(kC1);
  m.bn2 = net::make_bn(kC2);
  m.bn3 = net::make_bn(kC3);
  const int flat = kC3 * (crop_px / 8) * (crop_px / 8);
  m.f1 = net::make_fc(flat, kHidden, rng);
  m.f2 = net::make_fc(kHidden, 1, rng);
  return m;
}

std::size_t param_count(const IdModel& model) {
  std::size_t n = 0;
  for (const auto& t : trainable_tensors(const_cast<IdModel&>(model))) n += t.size();
  return n;
}

std::vector<TensorRef> trainable_tensors(IdModel& m) {
  return {
      ref("conv1.w", m.c1.w),      ref("conv1.b", m.c1.b), ref("bn1.gamma", m.bn1.gamma),
      ref("bn1.beta", m.bn1.beta), ref("conv2.w", m.c2.w), ref("conv2.b", m.c2.b),
      ref("bn2.gamma", m.bn2.gamma), ref("bn2.beta", m.bn2.beta), ref("conv3.w", m.c3.w),
      ref("conv3.b", m.c3.b),      ref("bn3.gamma", m.bn3.gamma), ref("bn3.beta", m.bn3.beta),
      ref("fc1.w", m.f1.w),        ref("fc1.b", m.f1.b),   ref("fc2.w", m.f2.w),
      ref("fc2.b", m.f2.b),
  };
}

std::vector<TensorRef> all_tensors(IdModel& m) {
  auto t = trainable_tensors(m);
  t.push_back(ref("bn1.run_mean", m.bn1.run_mean));
  t.push_back(ref("bn1.run_var", m.bn1.run_var));
  t.push_back(ref("bn2.run_mean", m.bn2.run_mean));
  t.push_back(ref("bn2.run_var", m.bn2.run_var));
  t.push_back(ref("bn3.run_mean", m.bn3.run_mean));
  t.push_back(ref("bn3.run_var", m.bn3.run_var));
  return t;
}

void save_id_model(const IdModel& model, const std::string& path) {
  save_tensors(path, all_tensors(const_cast<IdModel&>(model)));
}

IdModel load_id_model(const std::string& path) {
  IdModel model = init_id_model(0);
  load_tensors(path, all_tensors(model));
  return model;
}

std::vector<Proposal> propose(const fusion::FusedImage& fused, const IdConfig& cfg) {
  std::vector<Proposal> proposals;
  const int w = fused.plane1.w, h = fused.plane1.h;
  const auto thresh = static_cast<std::uint8_t>(std::lround(cfg.propose_threshold * 255.0));

  if (fused.mode == scene::PreprocessMode::method2) {
    // Column bands of the power plane (row 0 carries the column value).
    int start = -1;
    for (int x = 0; x <= w; ++x) {
      const bool on = x < w && fused.plane2.at(x, 0) >= std::max<int>(1, thresh);
      if (on && start < 0) start = x;
      if (!on && start >= 0) {
        const double bw = x - start;
        if (bw * h >= cfg.min_area_px2 && bw >= cfg.min_width_px)
          proposals.push_back({BBox{start + 0.5 * (bw - 1), 0.5 * (h - 1), bw,
                                    static_cast<double>(h)},
                               0.0});
        start = -1;
      }
    }
    return proposals;
  }

  // Connected components (4-neighbourhood) of the visual plane.
  std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<std::pair<int, int>> stack;
  int next = 0;
  for (int y0 = 0; y0 < h; ++y0) {
    for (int x0 = 0; x0 < w; ++x0) {
      const std::size_t idx0 = static_cast<std::size_t>(y0) * w + x0;
      if (fused.plane1.at(x0, y0) < std::max<int>(1, thresh) || label[idx0] >= 0) continue;
      const int id = next++;
      int min_x = x0, max_x = x0, min_y = y0, max_y = y0;
      stack.assign(1, {x0, y0});
      label[idx0] = id;
      while (!stack.empty()) {
        const auto [x, y] = stack.back();
        stack.pop_back();
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
        const int nx[4] = {x - 1, x + 1, x, x};
        const int ny[4] = {y, y, y - 1, y + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
          const std::size_t idx = static_cast<std::size_t>(ny[k]) * w + nx[k];
          if (label[idx] >= 0 || fused.plane1.at(nx[k], ny[k]) < std::max<int>(1, thresh))
            continue;
          label[idx] = id;
          stack.emplace_back(nx[k], ny[k]);
        }
      }
      const double bw = max_x - min_x + 1, bh = max_y - min_y + 1;
      if (bw * bh < cfg.min_area_px2) continue;
      if (bw < cfg.min_width_px) continue;
      if (bh / bw > cfg.max_aspect) continue;
      proposals.push_back({BBox{0.5 * (min_x + max_x), 0.5 * (min_y + max_y), bw, bh}, 0.0});
    }
  }
  return proposals;
}

std::vector<std::uint8_t> crop_fused(const fusion::FusedImage& fused, const BBox& bbox,
                                     const IdConfig& cfg) {
  const int n = cfg.crop_px;
  const int hw = n * n;
  std::vector<std::uint8_t> crop(3 * static_cast<std::size_t>(hw), 0);
  const double mw = bbox.w * (1.0 + 2.0 * cfg.crop_margin);
  const double mh = bbox.h * (1.0 + 2.0 * cfg.crop_margin);
  const ImageU8* planes[3] = {&fused.plane1, &fused.plane2, &fused.plane3};
  for (int y = 0; y < n; ++y) {
    const int sy = static_cast<int>(std::lround(bbox.y - mh / 2 + (y + 0.5) * mh / n - 0.5));
    for (int x = 0; x < n; ++x) {
      const int sx = static_cast<int>(std::lround(bbox.x - mw / 2 + (x + 0.5) * mw / n - 0.5));
      if (sx < 0 || sx >= fused.plane1.w || sy < 0 || sy >= fused.plane1.h) continue;
      for (int ch = 0; ch < 3; ++ch)
        crop[static_cast<std::size_t>(ch) * hw + y * n + x] = planes[ch]->at(sx, sy);
    }
  }
  return crop;
}

double score(const IdModel& model, const std::vector<std::uint8_t>& crop) {
  return score_batch(model, {crop})[0];
}

std::vector<double> score_batch(const IdModel& model,
                                const std::vector<std::vector<std::uint8_t>>& crops) {
  if (crops.empty()) return {};
  auto& m = const_cast<IdModel&>(model);
  ScoreCache cache;
  const Mat x = crops_to_input(crops, model.crop_px);
  const Mat logit = forward_impl(m, x, static_cast<int>(crops.size()), false, cache);
  std::vector<double> out(crops.size());
  for (std::size_t i = 0; i < crops.size(); ++i)
    out[i] = net::sigmoid(logit(0, static_cast<Eigen::Index>(i)));
  return out;
}

std::optional<int> detect_tx(const IdModel& model, const fusion::FusedImage& fused,
                             std::vector<Proposal>& proposals, const IdConfig& cfg) {
  if (proposals.empty()) return std::nullopt;
  std::vector<std::vector<std::uint8_t>> crops;
  crops.reserve(proposals.size());
  for (const auto& p : proposals) crops.push_back(crop_fused(fused, p.bbox, cfg));
  const auto scores = score_batch(model, crops);
  int best = -1;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    proposals[i].score = scores[i];
    if (scores[i] >= cfg.confidence && (best < 0 || scores[i] > scores[best]))
      best = static_cast<int>(i);
  }
  if (best < 0) return std::nullopt;
  return best;
}

std::optional<int> identify_multiframe(const IdModel& model, std::vector<IdFrame>& frames,
                                       const IdConfig& cfg) {
  DetectorFn detector = [&](IdFrame& frame) {
    return detect_tx(model, frame.fused, frame.proposals, cfg);
  };
  return identify_multiframe_with(detector, frames);
}

std::optional<int> identify_multiframe_with(const DetectorFn& detector,
                                            std::vector<IdFrame>& frames) {
  std::map<int, int> votes;
  std::map<int, double> score_sum;
  for (auto& frame : frames) {
    const auto pick = detector(frame);
    if (!pick) continue;
    const int track = frame.track_ids.empty() ? *pick : frame.track_ids[*pick];
    votes[track] += 1;
    score_sum[track] += frame.proposals[*pick].score;
  }
  if (votes.empty()) return std::nullopt;
  int best = -1, best_votes = -1;
  double best_mean = -1;
  for (const auto& [track, count] : votes) {
    const double mean = score_sum[track] / count;
    if (count > best_votes || (count == best_votes && mean > best_mean)) {
      best = track;
      best_votes = count;
      best_mean = mean;
    }
  }
  return best;
}

double id_accuracy(const std::vector<std::optional<BBox>>& preds, const std::vector<BBox>& gts,
                   double z) {
  if (preds.empty() || preds.size() != gts.size())
    throw std::invalid_argument("id_accuracy: empty or misaligned inputs");
  long hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] && iou(*preds[i], gts[i]) >= z) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

IdTrainHistory train_id(IdModel& model, const std::vector<IdSample>& train_set,
                        const std::vector<IdSample>& val_set, const IdConfig& cfg) {
  bool has_pos = false, has_neg = false;
  for (const auto& s : train_set) (s.label ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument("train_id: dataset must contain both classes");

  IdTrainHistory history;
  history.parameters = param_count(model);
  IdGrads grads{model.c1, model.c2, model.c3, model.bn1, model.bn2,
                model.bn3, model.f1, model.f2};
  auto param_refs = trainable_tensors(model);
  std::vector<TensorRef> grad_refs = {
      ref("conv1.w", grads.c1.w), ref("conv1.b", grads.c1.b), ref("bn1.gamma", grads.bn1.gamma),
      ref("bn1.beta", grads.bn1.beta), ref("conv2.w", grads.c2.w), ref("conv2.b", grads.c2.b),
      ref("bn2.gamma", grads.bn2.gamma), ref("bn2.beta", grads.bn2.beta),
      ref("conv3.w", grads.c3.w), ref("conv3.b", grads.c3.b), ref("bn3.gamma", grads.bn3.gamma),
      ref("bn3.beta", grads.bn3.beta), ref("fc1.w", grads.f1.w), ref("fc1.b", grads.f1.b),
      ref("fc2.w", grads.f2.w), ref("fc2.b", grads.f2.b)};
  net::AdamState adam = net::make_adam_state(param_refs);
  net::AdamHyper hyper{cfg.lr, 0.9, 0.999, 1e-8};

  Rng shuffle_rng(hash_mix(cfg.seed, 0x1d5f));
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  const int hw = cfg.crop_px * cfg.crop_px;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0;
    long batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const int b = static_cast<int>(end - start);
      Mat x(3, static_cast<Eigen::Index>(b) * hw);
      Vec targets(b);
      for (int i = 0; i < b; ++i) {
        const IdSample& s = train_set[order[start + i]];
        for (int ch = 0; ch < 3; ++ch)
          for (int p = 0; p < hw; ++p)
            x(ch, static_cast<Eigen::Index>(i) * hw + p) =
                s.crop[static_cast<std::size_t>(ch) * hw + p] / 255.0;
        targets(i) = s.label ? 1.0 : 0.0;
      }
      ScoreCache cache;
      const Mat logit = forward_impl(model, x, b, true, cache);
      double loss = 0;
      Mat dlogit(1, b);
      for (int i = 0; i < b; ++i) {
        loss += net::bce_with_logit(logit(0, i), targets(i));
        dlogit(0, i) = (net::sigmoid(logit(0, i)) - targets(i)) / b;
      }
      loss_sum += loss / b;
      ++batches;
      backward_impl(model, dlogit, cache, b, grads);
      net::adam_step(param_refs, grad_refs, adam, hyper);
    }
    history.epoch_loss.push_back(loss_sum / std::max<long>(1, batches));

    long hits = 0;
    for (std::size_t start = 0; start < val_set.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(val_set.size(), start + cfg.batch_size);
      std::vector<std::vector<std::uint8_t>> crops;
      for (std::size_t i = start; i < end; ++i) crops.push_back(val_set[i].crop);
      const auto scores = score_batch(model, crops);
      for (std::size_t i = start; i < end; ++i)
        if ((scores[i - start] >= 0.5) == (val_set[i].label != 0)) ++hits;
    }
    history.val_accuracy.push_back(
        val_set.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(val_set.size()));
  }
  return history;
}

}  // namespace beamsight::identify
