#include "beamsight/net.hpp"

#include <cmath>
#include <stdexcept>

namespace beamsight::net {

Conv3x3 make_conv(int in_c, int out_c, Rng& rng) {
  Conv3x3 conv;
  conv.in_c = in_c;
  conv.out_c = out_c;
  conv.w.resize(out_c, in_c * 9);
  const double std = std::sqrt(2.0 / (in_c * 9));
  for (int j = 0; j < conv.w.cols(); ++j)
    for (int i = 0; i < conv.w.rows(); ++i) conv.w(i, j) = rng.gaussian() * std;
  conv.b = Vec::Zero(out_c);
  return conv;
}

BatchNorm make_bn(int channels) {
  BatchNorm bn;
  bn.gamma = Vec::Ones(channels);
  bn.beta = Vec::Zero(channels);
  bn.run_mean = Vec::Zero(channels);
  bn.run_var = Vec::Ones(channels);
  return bn;
}

Fc make_fc(int in, int out, Rng& rng) {
  Fc fc;
  fc.w.resize(out, in);
  const double std = std::sqrt(2.0 / in);
  for (int j = 0; j < in; ++j)
    for (int i = 0; i < out; ++i) fc.w(i, j) = rng.gaussian() * std;
  fc.b = Vec::Zero(out);
  return fc;
}

void im2col(const Mat& x, int h, int w, int batch, Mat& cols) {
  const int c = static_cast<int>(x.rows());
  const int hw = h * w;
  cols.setZero(c * 9, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * hw;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx) {
        const int tap = (ky + 1) * 3 + (kx + 1);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -kx);
          const int x1 = std::min(w, w - kx);
          if (x0 >= x1) continue;
          // Contiguous run of source pixels on this row.
          cols.block(static_cast<Eigen::Index>(tap) * c, base + y * w + x0, c, x1 - x0) =
              x.block(0, base + sy * w + x0 + kx, c, x1 - x0);
        }
      }
    }
  }
}

void col2im(const Mat& cols, int h, int w, int batch, Mat& dx) {
  const int c = static_cast<int>(cols.rows()) / 9;
  const int hw = h * w;
  dx.setZero(c, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index base = static_cast<Eigen::Index>(b) * hw;
    for (int ky = -1; ky <= 1; ++ky) {
      for (int kx = -1; kx <= 1; ++kx) {
        const int tap = (ky + 1) * 3 + (kx + 1);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -kx);
          const int x1 = std::min(w, w - kx);
          if (x0 >= x1) continue;
          dx.block(0, base + sy * w + x0 + kx, c, x1 - x0) +=
              cols.block(static_cast<Eigen::Index>(tap) * c, base + y * w + x0, c, x1 - x0);
        }
      }
    }
  }
}

void conv_forward(const Conv3x3& conv, const Mat& x, int h, int w, int batch, Mat& cols_cache,
                  Mat& y) {
  im2col(x, h, w, batch, cols_cache);
  y.noalias() = conv.w * cols_cache;
  y.colwise() += conv.b;
}

void conv_backward(const Conv3x3& conv, const Mat& cols_cache, const Mat& dy, int h, int w,
                   int batch, Conv3x3& grad, Mat& dx) {
  grad.w.noalias() = dy * cols_cache.transpose();
  grad.b = dy.rowwise().sum();
  Mat dcols;
  dcols.noalias() = conv.w.transpose() * dy;
  col2im(dcols, h, w, batch, dx);
}

void bn_forward(BatchNorm& bn, const Mat& x, Mat& y, BnCache* cache, bool train) {
  const int c = static_cast<int>(x.rows());
  const auto n = static_cast<double>(x.cols());
  Vec mean(c), var(c);
  if (train) {
    mean = x.rowwise().mean();
    for (int i = 0; i < c; ++i) {
      const auto centered = x.row(i).array() - mean(i);
      var(i) = centered.square().sum() / n;
    }
    bn.run_mean = (1.0 - bn.momentum) * bn.run_mean + bn.momentum * mean;
    bn.run_var = (1.0 - bn.momentum) * bn.run_var + bn.momentum * var;
  } else {
    mean = bn.run_mean;
    var = bn.run_var;
  }
  y.resize(x.rows(), x.cols());
  Vec inv_std(c);
  for (int i = 0; i < c; ++i) inv_std(i) = 1.0 / std::sqrt(var(i) + bn.eps);
  for (int i = 0; i < c; ++i)
    y.row(i) = ((x.row(i).array() - mean(i)) * inv_std(i) * bn.gamma(i) + bn.beta(i)).matrix();
  if (cache) {
    cache->mean = mean;
    cache->inv_std = inv_std;
    cache->xhat.resize(x.rows(), x.cols());
    for (int i = 0; i < c; ++i)
      cache->xhat.row(i) = ((x.row(i).array() - mean(i)) * inv_std(i)).matrix();
  }
}

void bn_backward(const BatchNorm& bn, const BnCache& cache, const Mat& dy, BatchNorm& grad,
                 Mat& dx) {
  const int c = static_cast<int>(dy.rows());
  const auto n = static_cast<double>(dy.cols());
  grad.gamma.resize(c);
  grad.beta.resize(c);
  dx.resize(dy.rows(), dy.cols());
  for (int i = 0; i < c; ++i) {
    const auto dyi = dy.row(i).array();
    const auto xhat = cache.xhat.row(i).array();
    grad.gamma(i) = (dyi * xhat).sum();
    grad.beta(i) = dyi.sum();
    // dX = gamma*inv_std * (dY - mean(dY) - xhat*mean(dY*xhat))
    const double m_dy = dyi.sum() / n;
    const double m_dyx = grad.gamma(i) / n;
    dx.row(i) =
        ((dyi - m_dy - xhat * m_dyx) * (bn.gamma(i) * cache.inv_std(i))).matrix();
  }
}

void relu_forward(const Mat& x, Mat& y) { y = x.cwiseMax(0.0); }

void relu_backward(const Mat& x, const Mat& dy, Mat& dx) {
  dx = (x.array() > 0.0).select(dy, 0.0);
}

void pool_forward(const Mat& x, int h, int w, int batch, Mat& y,
                  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& argmax) {
  const int c = static_cast<int>(x.rows());
  const int oh = h / 2, ow = w / 2;
  const int hw = h * w, ohw = oh * ow;
  y.resize(c, static_cast<Eigen::Index>(batch) * ohw);
  argmax.resize(c, static_cast<Eigen::Index>(batch) * ohw);
  for (int b = 0; b < batch; ++b) {
    const Eigen::Index ibase = static_cast<Eigen::Index>(b) * hw;
    const Eigen::Index obase = static_cast<Eigen::Index>(b) * ohw;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index out_col = obase + oy * ow + ox;
        const Eigen::Index c00 = ibase + (2 * oy) * w + 2 * ox;
        const Eigen::Index c01 = c00 + 1;
        const Eigen::Index c10 = c00 + w;
        const Eigen::Index c11 = c10 + 1;
        for (int i = 0; i < c; ++i) {
          Eigen::Index best = c00;
          double bv = x(i, c00);
          if (x(i, c01) > bv) { bv = x(i, c01); best = c01; }
          if (x(i, c10) > bv) { bv = x(i, c10); best = c10; }
          if (x(i, c11) > bv) { bv = x(i, c11); best = c11; }
          y(i, out_col) = bv;
          argmax(i, out_col) = static_cast<int>(best);
        }
      }
    }
  }
}

void pool_backward(const Mat& dy, const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& argmax,
                   int h, int w, int batch, Mat& dx) {
  const int c = static_cast<int>(dy.rows());
  dx.setZero(c, static_cast<Eigen::Index>(batch) * h * w);
  for (Eigen::Index col = 0; col < dy.cols(); ++col)
    for (int i = 0; i < c; ++i) dx(i, argmax(i, col)) += dy(i, col);
}

void flatten(const Mat& x, int h, int w, int batch, Mat& y) {
  const int c = static_cast<int>(x.rows());
  const int hw = h * w;
  y.resize(static_cast<Eigen::Index>(c) * hw, batch);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < c; ++i)
      for (int p = 0; p < hw; ++p)
        y(static_cast<Eigen::Index>(i) * hw + p, b) = x(i, static_cast<Eigen::Index>(b) * hw + p);
}

void unflatten(const Mat& dy, int c, int h, int w, int batch, Mat& dx) {
  const int hw = h * w;
  dx.resize(c, static_cast<Eigen::Index>(batch) * hw);
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < c; ++i)
      for (int p = 0; p < hw; ++p)
        dx(i, static_cast<Eigen::Index>(b) * hw + p) = dy(static_cast<Eigen::Index>(i) * hw + p, b);
}

void fc_forward(const Fc& fc, const Mat& x, Mat& y) {
  y.noalias() = fc.w * x;
  y.colwise() += fc.b;
}

void fc_backward(const Fc& fc, const Mat& x, const Mat& dy, Fc& grad, Mat& dx) {
  grad.w.noalias() = dy * x.transpose();
  grad.b = dy.rowwise().sum();
  dx.noalias() = fc.w.transpose() * dy;
}

AdamState make_adam_state(const std::vector<TensorRef>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.push_back(Vec::Zero(static_cast<Eigen::Index>(p.size())));
    state.v.push_back(Vec::Zero(static_cast<Eigen::Index>(p.size())));
  }
  return state;
}

void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: registry size mismatch");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i].size();
    double* p = params[i].data;
    const double* g = grads[i].data;
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double bce_with_logit(double logit, double target) {
  // max(z,0) - z*y + log(1 + exp(-|z|))
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

}  // namespace beamsight::net
