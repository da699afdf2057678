#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "beamsight/rng.hpp"
#include "beamsight/serialize.hpp"

// Minimal dense/conv layer kit with manual backprop, double precision
// throughout. Activations are (channels, batch*h*w) matrices with column
// index b*(h*w) + y*w + x; GEMMs carry the heavy lifting.
namespace beamsight::net {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

struct Conv3x3 {
  int in_c = 0;
  int out_c = 0;
  Mat w;  // (out_c, in_c*9)
  Vec b;  // (out_c)
};

struct BatchNorm {
  Vec gamma, beta, run_mean, run_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

struct Fc {
  Mat w;  // (out, in)
  Vec b;
};

Conv3x3 make_conv(int in_c, int out_c, Rng& rng);
BatchNorm make_bn(int channels);
Fc make_fc(int in, int out, Rng& rng);

// 3x3, stride 1, zero pad 1.
void im2col(const Mat& x, int h, int w, int batch, Mat& cols);
void col2im(const Mat& cols, int h, int w, int batch, Mat& dx);

void conv_forward(const Conv3x3& conv, const Mat& x, int h, int w, int batch, Mat& cols_cache,
                  Mat& y);
void conv_backward(const Conv3x3& conv, const Mat& cols_cache, const Mat& dy, int h, int w,
                   int batch, Conv3x3& grad, Mat& dx);

struct BnCache {
  Vec mean, inv_std;
  Mat xhat;
};

void bn_forward(BatchNorm& bn, const Mat& x, Mat& y, BnCache* cache, bool train);
void bn_backward(const BatchNorm& bn, const BnCache& cache, const Mat& dy, BatchNorm& grad,
                 Mat& dx);

void relu_forward(const Mat& x, Mat& y);
void relu_backward(const Mat& x, const Mat& dy, Mat& dx);

// 2x2 max pool, stride 2; argmax stores the input column per output entry.
void pool_forward(const Mat& x, int h, int w, int batch, Mat& y,
                  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& argmax);
void pool_backward(const Mat& dy, const Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>& argmax,
                   int h, int w, int batch, Mat& dx);

// (c, batch*h*w) -> (c*h*w, batch), feature index c*(h*w) + y*w + x.
void flatten(const Mat& x, int h, int w, int batch, Mat& y);
void unflatten(const Mat& dy, int c, int h, int w, int batch, Mat& dx);

void fc_forward(const Fc& fc, const Mat& x, Mat& y);
void fc_backward(const Fc& fc, const Mat& x, const Mat& dy, Fc& grad, Mat& dx);

// Adam with bias correction; slots follow the tensor registry order.
struct AdamState {
  std::vector<Vec> m, v;
  long t = 0;
};

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const std::vector<TensorRef>& params);
void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads,
               AdamState& state, const AdamHyper& hyper);

double sigmoid(double z);
// Numerically stable binary cross-entropy on a logit.
double bce_with_logit(double logit, double target);

}  // namespace beamsight::net
