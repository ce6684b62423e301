#pragma once

// Minimal CHW tensor and layer kernels with explicit backward passes.
// Layers hold parameters only; activations needed for backward are kept by the
// caller, so one layer object can serve several forward passes (weight sharing).

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coview/error.hpp"

namespace coview::nn {

struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, float fill = 0.0f)
      : c(channels), h(height), w(width), v(size_t(channels) * height * width, fill) {}

  size_t size() const { return v.size(); }
  size_t plane() const { return size_t(h) * w; }
  bool empty() const { return v.empty(); }
  float& at(int ch, int y, int x) { return v[ch * plane() + size_t(y) * w + x]; }
  float at(int ch, int y, int x) const { return v[ch * plane() + size_t(y) * w + x]; }
  float* channel(int ch) { return v.data() + ch * plane(); }
  const float* channel(int ch) const { return v.data() + ch * plane(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const;

  void add(const Tensor& o);
  void scale(float s);
};

// A named trainable array. Gradients accumulate until zero_grad().
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<float> value;
  std::vector<float> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  size_t size() const { return value.size(); }
  void zero_grad();
};

using ParamList = std::vector<Param*>;

void zero_grad(const ParamList& params);
// Order-dependent FNV-1a over names, shapes and raw float bits.
uint64_t checksum(const ParamList& params);
size_t parameter_count(const ParamList& params);

// 2-D convolution, square kernel, weight layout [out][in][k][k].
struct Conv2d {
  int in = 0, out = 0, k = 3, stride = 1, pad = 1;
  Param weight, bias;

  Conv2d() = default;
  Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride_ = 1,
         int pad_ = -1);
  void init_he(std::mt19937_64& rng, float gain = 1.0f);
  void collect(ParamList& out) { out.push_back(&weight); out.push_back(&bias); }

  Tensor forward(const Tensor& x) const;
  // Accumulates parameter gradients; returns dL/dx when need_input_grad.
  Tensor backward(const Tensor& x, const Tensor& grad_y, bool need_input_grad);
};

// Transposed convolution, weight layout [in][out][k][k].
struct ConvTranspose2d {
  int in = 0, out = 0, k = 4, stride = 2, pad = 1;
  bool trainable = true;
  Param weight, bias;

  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride_,
                  int pad_);
  // Channel-diagonal bilinear interpolation kernel.
  void init_bilinear();
  void collect(ParamList& out) {
    if (trainable) { out.push_back(&weight); out.push_back(&bias); }
  }

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& grad_y, bool need_input_grad);
};

void relu_inplace(Tensor& x);
// grad_y masked by y > 0, in place.
void relu_backward_inplace(const Tensor& y, Tensor& grad);

Tensor maxpool2(const Tensor& x, std::vector<int32_t>& argmax);
Tensor maxpool2_backward(const Tensor& grad_y, const std::vector<int32_t>& argmax,
                         int in_h, int in_w);

Tensor avgpool(const Tensor& x, int factor);
Tensor avgpool_backward(const Tensor& grad_y, int factor);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& grad, int first_channels, Tensor& grad_a, Tensor& grad_b);

// Softmax over channels at each pixel.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_backward(const Tensor& probs, const Tensor& grad_probs);

void im2col(const float* x, int c, int h, int w, int k, int stride, int pad, int out_h,
            int out_w, float* col);
void col2im(const float* col, int c, int h, int w, int k, int stride, int pad, int out_h,
            int out_w, float* x);

}  // namespace coview::nn
