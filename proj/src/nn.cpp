#include "coview/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace coview::nn {
namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

}  // namespace

std::string Tensor::shape_str() const {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

void Tensor::add(const Tensor& o) {
  require(same_shape(o), ErrorKind::Shape, "tensor add: " + shape_str() + " vs " + o.shape_str());
  for (size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
}

void Tensor::scale(float s) {
  for (auto& x : v) x *= s;
}

Param::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  size_t total = 1;
  for (int d : shape) total *= static_cast<size_t>(d);
  value.assign(total, 0.0f);
  grad.assign(total, 0.0f);
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

void zero_grad(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

uint64_t checksum(const ParamList& params) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto* p : params) {
    mix(p->name.data(), p->name.size());
    mix(p->shape.data(), p->shape.size() * sizeof(int));
    mix(p->value.data(), p->value.size() * sizeof(float));
  }
  return h;
}

size_t parameter_count(const ParamList& params) {
  size_t n = 0;
  for (const auto* p : params) n += p->size();
  return n;
}

void im2col(const float* x, int c, int h, int w, int k, int stride, int pad, int out_h,
            int out_w, float* col) {
  const size_t cols = size_t(out_h) * out_w;
  for (int ch = 0; ch < c; ++ch) {
    const float* xc = x + size_t(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = col + (size_t(ch) * k * k + ky * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          float* dst = row + size_t(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::memset(dst, 0, sizeof(float) * out_w);
            continue;
          }
          const float* src = xc + size_t(iy) * w;
          if (stride == 1) {
            const int lo = std::max(0, pad - kx);
            const int hi = std::min(out_w, w + pad - kx);
            for (int ox = 0; ox < lo; ++ox) dst[ox] = 0.0f;
            if (hi > lo) std::memcpy(dst + lo, src + (lo - pad + kx), sizeof(float) * (hi - lo));
            for (int ox = std::max(hi, lo); ox < out_w; ++ox) dst[ox] = 0.0f;
          } else {
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im(const float* col, int c, int h, int w, int k, int stride, int pad, int out_h,
            int out_w, float* x) {
  const size_t cols = size_t(out_h) * out_w;
  std::fill(x, x + size_t(c) * h * w, 0.0f);
  for (int ch = 0; ch < c; ++ch) {
    float* xc = x + size_t(ch) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = col + (size_t(ch) * k * k + ky * k + kx) * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const float* src = row + size_t(oy) * out_w;
          float* dst = xc + size_t(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride_, int pad_)
    : in(in_ch), out(out_ch), k(kernel), stride(stride_), pad(pad_ < 0 ? kernel / 2 : pad_),
      weight(name + ".weight", {out_ch, in_ch, kernel, kernel}),
      bias(name + ".bias", {out_ch}) {}

void Conv2d::init_he(std::mt19937_64& rng, float gain) {
  const float std = gain * std::sqrt(2.0f / static_cast<float>(in * k * k));
  std::normal_distribution<float> dist(0.0f, std);
  for (auto& v : weight.value) v = dist(rng);
  std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x) const {
  require(x.c == in, ErrorKind::Shape,
          "conv " + weight.name + ": expected " + std::to_string(in) + " input channels, got " +
              x.shape_str());
  const int oh = conv_out_size(x.h, k, stride, pad), ow = conv_out_size(x.w, k, stride, pad);
  Tensor y(out, oh, ow);
  const int kk = in * k * k;
  const int n = oh * ow;
  CMapRM wm(weight.value.data(), out, kk);
  MapRM ym(y.v.data(), out, n);
  if (k == 1 && stride == 1 && pad == 0) {
    ym.noalias() = wm * CMapRM(x.v.data(), in, n);
  } else {
    std::vector<float> col(size_t(kk) * n);
    im2col(x.v.data(), in, x.h, x.w, k, stride, pad, oh, ow, col.data());
    ym.noalias() = wm * CMapRM(col.data(), kk, n);
  }
  for (int o = 0; o < out; ++o) {
    const float b = bias.value[o];
    float* row = y.channel(o);
    for (int i = 0; i < n; ++i) row[i] += b;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& gy, bool need_input_grad) {
  const int oh = gy.h, ow = gy.w, n = oh * ow, kk = in * k * k;
  require(gy.c == out && oh == conv_out_size(x.h, k, stride, pad), ErrorKind::Shape,
          "conv backward " + weight.name + ": gradient " + gy.shape_str());
  CMapRM gm(gy.v.data(), out, n);
  MapRM dw(weight.grad.data(), out, kk);
  std::vector<float> col;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  if (pointwise) {
    dw.noalias() += gm * CMapRM(x.v.data(), in, n).transpose();
  } else {
    col.resize(size_t(kk) * n);
    im2col(x.v.data(), in, x.h, x.w, k, stride, pad, oh, ow, col.data());
    dw.noalias() += gm * CMapRM(col.data(), kk, n).transpose();
  }
  for (int o = 0; o < out; ++o) {
    const float* row = gy.channel(o);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += row[i];
    bias.grad[o] += static_cast<float>(s);
  }
  if (!need_input_grad) return {};
  Tensor gx(in, x.h, x.w);
  CMapRM wm(weight.value.data(), out, kk);
  if (pointwise) {
    MapRM(gx.v.data(), in, n).noalias() = wm.transpose() * gm;
  } else {
    MapRM cm(col.data(), kk, n);
    cm.noalias() = wm.transpose() * gm;
    col2im(col.data(), in, x.h, x.w, k, stride, pad, oh, ow, gx.v.data());
  }
  return gx;
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(const std::string& name, int in_ch, int out_ch, int kernel,
                                 int stride_, int pad_)
    : in(in_ch), out(out_ch), k(kernel), stride(stride_), pad(pad_),
      weight(name + ".weight", {in_ch, out_ch, kernel, kernel}),
      bias(name + ".bias", {out_ch}) {}

void ConvTranspose2d::init_bilinear() {
  const int factor = (k + 1) / 2;
  const float center = (k % 2 == 1) ? float(factor - 1) : float(factor) - 0.5f;
  std::fill(weight.value.begin(), weight.value.end(), 0.0f);
  for (int c = 0; c < std::min(in, out); ++c)
    for (int y = 0; y < k; ++y)
      for (int x = 0; x < k; ++x)
        weight.value[((size_t(c) * out + c) * k + y) * k + x] =
            (1.0f - std::abs(y - center) / factor) * (1.0f - std::abs(x - center) / factor);
  std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor ConvTranspose2d::forward(const Tensor& x) const {
  require(x.c == in, ErrorKind::Shape, "transposed conv " + weight.name + ": input " + x.shape_str());
  const int oh = (x.h - 1) * stride - 2 * pad + k, ow = (x.w - 1) * stride - 2 * pad + k;
  const int kk = out * k * k, n = x.h * x.w;
  std::vector<float> col(size_t(kk) * n);
  MapRM(col.data(), kk, n).noalias() =
      CMapRM(weight.value.data(), in, kk).transpose() * CMapRM(x.v.data(), in, n);
  Tensor y(out, oh, ow);
  // The input grid plays the role of the conv output grid.
  col2im(col.data(), out, oh, ow, k, stride, pad, x.h, x.w, y.v.data());
  for (int o = 0; o < out; ++o) {
    const float b = bias.value[o];
    if (b == 0.0f) continue;
    float* row = y.channel(o);
    for (size_t i = 0; i < y.plane(); ++i) row[i] += b;
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& x, const Tensor& gy, bool need_input_grad) {
  const int kk = out * k * k, n = x.h * x.w;
  std::vector<float> col(size_t(kk) * n);
  im2col(gy.v.data(), out, gy.h, gy.w, k, stride, pad, x.h, x.w, col.data());
  CMapRM cm(col.data(), kk, n);
  if (trainable) {
    MapRM(weight.grad.data(), in, kk).noalias() += CMapRM(x.v.data(), in, n) * cm.transpose();
    for (int o = 0; o < out; ++o) {
      const float* row = gy.channel(o);
      double s = 0.0;
      for (size_t i = 0; i < gy.plane(); ++i) s += row[i];
      bias.grad[o] += static_cast<float>(s);
    }
  }
  if (!need_input_grad) return {};
  Tensor gx(in, x.h, x.w);
  MapRM(gx.v.data(), in, n).noalias() = CMapRM(weight.value.data(), in, kk) * cm;
  return gx;
}

// ------------------------------------------------------------ pointwise

void relu_inplace(Tensor& x) {
  for (auto& v : x.v) v = v > 0.0f ? v : 0.0f;
}

void relu_backward_inplace(const Tensor& y, Tensor& grad) {
  for (size_t i = 0; i < grad.v.size(); ++i)
    if (y.v[i] <= 0.0f) grad.v[i] = 0.0f;
}

Tensor maxpool2(const Tensor& x, std::vector<int32_t>& argmax) {
  const int oh = x.h / 2, ow = x.w / 2;
  Tensor y(x.c, oh, ow);
  argmax.assign(y.size(), 0);
  size_t o = 0;
  for (int c = 0; c < x.c; ++c) {
    const float* xc = x.channel(c);
    for (int yy = 0; yy < oh; ++yy)
      for (int xx = 0; xx < ow; ++xx, ++o) {
        int best = (2 * yy) * x.w + 2 * xx;
        float bv = xc[best];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int idx = (2 * yy + dy) * x.w + 2 * xx + dx;
            if (xc[idx] > bv) { bv = xc[idx]; best = idx; }
          }
        y.v[o] = bv;
        argmax[o] = best;
      }
  }
  return y;
}

Tensor maxpool2_backward(const Tensor& gy, const std::vector<int32_t>& argmax, int in_h,
                         int in_w) {
  Tensor gx(gy.c, in_h, in_w);
  const size_t plane = gy.plane();
  for (int c = 0; c < gy.c; ++c) {
    float* gxc = gx.channel(c);
    for (size_t i = 0; i < plane; ++i) gxc[argmax[c * plane + i]] += gy.v[c * plane + i];
  }
  return gx;
}

Tensor avgpool(const Tensor& x, int f) {
  require(f > 0 && x.h % f == 0 && x.w % f == 0, ErrorKind::Shape,
          "avgpool by " + std::to_string(f) + " of " + x.shape_str());
  Tensor y(x.c, x.h / f, x.w / f);
  const float inv = 1.0f / float(f * f);
  for (int c = 0; c < x.c; ++c)
    for (int yy = 0; yy < x.h; ++yy)
      for (int xx = 0; xx < x.w; ++xx) y.at(c, yy / f, xx / f) += x.at(c, yy, xx);
  y.scale(inv);
  return y;
}

Tensor avgpool_backward(const Tensor& gy, int f) {
  Tensor gx(gy.c, gy.h * f, gy.w * f);
  const float inv = 1.0f / float(f * f);
  for (int c = 0; c < gx.c; ++c)
    for (int yy = 0; yy < gx.h; ++yy)
      for (int xx = 0; xx < gx.w; ++xx) gx.at(c, yy, xx) = gy.at(c, yy / f, xx / f) * inv;
  return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.h == b.h && a.w == b.w, ErrorKind::Shape,
          "concat: " + a.shape_str() + " vs " + b.shape_str());
  Tensor y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.v.size());
  return y;
}

void split_channels(const Tensor& g, int first, Tensor& ga, Tensor& gb) {
  ga = Tensor(first, g.h, g.w);
  gb = Tensor(g.c - first, g.h, g.w);
  std::copy(g.v.begin(), g.v.begin() + ga.v.size(), ga.v.begin());
  std::copy(g.v.begin() + ga.v.size(), g.v.end(), gb.v.begin());
}

Tensor softmax_channels(const Tensor& z) {
  Tensor p(z.c, z.h, z.w);
  const size_t plane = z.plane();
  for (size_t i = 0; i < plane; ++i) {
    float m = -std::numeric_limits<float>::infinity();
    for (int c = 0; c < z.c; ++c) m = std::max(m, z.v[c * plane + i]);
    float s = 0.0f;
    for (int c = 0; c < z.c; ++c) {
      const float e = std::exp(z.v[c * plane + i] - m);
      p.v[c * plane + i] = e;
      s += e;
    }
    for (int c = 0; c < z.c; ++c) p.v[c * plane + i] /= s;
  }
  return p;
}

Tensor softmax_backward(const Tensor& p, const Tensor& gp) {
  Tensor gz(p.c, p.h, p.w);
  const size_t plane = p.plane();
  for (size_t i = 0; i < plane; ++i) {
    float dot = 0.0f;
    for (int c = 0; c < p.c; ++c) dot += p.v[c * plane + i] * gp.v[c * plane + i];
    for (int c = 0; c < p.c; ++c)
      gz.v[c * plane + i] = p.v[c * plane + i] * (gp.v[c * plane + i] - dot);
  }
  return gz;
}

}  // namespace coview::nn
