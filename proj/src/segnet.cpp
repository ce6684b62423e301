#include "coview/segnet.hpp"

#include <cmath>
#include <algorithm>

namespace coview {

using nn::Tensor;

void SegNetConfig::validate() const {
  require(width > 0 && height > 0 && width % kDeepStride == 0 && height % kDeepStride == 0,
          ErrorKind::Config,
          "segnet input " + std::to_string(width) + "x" + std::to_string(height) +
              " must be divisible by 16");
  require(flow_stack >= 1, ErrorKind::Config, "flow stack must be >= 1");
  require(visual || motion, ErrorKind::Config, "at least one stream must be enabled");
  for (int i = 0; i < 5; ++i)
    require(widths[i] > 0 && convs[i] > 0, ErrorKind::Config, "stage widths/depths must be > 0");
  require(head_channels > 0, ErrorKind::Config, "head channels must be > 0");
  require(foreground_prior > 0.0f && foreground_prior < 1.0f, ErrorKind::Config,
          "foreground prior must be in (0, 1)");
}

SegNetConfig SegNetConfig::desk() { return SegNetConfig{}; }

SegNetConfig SegNetConfig::paper() {
  SegNetConfig c;
  c.widths = {64, 128, 256, 512, 512};
  c.convs = {2, 2, 3, 3, 3};
  c.head_channels = 1024;
  return c;
}

SoftMask SegOutput::foreground() const {
  SoftMask out(probs.w, probs.h);
  std::copy(probs.channel(1), probs.channel(1) + probs.plane(), out.data().begin());
  return out;
}

// ------------------------------------------------------------ ConvStream

ConvStream::ConvStream(const std::string& prefix, int in_channels,
                       const std::array<int, 5>& widths, const std::array<int, 5>& convs)
    : in_channels_(in_channels) {
  int in = in_channels;
  for (int s = 0; s < 5; ++s) {
    std::vector<nn::Conv2d> stage;
    for (int j = 0; j < convs[s]; ++j) {
      stage.emplace_back(prefix + ".s" + std::to_string(s + 1) + ".c" + std::to_string(j), in,
                         widths[s], 3);
      in = widths[s];
    }
    stages_.push_back(std::move(stage));
  }
}

void ConvStream::init(std::mt19937_64& rng) {
  for (auto& stage : stages_)
    for (auto& conv : stage) conv.init_he(rng);
}

ConvStream::Taps ConvStream::forward(const Tensor& input, Trace* trace) const {
  require(input.c == in_channels_, ErrorKind::Shape,
          "stream input has " + std::to_string(input.c) + " channels, expected " +
              std::to_string(in_channels_));
  if (trace) {
    trace->conv_in.assign(5, {});
    trace->conv_out.assign(5, {});
  }
  Taps taps;
  Tensor x = input;
  for (int s = 0; s < 5; ++s) {
    for (const auto& conv : stages_[s]) {
      Tensor y = conv.forward(x);
      nn::relu_inplace(y);
      if (trace) {
        trace->conv_in[s].push_back(std::move(x));
        trace->conv_out[s].push_back(y);
      }
      x = std::move(y);
    }
    if (s < 4) {
      std::vector<int32_t> idx;
      x = nn::maxpool2(x, idx);
      if (trace) trace->argmax[s] = std::move(idx);
    }
    if (s == 2) taps.pool3 = x;
    if (s == 3) taps.pool4 = x;
  }
  taps.pool5 = std::move(x);
  return taps;
}

void ConvStream::backward(const Trace& trace, const Tensor& g3, const Tensor& g4,
                          const Tensor& g5) {
  const auto& last = trace.conv_out[4].back();
  Tensor g = g5.empty() ? Tensor(last.c, last.h, last.w) : g5;
  for (int s = 4; s >= 0; --s) {
    if (s < 4) {
      if (s == 3 && !g4.empty()) g.add(g4);
      if (s == 2 && !g3.empty()) g.add(g3);
      const auto& pre = trace.conv_out[s].back();
      g = nn::maxpool2_backward(g, trace.argmax[s], pre.h, pre.w);
    }
    for (int j = static_cast<int>(stages_[s].size()) - 1; j >= 0; --j) {
      nn::relu_backward_inplace(trace.conv_out[s][j], g);
      const bool first = (s == 0 && j == 0);
      g = stages_[s][j].backward(trace.conv_in[s][j], g, !first);
    }
  }
}

void ConvStream::collect(nn::ParamList& out) {
  for (auto& stage : stages_)
    for (auto& conv : stage) conv.collect(out);
}

// ---------------------------------------------------------------- SegNet

SegNet::SegNet(const SegNetConfig& config, uint64_t init_seed) : config_(config) {
  config_.validate();
  const auto& w = config_.widths;
  if (config_.visual)
    visual_.emplace("segnet.visual", config_.visual_channels(), w, config_.convs);
  if (config_.motion)
    motion_.emplace("segnet.motion", config_.motion_channels(), w, config_.convs);
  fc_ = nn::Conv2d("segnet.fc", 2 * w[4], config_.head_channels, 3);
  score5_ = nn::Conv2d("segnet.score5", config_.head_channels, 2, 1);
  score4_ = nn::Conv2d("segnet.score4", 2 * w[3], 2, 1);
  score3_ = nn::Conv2d("segnet.score3", 2 * w[2], 2, 1);
  up2_ = nn::ConvTranspose2d("segnet.up2", 2, 2, 4, 2, 1);
  up8_ = nn::ConvTranspose2d("segnet.up8", 2, 2, 16, 8, 4);
  up8_.trainable = false;

  std::mt19937_64 rng(init_seed);
  if (visual_) visual_->init(rng);
  if (motion_) motion_->init(rng);
  fc_.init_he(rng);
  // Small score weights keep the first outputs near the prior.
  score5_.init_he(rng, 0.1f);
  score4_.init_he(rng, 0.1f);
  score3_.init_he(rng, 0.1f);
  up2_.init_bilinear();
  up8_.init_bilinear();
  // Bilinear upsampling keeps constants, so the prior survives to the output.
  const float logit = std::log(config_.foreground_prior / (1.0f - config_.foreground_prior));
  score5_.bias.value = {-0.5f * logit, 0.5f * logit};
}

nn::ParamList SegNet::params() {
  nn::ParamList out;
  if (visual_) visual_->collect(out);
  if (motion_) motion_->collect(out);
  fc_.collect(out);
  score5_.collect(out);
  score4_.collect(out);
  score3_.collect(out);
  up2_.collect(out);
  return out;
}

namespace {

ConvStream::Taps zero_taps(const SegNetConfig& c) {
  const int h = c.height, w = c.width;
  return {Tensor(c.widths[2], h / 8, w / 8), Tensor(c.widths[3], h / 16, w / 16),
          Tensor(c.widths[4], h / 16, w / 16)};
}

}  // namespace

SegOutput SegNet::forward(const SegInput& in, Trace* trace) const {
  const int W = config_.width, H = config_.height;
  if (config_.visual)
    require(in.visual.c == config_.visual_channels() && in.visual.h == H && in.visual.w == W,
            ErrorKind::Shape,
            "visual input is " + in.visual.shape_str() + ", expected " +
                std::to_string(config_.visual_channels()) + "x" + std::to_string(H) + "x" +
                std::to_string(W));
  if (config_.motion)
    require(in.motion.c == config_.motion_channels() && in.motion.h == H && in.motion.w == W,
            ErrorKind::Shape,
            "motion input is " + in.motion.shape_str() + ", expected " +
                std::to_string(config_.motion_channels()) + "x" + std::to_string(H) + "x" +
                std::to_string(W));

  Trace local;
  Trace& t = trace ? *trace : local;
  t.visual_taps = visual_ ? visual_->forward(in.visual, trace ? &t.visual : nullptr)
                          : zero_taps(config_);
  t.motion_taps = motion_ ? motion_->forward(in.motion, trace ? &t.motion : nullptr)
                          : zero_taps(config_);

  t.fused3 = nn::concat_channels(t.visual_taps.pool3, t.motion_taps.pool3);
  t.fused4 = nn::concat_channels(t.visual_taps.pool4, t.motion_taps.pool4);
  t.fused5 = nn::concat_channels(t.visual_taps.pool5, t.motion_taps.pool5);

  t.fc = fc_.forward(t.fused5);
  nn::relu_inplace(t.fc);
  t.coarse = score5_.forward(t.fc);
  t.coarse.add(score4_.forward(t.fused4));
  t.mid = up2_.forward(t.coarse);
  t.mid.add(score3_.forward(t.fused3));
  t.probs = nn::softmax_channels(up8_.forward(t.mid));

  SegOutput out;
  out.probs = t.probs;
  out.fused3 = t.fused3;
  out.fused4 = t.fused4;
  out.fused5 = t.fused5;
  out.visual5 = t.visual_taps.pool5;
  out.motion5 = t.motion_taps.pool5;
  return out;
}

void SegNet::backward(const Trace& t, const Grads& g) {
  const auto& w = config_.widths;
  Tensor g_fused3(t.fused3.c, t.fused3.h, t.fused3.w);
  Tensor g_fused4(t.fused4.c, t.fused4.h, t.fused4.w);
  Tensor g_fused5(t.fused5.c, t.fused5.h, t.fused5.w);

  if (!g.probs.empty() || !g.logits.empty()) {
    Tensor g_logits(t.probs.c, t.probs.h, t.probs.w);
    if (!g.probs.empty()) {
      require(g.probs.same_shape(t.probs), ErrorKind::Shape,
              "probability gradient " + g.probs.shape_str() + " vs " + t.probs.shape_str());
      g_logits = nn::softmax_backward(t.probs, g.probs);
    }
    if (!g.logits.empty()) {
      require(g.logits.same_shape(t.probs), ErrorKind::Shape,
              "logit gradient " + g.logits.shape_str() + " vs " + t.probs.shape_str());
      g_logits.add(g.logits);
    }
    Tensor g_mid = up8_.backward(t.mid, g_logits, true);
    g_fused3 = score3_.backward(t.fused3, g_mid, true);
    Tensor g_coarse = up2_.backward(t.coarse, g_mid, true);
    g_fused4 = score4_.backward(t.fused4, g_coarse, true);
    Tensor g_fc = score5_.backward(t.fc, g_coarse, true);
    nn::relu_backward_inplace(t.fc, g_fc);
    g_fused5 = fc_.backward(t.fused5, g_fc, true);
  }

  Tensor v3, m3, v4, m4, v5, m5;
  nn::split_channels(g_fused3, w[2], v3, m3);
  nn::split_channels(g_fused4, w[3], v4, m4);
  nn::split_channels(g_fused5, w[4], v5, m5);
  if (!g.visual5.empty()) v5.add(g.visual5);
  if (!g.motion5.empty()) m5.add(g.motion5);
  if (visual_) visual_->backward(t.visual, v3, v4, v5);
  if (motion_) motion_->backward(t.motion, m3, m4, m5);
}

void seg_logit_grad(const Tensor& probs, const Mask& gt, Tensor& grad, float scale) {
  require(probs.c == 2 && gt.same_size(probs.w, probs.h), ErrorKind::Shape,
          "seg_logit_grad: probabilities " + probs.shape_str() + " vs mask " +
              std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
  if (grad.empty()) grad = Tensor(2, probs.h, probs.w);
  const float* p0 = probs.channel(0);
  const float* p1 = probs.channel(1);
  float* g0 = grad.channel(0);
  float* g1 = grad.channel(1);
  for (size_t i = 0; i < probs.plane(); ++i) {
    const float s = gt.data()[i] ? 1.0f : 0.0f;
    g0[i] += scale * (p0[i] - (1.0f - s));
    g1[i] += scale * (p1[i] - s);
  }
}

// ---------------------------------------------------------------- inputs

nn::Tensor make_visual_tensor(const Frame& frame, const Mask* premask) {
  const int H = frame.height(), W = frame.width();
  Tensor x(premask ? 4 : 3, H, W);
  std::copy(frame.data().begin(), frame.data().end(), x.v.begin());
  if (premask) {
    require(premask->same_size(frame), ErrorKind::Shape, "pre-mask size differs from frame");
    std::transform(premask->data().begin(), premask->data().end(), x.channel(3),
                   [](uint8_t v) { return v ? 1.0f : 0.0f; });
  }
  return x;
}

nn::Tensor make_motion_tensor(std::span<const FlowField> flows, int t, int K,
                              const Mask* premask) {
  require(!flows.empty() || premask, ErrorKind::Shape, "motion input needs a size reference");
  const int H = flows.empty() ? premask->height() : flows[0].height();
  const int W = flows.empty() ? premask->width() : flows[0].width();
  Tensor x(2 * K + (premask ? 1 : 0), H, W);
  for (int k = 0; k < K; ++k) {
    const int idx = t - 1 - k;
    if (idx < 0 || idx >= static_cast<int>(flows.size())) continue;
    const auto& f = flows[idx];
    require(f.same_size(W, H), ErrorKind::Shape, "flow " + std::to_string(idx) + " size");
    std::copy(f.data().begin(), f.data().end(), x.channel(2 * k));
  }
  if (premask) {
    require(premask->same_size(W, H), ErrorKind::Shape, "pre-mask size differs from flow");
    std::transform(premask->data().begin(), premask->data().end(), x.channel(2 * K),
                   [](uint8_t v) { return v ? 1.0f : 0.0f; });
  }
  return x;
}

SegInput make_seg_input(std::span<const Frame> frames, std::span<const FlowField> flows, int t,
                        const Mask& premask, int K) {
  require(t >= 0 && t < static_cast<int>(frames.size()), ErrorKind::Parameter,
          "frame index " + std::to_string(t) + " outside sequence");
  return {make_visual_tensor(frames[t], &premask), make_motion_tensor(flows, t, K, &premask)};
}

}  // namespace coview
