#include "coview/matchnet.hpp"

#include <algorithm>
#include <cmath>

#include "coview/losses.hpp"

namespace coview {

using nn::Tensor;

const char* to_string(ReweightMode m) {
  switch (m) {
    case ReweightMode::None: return "none";
    case ReweightMode::SoftAttention: return "soft_attention";
    case ReweightMode::BoundingBox: return "bounding_box";
  }
  return "none";
}

ReweightMode reweight_mode_from_string(const std::string& s) {
  if (s == "none" || s == "w/o") return ReweightMode::None;
  if (s == "soft_attention" || s == "soft-attention") return ReweightMode::SoftAttention;
  if (s == "bounding_box" || s == "bounding-box" || s == "bbox") return ReweightMode::BoundingBox;
  fail(ErrorKind::Config, "unknown re-weighting mode '" + s + "'");
}

void MatchConfig::validate() const {
  require(margin > 0.0, ErrorKind::Config, "contrastive margin must be > 0");
  require(embed_channels > 0 && head_width > 0 && head_depth >= 1, ErrorKind::Config,
          "embedding head sizes must be positive");
  require(post_kernel >= 0 && (post_kernel == 0 || post_kernel % 2 == 1), ErrorKind::Config,
          "post kernel must be odd (or 0 for automatic)");
}

int MatchConfig::resolved_post_kernel(int gw, int gh) const {
  return post_kernel > 0 ? post_kernel : 2 * std::max(gw, gh) - 1;
}

// -------------------------------------------------------------- reweight

namespace {

Tensor attention_channel(const Tensor& probs, int channel, int factor) {
  Tensor one(1, probs.h, probs.w);
  std::copy(probs.channel(channel), probs.channel(channel) + probs.plane(), one.v.begin());
  return nn::avgpool(one, factor);
}

Tensor box_attention(const Box& box, bool background, int h, int w, int factor) {
  Tensor m(1, h, w, background ? 1.0f : 0.0f);
  for (int y = std::max(0, box.y0); y < std::min(h, box.y1); ++y)
    for (int x = std::max(0, box.x0); x < std::min(w, box.x1); ++x)
      m.at(0, y, x) = background ? 0.0f : 1.0f;
  return nn::avgpool(m, factor);
}

Tensor scale_by(const Tensor& feats, const Tensor& att) {
  Tensor out = feats;
  const size_t plane = feats.plane();
  for (int c = 0; c < feats.c; ++c)
    for (size_t i = 0; i < plane; ++i) out.v[c * plane + i] *= att.v[i];
  return out;
}

}  // namespace

Reweighted reweight(const Tensor& spatial, const Tensor& temporal, const Tensor& probs,
                    ReweightMode mode, Problem problem, const std::optional<Box>& gt_box,
                    ReweightTrace* trace) {
  require(spatial.h == temporal.h && spatial.w == temporal.w, ErrorKind::Shape,
          "reweight: spatial " + spatial.shape_str() + " vs temporal " + temporal.shape_str());
  if (mode == ReweightMode::None) {
    if (trace) {
      *trace = ReweightTrace{};
      trace->spatial = spatial;
      trace->temporal = temporal;
      trace->att_spatial = Tensor(1, spatial.h, spatial.w, 1.0f);
      trace->att_temporal = trace->att_spatial;
    }
    return {spatial, temporal};
  }
  require(probs.c == 2 && probs.h == SegNetConfig::kDeepStride * spatial.h &&
              probs.w == SegNetConfig::kDeepStride * spatial.w,
          ErrorKind::Shape,
          "reweight: probabilities " + probs.shape_str() + " must be 16x the feature grid " +
              spatial.shape_str());
  const int f = SegNetConfig::kDeepStride;
  const int spatial_ch = problem == Problem::ThirdFirst ? 0 : 1;
  const int temporal_ch = 1;

  Tensor att_s, att_t;
  if (mode == ReweightMode::SoftAttention) {
    att_s = attention_channel(probs, spatial_ch, f);
    att_t = spatial_ch == temporal_ch ? att_s : attention_channel(probs, temporal_ch, f);
  } else {
    require(gt_box.has_value(), ErrorKind::Parameter,
            "reweight: bounding_box mode requires a ground-truth box");
    att_s = box_attention(*gt_box, spatial_ch == 0, probs.h, probs.w, f);
    att_t = box_attention(*gt_box, false, probs.h, probs.w, f);
  }
  Reweighted out{scale_by(spatial, att_s), scale_by(temporal, att_t)};
  if (trace) {
    trace->spatial = spatial;
    trace->temporal = temporal;
    trace->att_spatial = std::move(att_s);
    trace->att_temporal = std::move(att_t);
    trace->spatial_channel = spatial_ch;
    trace->temporal_channel = temporal_ch;
    trace->differentiable = mode == ReweightMode::SoftAttention;
    trace->factor = f;
  }
  return out;
}

ReweightGrads reweight_backward(const ReweightTrace& t, const Tensor& gs, const Tensor& gt) {
  ReweightGrads out;
  out.spatial = scale_by(gs, t.att_spatial);
  out.temporal = scale_by(gt, t.att_temporal);
  if (!t.differentiable) return out;

  const size_t plane = t.spatial.plane();
  auto att_grad = [plane](const Tensor& feats, const Tensor& g) {
    Tensor ga(1, feats.h, feats.w);
    for (int c = 0; c < feats.c; ++c)
      for (size_t i = 0; i < plane; ++i) ga.v[i] += g.v[c * plane + i] * feats.v[c * plane + i];
    return ga;
  };
  Tensor g_att_s = att_grad(t.spatial, gs);
  Tensor g_att_t = att_grad(t.temporal, gt);
  Tensor up_s = nn::avgpool_backward(g_att_s, t.factor);
  Tensor up_t = nn::avgpool_backward(g_att_t, t.factor);
  out.probs = Tensor(2, up_s.h, up_s.w);
  std::transform(up_s.v.begin(), up_s.v.end(), out.probs.channel(t.spatial_channel),
                 out.probs.channel(t.spatial_channel), std::plus<float>());
  std::transform(up_t.v.begin(), up_t.v.end(), out.probs.channel(t.temporal_channel),
                 out.probs.channel(t.temporal_channel), std::plus<float>());
  return out;
}

// --------------------------------------------------------- EmbeddingHead

EmbeddingHead::EmbeddingHead(const MatchConfig& config, int feature_channels, int grid_w,
                             int grid_h, uint64_t seed)
    : feature_channels_(feature_channels), grid_w_(grid_w), grid_h_(grid_h) {
  config.validate();
  int in = feature_channels;
  for (int i = 0; i < config.head_depth; ++i) {
    spatial_.emplace_back("match.head.spatial.c" + std::to_string(i), in, config.head_width, 3);
    temporal_.emplace_back("match.head.temporal.c" + std::to_string(i), in, config.head_width, 3);
    in = config.head_width;
  }
  const int k = config.resolved_post_kernel(grid_w, grid_h);
  post_ = nn::Conv2d("match.head.post", 2 * config.head_width, config.embed_channels, k, 1, k / 2);
  std::mt19937_64 rng(seed);
  for (auto& c : spatial_) c.init_he(rng);
  for (auto& c : temporal_) c.init_he(rng);
  post_.init_he(rng, 0.5f);
}

nn::ParamList EmbeddingHead::params() {
  nn::ParamList out;
  for (auto& c : spatial_) c.collect(out);
  for (auto& c : temporal_) c.collect(out);
  post_.collect(out);
  return out;
}

Embedding EmbeddingHead::forward(const Tensor& spatial, const Tensor& temporal,
                                 Trace* trace) const {
  require(spatial.h == grid_h_ && spatial.w == grid_w_ && temporal.h == grid_h_ &&
              temporal.w == grid_w_,
          ErrorKind::Shape,
          "embed: feature grids " + spatial.shape_str() + " / " + temporal.shape_str() +
              " do not match the " + std::to_string(grid_h_) + "x" + std::to_string(grid_w_) +
              " embedding grid");
  require(spatial.c == feature_channels_ && temporal.c == feature_channels_, ErrorKind::Shape,
          "embed: expected " + std::to_string(feature_channels_) + " feature channels");
  auto run = [trace](const std::vector<nn::Conv2d>& convs, Tensor x, std::vector<Tensor>* ins,
                     std::vector<Tensor>* outs) {
    for (const auto& conv : convs) {
      Tensor y = conv.forward(x);
      nn::relu_inplace(y);
      if (trace) {
        ins->push_back(std::move(x));
        outs->push_back(y);
      }
      x = std::move(y);
    }
    return x;
  };
  if (trace) *trace = Trace{};
  Tensor s = run(spatial_, spatial, trace ? &trace->spatial_in : nullptr,
                 trace ? &trace->spatial_out : nullptr);
  Tensor t = run(temporal_, temporal, trace ? &trace->temporal_in : nullptr,
                 trace ? &trace->temporal_out : nullptr);
  Tensor cat = nn::concat_channels(s, t);
  Embedding e = post_.forward(cat);
  if (trace) trace->concat = std::move(cat);
  return e;
}

std::pair<Tensor, Tensor> EmbeddingHead::backward(const Trace& t, const Tensor& grad) {
  Tensor gcat = post_.backward(t.concat, grad, true);
  Tensor gs, gt;
  nn::split_channels(gcat, gcat.c / 2, gs, gt);
  for (int i = static_cast<int>(spatial_.size()) - 1; i >= 0; --i) {
    nn::relu_backward_inplace(t.spatial_out[i], gs);
    gs = spatial_[i].backward(t.spatial_in[i], gs, true);
    nn::relu_backward_inplace(t.temporal_out[i], gt);
    gt = temporal_[i].backward(t.temporal_in[i], gt, true);
  }
  return {std::move(gs), std::move(gt)};
}

// ---------------------------------------------------- FirstPersonEncoder

FirstPersonEncoder::FirstPersonEncoder(const SegNetConfig& config,
                                       std::shared_ptr<EmbeddingHead> head, uint64_t seed)
    : config_(config), head_(std::move(head)) {
  config_.validate();
  require(head_ != nullptr, ErrorKind::Config, "first-person encoder needs an embedding head");
  require(head_->grid_w() == config_.grid_width() && head_->grid_h() == config_.grid_height(),
          ErrorKind::Config, "first-person encoder grid must equal the embedding grid");
  if (config_.visual) visual_.emplace("match.fp.visual", 3, config_.widths, config_.convs);
  if (config_.motion)
    motion_.emplace("match.fp.motion", 2 * config_.flow_stack, config_.widths, config_.convs);
  std::mt19937_64 rng(seed);
  if (visual_) visual_->init(rng);
  if (motion_) motion_->init(rng);
}

nn::ParamList FirstPersonEncoder::stream_params() {
  nn::ParamList out;
  if (visual_) visual_->collect(out);
  if (motion_) motion_->collect(out);
  return out;
}

const nn::Param* FirstPersonEncoder::first_stream_param() const {
  auto params = const_cast<FirstPersonEncoder*>(this)->stream_params();
  return params.empty() ? nullptr : params.front();
}

Embedding FirstPersonEncoder::forward(const Tensor& visual, const Tensor& motion,
                                      Trace* trace) const {
  const int H = config_.height, W = config_.width;
  const int gh = config_.grid_height(), gw = config_.grid_width();
  if (visual_)
    require(visual.c == 3 && visual.h == H && visual.w == W, ErrorKind::Shape,
            "first-person visual input is " + visual.shape_str());
  if (motion_)
    require(motion.c == 2 * config_.flow_stack && motion.h == H && motion.w == W,
            ErrorKind::Shape, "first-person motion input is " + motion.shape_str());
  Trace local;
  Trace& t = trace ? *trace : local;
  t.visual5 = visual_ ? visual_->forward(visual, trace ? &t.visual : nullptr).pool5
                      : Tensor(config_.widths[4], gh, gw);
  t.motion5 = motion_ ? motion_->forward(motion, trace ? &t.motion : nullptr).pool5
                      : Tensor(config_.widths[4], gh, gw);
  return head_->forward(t.visual5, t.motion5, trace ? &t.head : nullptr);
}

Embedding FirstPersonEncoder::forward(std::span<const Frame> frames,
                                      std::span<const FlowField> flows) const {
  require(!frames.empty(), ErrorKind::Shape, "first-person window has no frames");
  require(static_cast<int>(flows.size()) == config_.flow_stack, ErrorKind::Shape,
          "first-person window holds " + std::to_string(flows.size()) + " flows, expected " +
              std::to_string(config_.flow_stack));
  const Frame& cur = frames.back();
  require(cur.same_size(config_.width, config_.height), ErrorKind::Shape,
          "first-person frame size differs from the network input");
  Tensor motion(2 * config_.flow_stack, config_.height, config_.width);
  for (int k = 0; k < config_.flow_stack; ++k) {
    require(flows[k].same_size(cur), ErrorKind::Shape, "first-person flow size");
    std::copy(flows[k].data().begin(), flows[k].data().end(), motion.channel(2 * k));
  }
  return forward(make_first_person_visual(cur), motion);
}

void FirstPersonEncoder::backward(const Trace& t, const Tensor& grad) {
  auto [gs, gt] = head_->backward(t.head, grad);
  if (visual_) visual_->backward(t.visual, {}, {}, gs);
  if (motion_) motion_->backward(t.motion, {}, {}, gt);
}

nn::Tensor make_first_person_visual(const Frame& frame) {
  return make_visual_tensor(frame, nullptr);
}

nn::Tensor make_first_person_motion(std::span<const FlowField> flows, int t, int K, int width,
                                    int height) {
  if (flows.empty()) return Tensor(2 * K, height, width);
  return make_motion_tensor(flows, t, K, nullptr);
}

double pair_distance(const Embedding& a, const Embedding& b) {
  require(a.same_shape(b), ErrorKind::Shape,
          "pair_distance: " + a.shape_str() + " vs " + b.shape_str());
  double s = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = double(a.v[i]) - double(b.v[i]);
    s += d * d;
  }
  return s;
}

double contrastive_loss(std::span<const Embedding> a, std::span<const Embedding> b,
                        std::span<const int> labels, double margin) {
  require(a.size() == b.size() && a.size() == labels.size(), ErrorKind::Shape,
          "contrastive_loss: batch sizes differ");
  double total = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    require(a[i].same_shape(b[i]), ErrorKind::Shape,
            "contrastive_loss: " + a[i].shape_str() + " vs " + b[i].shape_str());
    std::vector<double> da(a[i].v.begin(), a[i].v.end()), db(b[i].v.begin(), b[i].v.end());
    const int y = labels[i];
    total += contrastive_loss<double>(da, db, std::span<const int>(&y, 1), margin);
  }
  return total;
}

}  // namespace coview
