#pragma once

// Siamese matching machinery: attention re-weighting of the deepest stream
// features, the embedding head shared between branches, the first-person
// encoder of the semi-Siamese configuration, and pair distances.

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "coview/core.hpp"
#include "coview/nn.hpp"
#include "coview/segnet.hpp"

namespace coview {

enum class ReweightMode { None, SoftAttention, BoundingBox };

const char* to_string(ReweightMode m);
ReweightMode reweight_mode_from_string(const std::string& s);

struct MatchConfig {
  Problem problem = Problem::ThirdThird;
  ReweightMode reweight = ReweightMode::SoftAttention;
  int embed_channels = 128;  // C
  int head_width = 64;       // channels of the per-stream head convolutions
  int head_depth = 2;        // per-stream convolutions before concatenation
  int post_kernel = 0;       // kernel of the post-concatenation conv; 0 = 2*grid-1
  double margin = 1.0;

  void validate() const;
  int resolved_post_kernel(int grid_w, int grid_h) const;
  bool operator==(const MatchConfig&) const = default;
};

using Embedding = nn::Tensor;  // C x H'' x W''

struct ReweightTrace {
  nn::Tensor spatial, temporal;            // inputs
  nn::Tensor att_spatial, att_temporal;    // 1 x H'' x W'' downsampled attentions
  int spatial_channel = 1;                 // 0 = background, 1 = foreground
  int temporal_channel = 1;
  bool differentiable = false;             // attention came from probs
  int factor = SegNetConfig::kDeepStride;
};

struct Reweighted {
  nn::Tensor spatial, temporal;
};

// third_third: both streams scaled by the foreground attention.
// third_first: spatial by the background, temporal by the foreground.
// bounding_box: same channel rule with the binary box mask as attention.
Reweighted reweight(const nn::Tensor& spatial, const nn::Tensor& temporal,
                    const nn::Tensor& seg_probs, ReweightMode mode, Problem problem,
                    const std::optional<Box>& gt_box = std::nullopt,
                    ReweightTrace* trace = nullptr);

struct ReweightGrads {
  nn::Tensor spatial, temporal;
  nn::Tensor probs;  // empty unless the attention is differentiable
};
ReweightGrads reweight_backward(const ReweightTrace& trace, const nn::Tensor& grad_spatial,
                                const nn::Tensor& grad_temporal);

class EmbeddingHead {
 public:
  struct Trace {
    std::vector<nn::Tensor> spatial_in, spatial_out, temporal_in, temporal_out;
    nn::Tensor concat;
  };

  EmbeddingHead(const MatchConfig& config, int feature_channels, int grid_w, int grid_h,
                uint64_t seed);

  Embedding forward(const nn::Tensor& spatial, const nn::Tensor& temporal,
                    Trace* trace = nullptr) const;
  // Returns (dL/dspatial, dL/dtemporal).
  std::pair<nn::Tensor, nn::Tensor> backward(const Trace& trace, const nn::Tensor& grad);
  nn::ParamList params();
  int grid_w() const { return grid_w_; }
  int grid_h() const { return grid_h_; }
  int embed_channels() const { return post_.out; }

 private:
  int feature_channels_;
  int grid_w_, grid_h_;
  std::vector<nn::Conv2d> spatial_, temporal_;
  nn::Conv2d post_;
};

// First-person branch: its own visual (RGB) and motion (K flows) streams,
// no pre-mask, no upsampling, feeding the shared embedding head.
class FirstPersonEncoder {
 public:
  struct Trace {
    ConvStream::Trace visual, motion;
    nn::Tensor visual5, motion5;
    EmbeddingHead::Trace head;
  };

  FirstPersonEncoder(const SegNetConfig& config, std::shared_ptr<EmbeddingHead> head,
                     uint64_t seed);

  Embedding forward(const nn::Tensor& visual, const nn::Tensor& motion,
                    Trace* trace = nullptr) const;
  // Window form: current frame = frames.back(); flows holds exactly K fields,
  // most recent first.
  Embedding forward(std::span<const Frame> frames, std::span<const FlowField> flows) const;
  void backward(const Trace& trace, const nn::Tensor& grad_embedding);

  // Shallow-stage parameters only; the head is owned jointly.
  nn::ParamList stream_params();
  const EmbeddingHead& head() const { return *head_; }
  const SegNetConfig& config() const { return config_; }
  // Address of the first shallow parameter (identity checks).
  const nn::Param* first_stream_param() const;

 private:
  SegNetConfig config_;
  std::optional<ConvStream> visual_, motion_;
  std::shared_ptr<EmbeddingHead> head_;
};

nn::Tensor make_first_person_visual(const Frame& frame);
nn::Tensor make_first_person_motion(std::span<const FlowField> flows, int t, int flow_stack,
                                    int width, int height);

// Sum of elementwise squared differences.
double pair_distance(const Embedding& a, const Embedding& b);

// Batch form of the elementwise contrastive loss on float embeddings.
double contrastive_loss(std::span<const Embedding> a, std::span<const Embedding> b,
                        std::span<const int> labels, double margin);

}  // namespace coview
