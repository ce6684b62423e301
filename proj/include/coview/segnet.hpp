#pragma once

// Two-stream, pre-mask conditioned fully convolutional segmentation network.
//
//   visual stream:  RGB + pre-mask            (4 channels)
//   motion stream:  K stacked flows + pre-mask (2K+1 channels)
//
// Each stream is five conv stages; stages 1-4 end in 2x2 max pooling and the
// fifth keeps stride 16. Stream features are concatenated at the three deepest
// levels (stride 8, 16, 16) and decoded FCN8s-style: 1x1 score layers, a
// learnable 2x upsampling, skip sums and a fixed bilinear 8x upsampling into a
// two-channel (background, foreground) softmax.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "coview/core.hpp"
#include "coview/nn.hpp"

namespace coview {

struct SegNetConfig {
  static constexpr int kDeepStride = 16;

  int width = 64;
  int height = 64;
  int flow_stack = 5;
  std::array<int, 5> widths{16, 32, 64, 64, 64};
  std::array<int, 5> convs{1, 1, 1, 1, 1};  // conv layers per stage
  int head_channels = 64;
  // Initial foreground probability of the output; sets the deep score bias so
  // the first steps do not fight an all-0.5 prediction.
  float foreground_prior = 0.05f;
  bool visual = true;
  bool motion = true;

  int visual_channels() const { return 3 + 1; }
  int motion_channels() const { return 2 * flow_stack + 1; }
  int grid_width() const { return width / kDeepStride; }
  int grid_height() const { return height / kDeepStride; }
  int deep_channels() const { return widths[4]; }
  void validate() const;

  static SegNetConfig desk();
  // VGG16-sized widths and depths.
  static SegNetConfig paper();
  bool operator==(const SegNetConfig&) const = default;
};

// Five conv stages with max pooling after the first four. Taps at pool3, pool4
// and the stride-16 fifth stage.
class ConvStream {
 public:
  struct Taps {
    nn::Tensor pool3, pool4, pool5;
  };
  struct Trace {
    std::vector<std::vector<nn::Tensor>> conv_in;   // [stage][conv]
    std::vector<std::vector<nn::Tensor>> conv_out;  // post-ReLU
    std::array<std::vector<int32_t>, 4> argmax;
  };

  ConvStream() = default;
  ConvStream(const std::string& prefix, int in_channels, const std::array<int, 5>& widths,
             const std::array<int, 5>& convs);

  void init(std::mt19937_64& rng);
  Taps forward(const nn::Tensor& x, Trace* trace) const;
  // Missing (empty) tap gradients count as zero.
  void backward(const Trace& trace, const nn::Tensor& grad_pool3, const nn::Tensor& grad_pool4,
                const nn::Tensor& grad_pool5);
  void collect(nn::ParamList& out);
  int in_channels() const { return in_channels_; }

 private:
  int in_channels_ = 0;
  std::vector<std::vector<nn::Conv2d>> stages_;
};

struct SegInput {
  nn::Tensor visual;  // 4 x H x W
  nn::Tensor motion;  // (2K+1) x H x W
};

struct SegOutput {
  nn::Tensor probs;   // 2 x H x W (background, foreground)
  nn::Tensor fused3;  // stride 8
  nn::Tensor fused4;  // stride 16
  nn::Tensor fused5;  // stride 16, 2F channels
  nn::Tensor visual5;  // spatial features fed to the matching head
  nn::Tensor motion5;  // temporal features fed to the matching head

  SoftMask foreground() const;
};

class SegNet {
 public:
  struct Trace {
    ConvStream::Trace visual, motion;
    ConvStream::Taps visual_taps, motion_taps;
    nn::Tensor fused3, fused4, fused5;
    nn::Tensor fc;       // post-ReLU
    nn::Tensor coarse;   // score5 + score4 (stride 16)
    nn::Tensor mid;      // up2(coarse) + score3 (stride 8)
    nn::Tensor probs;
  };
  struct Grads {
    nn::Tensor probs;    // dL/dprobs, 2 x H x W, may be empty
    nn::Tensor visual5;  // may be empty
    nn::Tensor motion5;  // may be empty
    nn::Tensor logits;   // dL/dlogits added after the softmax, may be empty
  };

  SegNet(const SegNetConfig& config, uint64_t init_seed);

  const SegNetConfig& config() const { return config_; }
  SegOutput forward(const SegInput& input, Trace* trace = nullptr) const;
  void backward(const Trace& trace, const Grads& grads);
  nn::ParamList params();

 private:
  SegNetConfig config_;
  std::optional<ConvStream> visual_, motion_;
  nn::Conv2d fc_, score5_, score4_, score3_;
  nn::ConvTranspose2d up2_, up8_;
};

// Gradient of the foreground cross-entropy with respect to the two softmax
// logits: p - onehot(gt), scaled. Unlike differentiating through the clamped
// probability it never vanishes on confidently wrong pixels.
void seg_logit_grad(const nn::Tensor& probs, const Mask& gt, nn::Tensor& grad_logits,
                    float scale = 1.0f);

// Stacked flow channels for frame t: flows t-1, t-2, ..., t-K (zero where t-k < 0),
// followed by the pre-mask.
nn::Tensor make_motion_tensor(std::span<const FlowField> flows, int t, int flow_stack,
                              const Mask* premask);
nn::Tensor make_visual_tensor(const Frame& frame, const Mask* premask);
SegInput make_seg_input(std::span<const Frame> frames, std::span<const FlowField> flows, int t,
                        const Mask& premask, int flow_stack);

}  // namespace coview
