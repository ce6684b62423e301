#pragma once

// Shared domain types for the segmentation / identification pipeline.
//
// Pixel convention: origin top-left, x grows rightward, y grows downward.
// A flow vector (u, v) stored at pixel p of frame t is the displacement of the
// surface at p between frame t and frame t+1.
//
// Rasters store channels as planes (channel-major); each plane is row-major.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "coview/error.hpp"

namespace coview {

template <typename T, int Channels>
class Raster {
 public:
  static constexpr int kChannels = Channels;
  using value_type = T;

  Raster() = default;
  Raster(int width, int height, T fill = T{})
      : width_(width), height_(height), data_(checked_size(width, height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  size_t plane_size() const { return static_cast<size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  T& at(int c, int y, int x) { return data_[c * plane_size() + size_t(y) * width_ + x]; }
  const T& at(int c, int y, int x) const {
    return data_[c * plane_size() + size_t(y) * width_ + x];
  }
  // Single-channel shorthand.
  T& at(int y, int x) { return at(0, y, x); }
  const T& at(int y, int x) const { return at(0, y, x); }

  std::span<T> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const T> plane(int c) const {
    return {data_.data() + c * plane_size(), plane_size()};
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_size(int w, int h) const { return width_ == w && height_ == h; }
  template <typename U, int C>
  bool same_size(const Raster<U, C>& o) const {
    return width_ == o.width() && height_ == o.height();
  }

  bool operator==(const Raster&) const = default;

 private:
  static size_t checked_size(int width, int height) {
    require(width > 0 && height > 0, ErrorKind::Shape,
            "raster dimensions must be positive, got " + std::to_string(width) + "x" +
                std::to_string(height));
    return static_cast<size_t>(width) * height * Channels;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Frame = Raster<float, 3>;       // RGB in [0,1]
using FlowField = Raster<float, 2>;   // (u, v) in pixels/frame
using Mask = Raster<uint8_t, 1>;      // {0,1}
using SoftMask = Raster<float, 1>;    // foreground probability in [0,1]
using LabelMap = Raster<uint8_t, 1>;  // identity per pixel, 0 = background

enum class CameraKind { ThirdPerson, FirstPerson };
enum class Problem { ThirdThird, ThirdFirst };

const char* to_string(CameraKind k);
const char* to_string(Problem p);
CameraKind camera_kind_from_string(const std::string& s);
Problem problem_from_string(const std::string& s);

struct PersonInstance {
  int scene_id = 0;
  int view_id = 0;
  int frame_index = 0;
  int identity = 0;  // >= 1
  std::optional<Mask> gt_mask;
};

struct Sequence {
  int view_id = 0;
  CameraKind camera_kind = CameraKind::ThirdPerson;
  std::optional<int> wearer_identity;
  std::vector<Frame> frames;
  std::vector<FlowField> flows;  // flows[t] maps frame t to frame t+1
  std::vector<std::vector<PersonInstance>> instances;  // per frame

  int num_frames() const { return static_cast<int>(frames.size()); }
  // Instance of `identity` at frame t, or nullptr when not visible.
  const PersonInstance* find(int t, int identity) const;
};

// Reference to one person in one view at one time step.
struct InstanceRef {
  int scene = 0;
  int view = 0;
  int frame = 0;
  int identity = 0;
  bool operator==(const InstanceRef&) const = default;
};

// Reference to a first-person camera at one time step.
struct CameraRef {
  int scene = 0;
  int view = 0;
  int frame = 0;
  bool operator==(const CameraRef&) const = default;
};

struct ExamplePair {
  Problem problem = Problem::ThirdThird;
  InstanceRef side_a;
  std::variant<InstanceRef, CameraRef> side_b;
  int label = 0;  // 1 = same person / wearer
};

struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0,x1) x [y0,y1)
  bool empty() const { return x1 <= x0 || y1 <= y0; }
};

// Pixel becomes 1 iff soft >= tau; tau must lie in (0,1).
Mask threshold_mask(const SoftMask& soft, float tau = 0.5f);

SoftMask to_soft(const Mask& mask);
Box bounding_box(const Mask& mask);
Mask label_to_mask(const LabelMap& labels, int identity);
int count_foreground(const Mask& mask);

enum class ViolationKind {
  FlowCount,
  RasterSize,
  WearerMissing,
  WearerVisible,
  BadIdentity,
  BadFrameIndex,
  MaskValues,
  FrameValues,
  InstanceCount,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

// Every violated Sequence invariant; an empty list means the sequence is valid.
std::vector<Violation> validate_sequence(const Sequence& seq);

bool frame_values_valid(const Frame& frame);

}  // namespace coview
