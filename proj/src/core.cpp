#include "coview/core.hpp"

#include <algorithm>

namespace coview {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Parameter: return "parameter error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Integrity: return "integrity error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::Lookup: return "lookup error";
    case ErrorKind::EmptyData: return "empty-dataset error";
    case ErrorKind::Generation: return "generation error";
  }
  return "error";
}

const char* to_string(CameraKind k) {
  return k == CameraKind::FirstPerson ? "first_person" : "third_person";
}

const char* to_string(Problem p) {
  return p == Problem::ThirdFirst ? "third_first" : "third_third";
}

CameraKind camera_kind_from_string(const std::string& s) {
  if (s == "first_person" || s == "first-person") return CameraKind::FirstPerson;
  if (s == "third_person" || s == "third-person") return CameraKind::ThirdPerson;
  fail(ErrorKind::Config, "unknown camera kind '" + s + "'");
}

Problem problem_from_string(const std::string& s) {
  if (s == "third_third" || s == "third-third") return Problem::ThirdThird;
  if (s == "third_first" || s == "third-first") return Problem::ThirdFirst;
  fail(ErrorKind::Config, "unknown problem '" + s + "'");
}

const PersonInstance* Sequence::find(int t, int identity) const {
  if (t < 0 || t >= static_cast<int>(instances.size())) return nullptr;
  for (const auto& inst : instances[t])
    if (inst.identity == identity) return &inst;
  return nullptr;
}

Mask threshold_mask(const SoftMask& soft, float tau) {
  require(tau > 0.0f && tau < 1.0f, ErrorKind::Parameter,
          "threshold tau must lie in (0,1), got " + std::to_string(tau));
  Mask out(soft.width(), soft.height());
  std::transform(soft.data().begin(), soft.data().end(), out.data().begin(),
                 [tau](float p) { return static_cast<uint8_t>(p >= tau ? 1 : 0); });
  return out;
}

SoftMask to_soft(const Mask& mask) {
  SoftMask out(mask.width(), mask.height());
  std::transform(mask.data().begin(), mask.data().end(), out.data().begin(),
                 [](uint8_t v) { return v ? 1.0f : 0.0f; });
  return out;
}

Box bounding_box(const Mask& mask) {
  Box b{mask.width(), mask.height(), 0, 0};
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.at(y, x)) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  if (b.empty()) return Box{};
  return b;
}

Mask label_to_mask(const LabelMap& labels, int identity) {
  Mask out(labels.width(), labels.height());
  std::transform(labels.data().begin(), labels.data().end(), out.data().begin(),
                 [identity](uint8_t v) { return static_cast<uint8_t>(v == identity); });
  return out;
}

int count_foreground(const Mask& mask) {
  return static_cast<int>(std::count_if(mask.data().begin(), mask.data().end(),
                                        [](uint8_t v) { return v != 0; }));
}

bool frame_values_valid(const Frame& frame) {
  return std::all_of(frame.data().begin(), frame.data().end(),
                     [](float v) { return v >= 0.0f && v <= 1.0f; });
}

std::vector<Violation> validate_sequence(const Sequence& seq) {
  std::vector<Violation> out;
  auto add = [&out](ViolationKind k, std::string msg) { out.push_back({k, std::move(msg)}); };

  const size_t n = seq.frames.size();
  if (n == 0) {
    add(ViolationKind::FlowCount, "flow count: sequence has no frames");
    return out;
  }
  if (seq.flows.size() + 1 != n)
    add(ViolationKind::FlowCount, "flow count: " + std::to_string(seq.flows.size()) +
                                      " flows for " + std::to_string(n) + " frames");

  const int w = seq.frames[0].width(), h = seq.frames[0].height();
  for (size_t t = 0; t < n; ++t) {
    if (!seq.frames[t].same_size(w, h))
      add(ViolationKind::RasterSize, "raster size: frame " + std::to_string(t));
    if (!frame_values_valid(seq.frames[t]))
      add(ViolationKind::FrameValues, "frame values outside [0,1] at frame " + std::to_string(t));
  }
  for (size_t t = 0; t < seq.flows.size(); ++t)
    if (!seq.flows[t].same_size(w, h))
      add(ViolationKind::RasterSize, "raster size: flow " + std::to_string(t));

  if (!seq.instances.empty() && seq.instances.size() != n)
    add(ViolationKind::InstanceCount, "instance lists for " +
                                          std::to_string(seq.instances.size()) +
                                          " frames, expected " + std::to_string(n));

  const bool first_person = seq.camera_kind == CameraKind::FirstPerson;
  if (first_person && !seq.wearer_identity)
    add(ViolationKind::WearerMissing, "first-person sequence without wearer identity");

  for (size_t t = 0; t < seq.instances.size(); ++t) {
    for (const auto& inst : seq.instances[t]) {
      if (inst.identity < 1)
        add(ViolationKind::BadIdentity, "identity " + std::to_string(inst.identity) +
                                            " at frame " + std::to_string(t));
      if (inst.frame_index != static_cast<int>(t) || inst.frame_index >= static_cast<int>(n))
        add(ViolationKind::BadFrameIndex, "instance frame index " +
                                              std::to_string(inst.frame_index) +
                                              " stored at frame " + std::to_string(t));
      if (first_person && seq.wearer_identity && inst.identity == *seq.wearer_identity)
        add(ViolationKind::WearerVisible, "wearer visible in own view at frame " +
                                              std::to_string(t));
      if (inst.gt_mask) {
        if (!inst.gt_mask->same_size(w, h))
          add(ViolationKind::RasterSize, "raster size: mask of identity " +
                                             std::to_string(inst.identity));
        const auto& d = inst.gt_mask->data();
        if (std::any_of(d.begin(), d.end(), [](uint8_t v) { return v > 1; }))
          add(ViolationKind::MaskValues, "mask values outside {0,1}");
      }
    }
  }
  return out;
}

}  // namespace coview
