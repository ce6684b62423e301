#pragma once

// Deterministic synthetic multi-view scenes: textured convex sprites moving
// by integer steps over a smooth noise background, observed by translating
// third-person cameras and by first-person cameras carried by agents.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <json.hpp>

#include "coview/core.hpp"

namespace coview {

struct Point {
  int x = 0, y = 0;
  bool operator==(const Point&) const = default;
};

// Constant velocity held for `frames` transitions.
struct MotionSegment {
  int frames = 1;
  int dx = 0, dy = 0;
  bool operator==(const MotionSegment&) const = default;
};

enum class SpriteShape { Rectangle, Ellipse };

struct Texture {
  std::array<uint8_t, 3> color_a{255, 0, 0};
  std::array<uint8_t, 3> color_b{0, 0, 255};
  int period = 4;       // stripe period in pixels
  int orientation = 0;  // 0 horizontal, 1 vertical, 2 diagonal, 3 checker
  bool operator==(const Texture&) const = default;
};

struct AgentSpec {
  int identity = 0;  // 0 = assign index + 1
  std::optional<SpriteShape> shape;
  std::optional<int> width, height;
  std::optional<Point> start;              // top-left world position at t = 0
  std::vector<MotionSegment> segments;     // empty = random walk
  std::optional<Texture> texture;

  // Filled by generate_scene.
  std::vector<Point> track;  // top-left per frame
  bool operator==(const AgentSpec&) const = default;
};

struct RigSpec {
  CameraKind kind = CameraKind::ThirdPerson;
  int carried_identity = 0;            // first-person only
  std::optional<Point> start;          // viewport top-left at t = 0 (third-person)
  std::vector<MotionSegment> segments; // third-person pan; empty = static
  bool jitter = false;                 // first-person +-1 px shake
  bool random_pan = false;             // third-person: draw a slow random pan

  std::vector<Point> track;  // viewport top-left per frame, filled by generate_scene
  bool operator==(const RigSpec&) const = default;
};

struct SceneSpec {
  uint64_t seed = 0;
  int world_width = 128;
  int world_height = 128;
  int view_width = 64;
  int view_height = 64;
  int num_frames = 20;
  int num_agents = 3;
  int activity_margin = 36;  // random walks stay this far from the world border
  int max_speed = 1;         // per-axis step bound of random walks, px/frame
  std::vector<AgentSpec> agents;  // explicit agents; missing ones are drawn randomly
  std::vector<RigSpec> rigs;
  bool resolved = false;

  // Seed-derived background parameters (filled by generate_scene).
  uint64_t background_seed = 0;

  const AgentSpec& agent(int identity) const;
  std::map<int, int> wearer_map() const;  // view id -> wearer identity
  bool operator==(const SceneSpec&) const = default;
};

// Default rig layout: `first_person` carried cameras (agents 1..n) plus
// `third_person` static cameras centred on the world.
SceneSpec default_scene_spec(uint64_t seed, int num_agents = 3, int first_person = 2,
                             int third_person = 1, int num_frames = 20);

// Resolves every random choice (a pure function of the spec and its seed).
SceneSpec generate_scene(const SceneSpec& config);

struct RenderedView {
  Frame frame;
  LabelMap labels;                 // identity per pixel (0 = background)
  std::map<int, Mask> masks;       // visible pixels per identity present
  std::optional<FlowField> flow;   // to t+1, absent at the last frame
};

RenderedView render_view(const SceneSpec& scene, int view_id, int t);

// All views as sequences (instances carry ground-truth masks).
std::vector<Sequence> render_scene(const SceneSpec& scene, int scene_id = 0);

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

}  // namespace coview
