#include "coview/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace coview {
namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

int uniform(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

constexpr std::array<std::array<uint8_t, 3>, 8> kPalette{{
    {230, 25, 45},    // red
    {60, 180, 75},    // green
    {255, 225, 25},   // yellow
    {0, 130, 200},    // blue
    {245, 130, 48},   // orange
    {145, 30, 180},   // purple
    {70, 240, 240},   // cyan
    {240, 50, 230},   // magenta
}};
constexpr std::array<uint8_t, 3> kDark{20, 20, 20};
constexpr std::array<uint8_t, 3> kLight{245, 245, 245};

bool sprite_covers(SpriteShape shape, int w, int h, int lx, int ly) {
  if (lx < 0 || ly < 0 || lx >= w || ly >= h) return false;
  if (shape == SpriteShape::Rectangle) return true;
  const double rx = w / 2.0, ry = h / 2.0;
  const double dx = (lx + 0.5 - rx) / rx, dy = (ly + 0.5 - ry) / ry;
  return dx * dx + dy * dy <= 1.0;
}

std::array<uint8_t, 3> texture_color(const Texture& tex, int lx, int ly) {
  const int p = std::max(1, tex.period);
  int band = 0;
  switch (tex.orientation) {
    case 0: band = ly / p; break;
    case 1: band = lx / p; break;
    case 2: band = (lx + ly) / p; break;
    default: band = lx / p + ly / p; break;
  }
  return (band % 2 == 0) ? tex.color_a : tex.color_b;
}

std::vector<Point> walk(Point start, const std::vector<MotionSegment>& segs, int num_frames) {
  std::vector<Point> track{start};
  Point p = start;
  for (const auto& s : segs)
    for (int i = 0; i < s.frames && static_cast<int>(track.size()) < num_frames; ++i) {
      p.x += s.dx;
      p.y += s.dy;
      track.push_back(p);
    }
  while (static_cast<int>(track.size()) < num_frames) track.push_back(p);
  return track;
}

// Random piecewise-linear walk reflected inside [lo, hi] (top-left coordinates).
std::vector<Point> random_walk(std::mt19937_64& rng, Point start, Point lo, Point hi,
                               int num_frames, int max_speed, bool allow_still) {
  std::vector<Point> track{start};
  Point p = start;
  while (static_cast<int>(track.size()) < num_frames) {
    const int len = uniform(rng, 4, 8);
    int dx = 0, dy = 0;
    do {
      dx = uniform(rng, -max_speed, max_speed);
      dy = uniform(rng, -max_speed, max_speed);
    } while (!allow_still && dx == 0 && dy == 0);
    for (int i = 0; i < len && static_cast<int>(track.size()) < num_frames; ++i) {
      if (p.x + dx < lo.x || p.x + dx > hi.x) dx = -dx;
      if (p.y + dy < lo.y || p.y + dy > hi.y) dy = -dy;
      if (p.x + dx < lo.x || p.x + dx > hi.x) dx = 0;
      if (p.y + dy < lo.y || p.y + dy > hi.y) dy = 0;
      p.x += dx;
      p.y += dy;
      track.push_back(p);
    }
  }
  return track;
}

// Smooth value noise over the world, quantised to 8-bit levels.
std::vector<std::array<uint8_t, 3>> make_background(uint64_t seed, int W, int H) {
  std::mt19937_64 rng(seed);
  constexpr int kCell = 16;
  const int gw = W / kCell + 2, gh = H / kCell + 2;
  std::uniform_real_distribution<double> tone(0.25, 0.65);
  std::vector<std::array<double, 3>> grid(size_t(gw) * gh);
  for (auto& g : grid)
    for (auto& c : g) c = tone(rng);
  std::uniform_real_distribution<double> grain(-0.04, 0.04);
  std::vector<std::array<uint8_t, 3>> out(size_t(W) * H);
  for (int y = 0; y < H; ++y) {
    const double fy = double(y) / kCell;
    const int gy = static_cast<int>(fy);
    const double ty = fy - gy, sy = ty * ty * (3 - 2 * ty);
    for (int x = 0; x < W; ++x) {
      const double fx = double(x) / kCell;
      const int gx = static_cast<int>(fx);
      const double tx = fx - gx, sx = tx * tx * (3 - 2 * tx);
      const auto& a = grid[size_t(gy) * gw + gx];
      const auto& b = grid[size_t(gy) * gw + gx + 1];
      const auto& c = grid[size_t(gy + 1) * gw + gx];
      const auto& d = grid[size_t(gy + 1) * gw + gx + 1];
      const double g = grain(rng);
      for (int ch = 0; ch < 3; ++ch) {
        const double top = a[ch] + (b[ch] - a[ch]) * sx;
        const double bot = c[ch] + (d[ch] - c[ch]) * sx;
        const double v = std::clamp(top + (bot - top) * sy + g, 0.0, 1.0);
        out[size_t(y) * W + x][ch] = static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

class Renderer {
 public:
  explicit Renderer(const SceneSpec& s)
      : s_(s), bg_(make_background(s.background_seed, s.world_width, s.world_height)) {
    require(s.resolved, ErrorKind::Parameter, "render: scene spec is not resolved");
  }

  RenderedView render(int view_id, int t) const {
    require(view_id >= 0 && view_id < static_cast<int>(s_.rigs.size()), ErrorKind::Lookup,
            "unknown view id " + std::to_string(view_id));
    require(t >= 0 && t < s_.num_frames, ErrorKind::Parameter,
            "frame index " + std::to_string(t) + " outside [0," + std::to_string(s_.num_frames) +
                ")");
    const auto& rig = s_.rigs[view_id];
    const int W = s_.view_width, H = s_.view_height;
    const Point cam = rig.track[t];
    const bool has_next = t + 1 < s_.num_frames;
    const Point cam_next = has_next ? rig.track[t + 1] : cam;

    RenderedView out{Frame(W, H), LabelMap(W, H), {}, std::nullopt};
    if (has_next) out.flow = FlowField(W, H);
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const int wx = cam.x + x, wy = cam.y + y;
        std::array<uint8_t, 3> rgb = background(wx, wy);
        int label = 0;
        Point disp{0, 0};
        for (const auto& a : s_.agents) {
          if (rig.kind == CameraKind::FirstPerson && a.identity == rig.carried_identity) continue;
          const Point p = a.track[t];
          const int lx = wx - p.x, ly = wy - p.y;
          if (!sprite_covers(*a.shape, *a.width, *a.height, lx, ly)) continue;
          rgb = texture_color(*a.texture, lx, ly);
          label = a.identity;
          if (has_next) disp = {a.track[t + 1].x - p.x, a.track[t + 1].y - p.y};
        }
        for (int c = 0; c < 3; ++c) out.frame.at(c, y, x) = rgb[c] / 255.0f;
        out.labels.at(y, x) = static_cast<uint8_t>(label);
        if (has_next) {
          out.flow->at(0, y, x) = float(disp.x - (cam_next.x - cam.x));
          out.flow->at(1, y, x) = float(disp.y - (cam_next.y - cam.y));
        }
      }
    }
    std::set<int> present(out.labels.data().begin(), out.labels.data().end());
    present.erase(0);
    for (int id : present) out.masks.emplace(id, label_to_mask(out.labels, id));
    return out;
  }

 private:
  std::array<uint8_t, 3> background(int wx, int wy) const {
    wx = std::clamp(wx, 0, s_.world_width - 1);
    wy = std::clamp(wy, 0, s_.world_height - 1);
    return bg_[size_t(wy) * s_.world_width + wx];
  }

  const SceneSpec& s_;
  std::vector<std::array<uint8_t, 3>> bg_;
};

SceneSpec resolve_once(const SceneSpec& config, uint64_t seed) {
  SceneSpec s = config;
  std::mt19937_64 rng(seed);
  s.background_seed = rng();

  // Distinct textures: primary colour from a shuffled palette, secondary dark or light.
  std::vector<int> order(kPalette.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);

  s.agents.resize(s.num_agents);
  const int lo_x = s.activity_margin, lo_y = s.activity_margin;
  for (int i = 0; i < s.num_agents; ++i) {
    AgentSpec& a = s.agents[i];
    if (a.identity == 0) a.identity = i + 1;
    if (!a.shape) a.shape = uniform(rng, 0, 1) ? SpriteShape::Ellipse : SpriteShape::Rectangle;
    if (!a.width) a.width = uniform(rng, 14, 18);
    if (!a.height) a.height = uniform(rng, 18, 24);
    if (!a.texture) {
      Texture t;
      t.color_a = kPalette[order[i % order.size()]];
      t.color_b = (i / static_cast<int>(order.size())) % 2 == 0 ? kDark : kLight;
      t.period = uniform(rng, 3, 5);
      t.orientation = (i + uniform(rng, 0, 3)) % 4;
      a.texture = t;
    }
    const Point lo{lo_x, lo_y};
    const Point hi{std::max(lo_x, s.world_width - s.activity_margin - *a.width),
                   std::max(lo_y, s.world_height - s.activity_margin - *a.height)};
    if (!a.start) a.start = Point{uniform(rng, lo.x, hi.x), uniform(rng, lo.y, hi.y)};
    a.track = a.segments.empty() ? random_walk(rng, *a.start, lo, hi, s.num_frames, s.max_speed, false)
                                 : walk(*a.start, a.segments, s.num_frames);
  }
  for (int i = 0; i < s.num_agents; ++i)
    for (int j = i + 1; j < s.num_agents; ++j) {
      const auto& a = s.agents[i];
      const auto& b = s.agents[j];
      require(a.identity != b.identity, ErrorKind::Generation,
              "duplicate agent identity " + std::to_string(a.identity));
      require(!(*a.texture == *b.texture), ErrorKind::Generation,
              "agents " + std::to_string(a.identity) + " and " + std::to_string(b.identity) +
                  " share a texture");
    }

  if (s.rigs.empty()) s.rigs.push_back(RigSpec{});
  const int max_x = s.world_width - s.view_width, max_y = s.world_height - s.view_height;
  for (size_t r = 0; r < s.rigs.size(); ++r) {
    RigSpec& rig = s.rigs[r];
    rig.track.clear();
    if (rig.kind == CameraKind::FirstPerson) {
      const auto it = std::find_if(s.agents.begin(), s.agents.end(), [&](const AgentSpec& a) {
        return a.identity == rig.carried_identity;
      });
      require(it != s.agents.end(), ErrorKind::Generation,
              "first-person rig " + std::to_string(r) + " carried by unknown agent " +
                  std::to_string(rig.carried_identity));
      for (int t = 0; t < s.num_frames; ++t) {
        Point p = it->track[t];
        p.x += *it->width / 2 - s.view_width / 2;
        p.y += *it->height / 2 - s.view_height / 2;
        if (rig.jitter) {
          p.x += uniform(rng, -1, 1);
          p.y += uniform(rng, -1, 1);
        }
        rig.track.push_back(p);
      }
    } else {
      const Point start = rig.start.value_or(Point{max_x / 2, max_y / 2});
      if (!rig.segments.empty())
        rig.track = walk(start, rig.segments, s.num_frames);
      else if (rig.random_pan)
        rig.track = random_walk(rng, start, {0, 0}, {max_x, max_y}, s.num_frames, 1, true);
      else
        rig.track.assign(s.num_frames, start);
    }
    for (int t = 0; t < s.num_frames; ++t) {
      const Point p = rig.track[t];
      require(p.x >= 0 && p.y >= 0 && p.x <= max_x && p.y <= max_y, ErrorKind::Generation,
              "viewport of rig " + std::to_string(r) + " leaves the world at frame " +
                  std::to_string(t));
    }
  }
  s.resolved = true;
  return s;
}

bool shared_identity_visible(const SceneSpec& s) {
  const Renderer renderer(s);
  std::map<int, std::set<int>> views_per_id;
  for (size_t v = 0; v < s.rigs.size(); ++v)
    for (const auto& [id, mask] : renderer.render(static_cast<int>(v), 0).masks)
      views_per_id[id].insert(static_cast<int>(v));
  return std::any_of(views_per_id.begin(), views_per_id.end(),
                     [](const auto& kv) { return kv.second.size() >= 2; });
}

}  // namespace

const AgentSpec& SceneSpec::agent(int identity) const {
  for (const auto& a : agents)
    if (a.identity == identity) return a;
  fail(ErrorKind::Lookup, "unknown agent identity " + std::to_string(identity));
}

std::map<int, int> SceneSpec::wearer_map() const {
  std::map<int, int> out;
  for (size_t r = 0; r < rigs.size(); ++r)
    if (rigs[r].kind == CameraKind::FirstPerson)
      out[static_cast<int>(r)] = rigs[r].carried_identity;
  return out;
}

SceneSpec default_scene_spec(uint64_t seed, int num_agents, int first_person, int third_person,
                             int num_frames) {
  SceneSpec s;
  s.seed = seed;
  s.num_agents = num_agents;
  s.num_frames = num_frames;
  for (int i = 0; i < first_person; ++i) {
    RigSpec r;
    r.kind = CameraKind::FirstPerson;
    r.carried_identity = i + 1;
    r.jitter = true;
    s.rigs.push_back(r);
  }
  for (int i = 0; i < third_person; ++i) s.rigs.push_back(RigSpec{});
  return s;
}

SceneSpec generate_scene(const SceneSpec& config) {
  require(config.num_agents >= 1, ErrorKind::Config, "scene needs at least one agent");
  require(config.num_frames >= 2, ErrorKind::Config, "scene needs at least two frames");
  require(config.num_agents <= 255, ErrorKind::Config, "at most 255 agents");
  require(config.max_speed >= 1, ErrorKind::Config, "max speed must be >= 1");
  require(config.activity_margin >= 0, ErrorKind::Config, "activity margin must be >= 0");
  require(static_cast<int>(config.agents.size()) <= config.num_agents, ErrorKind::Config,
          "more explicit agents than num_agents");
  require(config.view_width > 0 && config.view_height > 0 &&
              config.view_width <= config.world_width &&
              config.view_height <= config.world_height,
          ErrorKind::Config, "viewport must fit inside the world");

  // Fully random layouts are redrawn until some identity is seen by two views.
  const bool explicit_agents = std::any_of(config.agents.begin(), config.agents.end(),
                                           [](const AgentSpec& a) { return a.start.has_value(); });
  const bool check_shared = !explicit_agents && config.rigs.size() >= 2;
  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    SceneSpec s = resolve_once(config, attempt == 0 ? config.seed
                                                    : splitmix64(config.seed + attempt));
    if (!check_shared || shared_identity_visible(s)) return s;
  }
  fail(ErrorKind::Generation, "no layout with an identity visible from two views after " +
                                  std::to_string(kAttempts) + " attempts");
}

RenderedView render_view(const SceneSpec& scene, int view_id, int t) {
  return Renderer(scene).render(view_id, t);
}

std::vector<Sequence> render_scene(const SceneSpec& scene, int scene_id) {
  const Renderer renderer(scene);
  std::vector<Sequence> views;
  for (size_t v = 0; v < scene.rigs.size(); ++v) {
    Sequence seq;
    seq.view_id = static_cast<int>(v);
    seq.camera_kind = scene.rigs[v].kind;
    if (seq.camera_kind == CameraKind::FirstPerson)
      seq.wearer_identity = scene.rigs[v].carried_identity;
    for (int t = 0; t < scene.num_frames; ++t) {
      RenderedView rv = renderer.render(static_cast<int>(v), t);
      seq.frames.push_back(std::move(rv.frame));
      if (rv.flow) seq.flows.push_back(std::move(*rv.flow));
      std::vector<PersonInstance> insts;
      for (auto& [id, mask] : rv.masks)
        insts.push_back({scene_id, static_cast<int>(v), t, id, std::move(mask)});
      seq.instances.push_back(std::move(insts));
    }
    views.push_back(std::move(seq));
  }
  return views;
}

// ------------------------------------------------------------------ json

namespace {

nlohmann::json point_json(const Point& p) { return {p.x, p.y}; }
Point point_from(const nlohmann::json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

nlohmann::json segments_json(const std::vector<MotionSegment>& segs) {
  auto arr = nlohmann::json::array();
  for (const auto& s : segs) arr.push_back({{"frames", s.frames}, {"dx", s.dx}, {"dy", s.dy}});
  return arr;
}

std::vector<MotionSegment> segments_from(const nlohmann::json& j) {
  std::vector<MotionSegment> out;
  for (const auto& s : j)
    out.push_back({s.value("frames", 1), s.value("dx", 0), s.value("dy", 0)});
  return out;
}

nlohmann::json track_json(const std::vector<Point>& track) {
  auto arr = nlohmann::json::array();
  for (const auto& p : track) arr.push_back(point_json(p));
  return arr;
}

std::vector<Point> track_from(const nlohmann::json& j) {
  std::vector<Point> out;
  for (const auto& p : j) out.push_back(point_from(p));
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const SceneSpec& s) {
  j = nlohmann::json{{"seed", s.seed},
                     {"world_width", s.world_width},
                     {"world_height", s.world_height},
                     {"view_width", s.view_width},
                     {"view_height", s.view_height},
                     {"num_frames", s.num_frames},
                     {"num_agents", s.num_agents},
                     {"activity_margin", s.activity_margin},
                     {"max_speed", s.max_speed},
                     {"resolved", s.resolved},
                     {"background_seed", s.background_seed}};
  auto agents = nlohmann::json::array();
  for (const auto& a : s.agents) {
    nlohmann::json ja{{"identity", a.identity}};
    if (a.shape) ja["shape"] = *a.shape == SpriteShape::Ellipse ? "ellipse" : "rectangle";
    if (a.width) ja["width"] = *a.width;
    if (a.height) ja["height"] = *a.height;
    if (a.start) ja["start"] = point_json(*a.start);
    if (!a.segments.empty()) ja["segments"] = segments_json(a.segments);
    if (a.texture)
      ja["texture"] = {{"color_a", a.texture->color_a},
                       {"color_b", a.texture->color_b},
                       {"period", a.texture->period},
                       {"orientation", a.texture->orientation}};
    if (!a.track.empty()) ja["track"] = track_json(a.track);
    agents.push_back(std::move(ja));
  }
  j["agents"] = std::move(agents);
  auto rigs = nlohmann::json::array();
  for (const auto& r : s.rigs) {
    nlohmann::json jr{{"kind", to_string(r.kind)}, {"jitter", r.jitter},
                      {"random_pan", r.random_pan}};
    if (r.kind == CameraKind::FirstPerson) jr["carried_identity"] = r.carried_identity;
    if (r.start) jr["start"] = point_json(*r.start);
    if (!r.segments.empty()) jr["segments"] = segments_json(r.segments);
    if (!r.track.empty()) jr["track"] = track_json(r.track);
    rigs.push_back(std::move(jr));
  }
  j["rigs"] = std::move(rigs);
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s = SceneSpec{};
  s.seed = j.value("seed", uint64_t{0});
  s.world_width = j.value("world_width", s.world_width);
  s.world_height = j.value("world_height", s.world_height);
  s.view_width = j.value("view_width", s.view_width);
  s.view_height = j.value("view_height", s.view_height);
  s.num_frames = j.value("num_frames", s.num_frames);
  s.num_agents = j.value("num_agents", s.num_agents);
  s.activity_margin = j.value("activity_margin", s.activity_margin);
  s.max_speed = j.value("max_speed", s.max_speed);
  s.resolved = j.value("resolved", false);
  s.background_seed = j.value("background_seed", uint64_t{0});
  if (j.contains("agents"))
    for (const auto& ja : j.at("agents")) {
      AgentSpec a;
      a.identity = ja.value("identity", 0);
      if (ja.contains("shape"))
        a.shape = ja.at("shape").get<std::string>() == "ellipse" ? SpriteShape::Ellipse
                                                                 : SpriteShape::Rectangle;
      if (ja.contains("width")) a.width = ja.at("width").get<int>();
      if (ja.contains("height")) a.height = ja.at("height").get<int>();
      if (ja.contains("start")) a.start = point_from(ja.at("start"));
      if (ja.contains("segments")) a.segments = segments_from(ja.at("segments"));
      if (ja.contains("texture")) {
        const auto& jt = ja.at("texture");
        Texture t;
        t.color_a = jt.at("color_a").get<std::array<uint8_t, 3>>();
        t.color_b = jt.at("color_b").get<std::array<uint8_t, 3>>();
        t.period = jt.value("period", 4);
        t.orientation = jt.value("orientation", 0);
        a.texture = t;
      }
      if (ja.contains("track")) a.track = track_from(ja.at("track"));
      s.agents.push_back(std::move(a));
    }
  if (j.contains("rigs"))
    for (const auto& jr : j.at("rigs")) {
      RigSpec r;
      r.kind = camera_kind_from_string(jr.value("kind", std::string("third_person")));
      r.carried_identity = jr.value("carried_identity", 0);
      r.jitter = jr.value("jitter", false);
      r.random_pan = jr.value("random_pan", false);
      if (jr.contains("start")) r.start = point_from(jr.at("start"));
      if (jr.contains("segments")) r.segments = segments_from(jr.at("segments"));
      if (jr.contains("track")) r.track = track_from(jr.at("track"));
      s.rigs.push_back(std::move(r));
    }
}

}  // namespace coview
