#include <doctest.h>

#include <fstream>
#include <set>

#include "coview/dataset.hpp"

using namespace coview;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("coview_test_" + name);
  fs::remove_all(p);
  return p;
}

DatasetConfig tiny() {
  DatasetConfig c;
  c.seed = 5;
  c.num_scenes = 2;
  c.train_scenes = 1;
  c.num_frames = 4;
  return c;
}

// Two static third-person views both seeing agents 1 and 2 at one frame.
SceneSpec two_view_scene() {
  SceneSpec s;
  s.seed = 9;
  s.num_frames = 2;
  s.num_agents = 2;
  for (int i = 0; i < 2; ++i) {
    AgentSpec a;
    a.start = Point{40 + 24 * i, 50};
    a.segments = {MotionSegment{1, 0, 0}};
    s.agents.push_back(a);
  }
  RigSpec r0, r1;
  r0.start = Point{32, 32};
  r1.start = Point{34, 30};
  s.rigs = {r0, r1};
  return generate_scene(s);
}

}  // namespace

TEST_CASE("export then import round-trips exactly") {
  const auto cfg = tiny();
  const auto specs = build_scene_specs(cfg);
  const auto splits = default_splits(cfg, specs.size());
  const auto root = scratch("roundtrip");
  export_dataset(specs, splits, root, cfg.seed);
  const Dataset loaded = import_dataset(root);
  const Dataset mem = make_dataset(specs, splits, cfg.seed);
  REQUIRE(loaded.scenes.size() == mem.scenes.size());
  for (size_t s = 0; s < mem.scenes.size(); ++s) {
    CHECK(loaded.scenes[s].split == mem.scenes[s].split);
    REQUIRE(loaded.scenes[s].views.size() == mem.scenes[s].views.size());
    for (size_t v = 0; v < mem.scenes[s].views.size(); ++v) {
      const auto& a = loaded.scenes[s].views[v];
      const auto& b = mem.scenes[s].views[v];
      CHECK(a.frames == b.frames);
      CHECK(a.flows == b.flows);
      CHECK(a.wearer_identity == b.wearer_identity);
      for (int t = 0; t < a.num_frames(); ++t) {
        REQUIRE(a.instances[t].size() == b.instances[t].size());
        for (size_t i = 0; i < a.instances[t].size(); ++i) {
          CHECK(a.instances[t][i].identity == b.instances[t][i].identity);
          CHECK(*a.instances[t][i].gt_mask == *b.instances[t][i].gt_mask);
        }
      }
    }
  }
  fs::remove_all(root);
}

TEST_CASE("repeated export gives identical manifests") {
  const auto cfg = tiny();
  const auto r1 = scratch("m1"), r2 = scratch("m2");
  const auto specs = build_scene_specs(cfg);
  export_dataset(specs, default_splits(cfg, specs.size()), r1, cfg.seed);
  export_dataset(build_scene_specs(cfg), default_splits(cfg, specs.size()), r2, cfg.seed);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  CHECK(slurp(r1 / "manifest.json") == slurp(r2 / "manifest.json"));
  fs::remove_all(r1);
  fs::remove_all(r2);
}

TEST_CASE("corrupt or missing files are integrity errors") {
  const auto cfg = tiny();
  const auto specs = build_scene_specs(cfg);
  const auto root = scratch("corrupt");
  const auto m = export_dataset(specs, default_splits(cfg, specs.size()), root);
  {
    std::fstream f(root / m.scenes[0].views[0].flows[0], std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  try {
    import_dataset(root);
    FAIL("expected integrity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Integrity);
  }
  fs::remove(root / m.scenes[0].views[0].frames[1]);
  CHECK_THROWS_AS(import_dataset(root), Error);
  fs::remove_all(root);
  CHECK_THROWS_AS(import_dataset(root), Error);
}

TEST_CASE("third-third pair enumeration matches the exhaustive oracle") {
  const auto spec = two_view_scene();
  const Dataset d = make_dataset({spec}, {Split::Train});
  std::set<std::pair<int, int>> present0, present1;
  for (const auto& inst : d.scenes[0].views[0].instances[0])
    for (const auto& other : d.scenes[0].views[1].instances[0])
      present0.insert({inst.identity, other.identity});
  REQUIRE(present0.size() == 4);

  const auto pairs = sample_pairs(d, Problem::ThirdThird, 1.0, 1);
  std::set<std::tuple<int, int, int, int>> pos;
  int n_neg = 0;
  for (const auto& p : pairs) {
    const auto& b = std::get<InstanceRef>(p.side_b);
    CHECK(p.side_a.view != b.view);
    CHECK(p.side_a.frame == b.frame);
    CHECK(p.label == (p.side_a.identity == b.identity ? 1 : 0));
    if (p.label) pos.insert({p.side_a.frame, p.side_a.identity, b.frame, b.identity});
    else ++n_neg;
  }
  // Two frames, identities 1 and 2 in both views.
  CHECK(pos.size() == 4);
  CHECK(n_neg == 4);
}

TEST_CASE("negative ratio arithmetic") {
  const auto cfg = tiny();
  const Dataset d = make_dataset(build_scene_specs(cfg), default_splits(cfg, 2));
  const auto all = sample_pairs(d, Problem::ThirdThird, 3.0, 1, std::nullopt);
  size_t p = 0, n = 0;
  for (const auto& x : all) (x.label ? p : n)++;
  CHECK(p > 0);
  CHECK(n == 3 * p);
  const auto again = sample_pairs(d, Problem::ThirdThird, 3.0, 1, std::nullopt);
  REQUIRE(again.size() == all.size());
  for (size_t i = 0; i < all.size(); ++i) CHECK(again[i].side_a == all[i].side_a);
}

TEST_CASE("third-first with an unseen wearer yields negatives only") {
  SceneSpec s;
  s.seed = 3;
  s.num_frames = 2;
  s.num_agents = 3;
  for (int i = 0; i < 3; ++i) {
    AgentSpec a;
    a.start = i == 2 ? Point{80, 80} : Point{30 + 16 * i, 30};
    a.segments = {MotionSegment{1, 0, 0}};
    s.agents.push_back(a);
  }
  RigSpec fp;
  fp.kind = CameraKind::FirstPerson;
  fp.carried_identity = 3;  // outside the static view
  RigSpec fp1;
  fp1.kind = CameraKind::FirstPerson;
  fp1.carried_identity = 1;
  RigSpec tp;
  tp.start = Point{0, 0};
  s.rigs = {fp, fp1, tp};
  const Dataset d = make_dataset({generate_scene(s)}, {Split::Train});
  const auto pairs = sample_pairs(d, Problem::ThirdFirst, 10.0, 2);
  for (const auto& p : pairs) {
    const auto& cam = std::get<CameraRef>(p.side_b);
    if (cam.view == 0 && p.side_a.view == 2) CHECK(p.label == 0);
  }
}

TEST_CASE("no positives is an empty-data error") {
  SceneSpec s;
  s.seed = 1;
  s.num_frames = 2;
  s.num_agents = 1;
  AgentSpec a;
  a.start = Point{50, 50};
  a.segments = {MotionSegment{1, 0, 0}};
  s.agents = {a};
  s.rigs = {RigSpec{}};
  const Dataset d = make_dataset({generate_scene(s)}, {Split::Train});
  try {
    sample_pairs(d, Problem::ThirdThird, 3.0, 1);
    FAIL("expected empty-data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyData);
  }
}
