#include "coview/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "coview/image_io.hpp"

namespace coview {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Split s) { return s == Split::Test ? "test" : "train"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  fail(ErrorKind::Config, "unknown split '" + s + "'");
}

void DatasetConfig::validate() const {
  require(num_scenes >= 1 || !scenes.empty(), ErrorKind::Config, "dataset needs scenes");
  require(train_scenes >= 0, ErrorKind::Config, "train_scenes must be >= 0");
  require(num_frames >= 2, ErrorKind::Config, "num_frames must be >= 2");
  require(num_agents >= 1, ErrorKind::Config, "num_agents must be >= 1");
  require(first_person_rigs >= 0 && third_person_rigs >= 0 &&
              first_person_rigs + third_person_rigs >= 1,
          ErrorKind::Config, "need at least one camera rig");
  require(first_person_rigs <= num_agents, ErrorKind::Config,
          "more first-person rigs than agents");
}

void to_json(json& j, const DatasetConfig& c) {
  j = json{{"seed", c.seed},
           {"num_scenes", c.num_scenes},
           {"train_scenes", c.train_scenes},
           {"num_frames", c.num_frames},
           {"num_agents", c.num_agents},
           {"first_person_rigs", c.first_person_rigs},
           {"third_person_rigs", c.third_person_rigs},
           {"view_width", c.view_width},
           {"view_height", c.view_height},
           {"world_width", c.world_width},
           {"world_height", c.world_height},
           {"max_speed", c.max_speed},
           {"activity_margin", c.activity_margin},
           {"jitter", c.jitter},
           {"third_person_pan", c.third_person_pan}};
  if (!c.scenes.empty()) j["scenes"] = c.scenes;
}

void from_json(const json& j, DatasetConfig& c) {
  c = DatasetConfig{};
  c.seed = j.value("seed", c.seed);
  c.num_scenes = j.value("num_scenes", c.num_scenes);
  c.train_scenes = j.value("train_scenes", c.train_scenes);
  c.num_frames = j.value("num_frames", c.num_frames);
  c.num_agents = j.value("num_agents", c.num_agents);
  c.first_person_rigs = j.value("first_person_rigs", c.first_person_rigs);
  c.third_person_rigs = j.value("third_person_rigs", c.third_person_rigs);
  c.view_width = j.value("view_width", c.view_width);
  c.view_height = j.value("view_height", c.view_height);
  c.world_width = j.value("world_width", c.world_width);
  c.world_height = j.value("world_height", c.world_height);
  c.max_speed = j.value("max_speed", c.max_speed);
  c.activity_margin = j.value("activity_margin", c.activity_margin);
  c.jitter = j.value("jitter", c.jitter);
  c.third_person_pan = j.value("third_person_pan", c.third_person_pan);
  if (j.contains("scenes")) c.scenes = j.at("scenes").get<std::vector<SceneSpec>>();
}

// ------------------------------------------------------------- manifest

json DatasetManifest::to_json() const {
  json j{{"schema_version", schema_version}, {"seed", seed}};
  auto arr = json::array();
  for (const auto& s : scenes) {
    json js{{"id", s.id},         {"name", s.name},
            {"split", coview::to_string(s.split)},
            {"width", s.width},   {"height", s.height},
            {"num_frames", s.num_frames},
            {"identities", s.identities},
            {"spec", s.spec}};
    json wearers = json::object();
    auto views = json::array();
    for (const auto& v : s.views) {
      json jv{{"id", v.id}, {"kind", coview::to_string(v.kind)},
              {"frames", v.frames}, {"masks", v.masks}, {"flows", v.flows}};
      if (v.wearer) {
        jv["wearer"] = *v.wearer;
        wearers[std::to_string(v.id)] = *v.wearer;
      }
      views.push_back(std::move(jv));
    }
    js["views"] = std::move(views);
    js["wearers"] = std::move(wearers);
    arr.push_back(std::move(js));
  }
  j["scenes"] = std::move(arr);
  return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  DatasetManifest m;
  try {
    m.schema_version = j.at("schema_version").get<int>();
    require(m.schema_version == kManifestSchemaVersion, ErrorKind::Integrity,
            "unsupported manifest schema version " + std::to_string(m.schema_version));
    m.seed = j.value("seed", uint64_t{0});
    for (const auto& js : j.at("scenes")) {
      SceneEntry s;
      s.id = js.at("id").get<int>();
      s.name = js.at("name").get<std::string>();
      s.split = split_from_string(js.at("split").get<std::string>());
      s.width = js.at("width").get<int>();
      s.height = js.at("height").get<int>();
      s.num_frames = js.at("num_frames").get<int>();
      s.identities = js.at("identities").get<std::vector<int>>();
      if (js.contains("spec")) s.spec = js.at("spec").get<SceneSpec>();
      for (const auto& jv : js.at("views")) {
        ViewEntry v;
        v.id = jv.at("id").get<int>();
        v.kind = camera_kind_from_string(jv.at("kind").get<std::string>());
        if (jv.contains("wearer")) v.wearer = jv.at("wearer").get<int>();
        v.frames = jv.at("frames").get<std::vector<std::string>>();
        v.masks = jv.at("masks").get<std::vector<std::string>>();
        v.flows = jv.at("flows").get<std::vector<std::string>>();
        s.views.push_back(std::move(v));
      }
      m.scenes.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Integrity, std::string("malformed manifest: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::Integrity, std::string("malformed manifest: ") + e.what());
  }
  return m;
}

// -------------------------------------------------------------- dataset

const SceneData& Dataset::scene(int id) const {
  for (const auto& s : scenes)
    if (s.id == id) return s;
  fail(ErrorKind::Lookup, "unknown scene id " + std::to_string(id));
}

const Sequence& Dataset::view(int scene_id, int view_id) const {
  const auto& s = scene(scene_id);
  for (const auto& v : s.views)
    if (v.view_id == view_id) return v;
  fail(ErrorKind::Lookup, "unknown view " + std::to_string(view_id) + " in scene " +
                              std::to_string(scene_id));
}

std::vector<int> Dataset::scene_ids(std::optional<Split> split) const {
  std::vector<int> out;
  for (const auto& s : scenes)
    if (!split || s.split == *split) out.push_back(s.id);
  return out;
}

std::vector<SceneSpec> build_scene_specs(const DatasetConfig& c) {
  c.validate();
  std::vector<SceneSpec> out;
  if (!c.scenes.empty()) {
    for (const auto& s : c.scenes) out.push_back(s.resolved ? s : generate_scene(s));
    return out;
  }
  std::mt19937_64 seeder(c.seed);
  for (int i = 0; i < c.num_scenes; ++i) {
    SceneSpec s = default_scene_spec(seeder(), c.num_agents, c.first_person_rigs,
                                     c.third_person_rigs, c.num_frames);
    s.view_width = c.view_width;
    s.view_height = c.view_height;
    s.world_width = c.world_width;
    s.world_height = c.world_height;
    s.max_speed = c.max_speed;
    s.activity_margin = c.activity_margin;
    for (auto& r : s.rigs) {
      if (r.kind == CameraKind::FirstPerson) r.jitter = c.jitter;
      else r.random_pan = c.third_person_pan;
    }
    out.push_back(generate_scene(s));
  }
  return out;
}

std::vector<Split> default_splits(const DatasetConfig& c, size_t n) {
  std::vector<Split> out(n, Split::Test);
  for (size_t i = 0; i < n && static_cast<int>(i) < c.train_scenes; ++i) out[i] = Split::Train;
  return out;
}

namespace {

std::string scene_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%03d", i);
  return buf;
}

std::string numbered(const char* stem, int t, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.%s", stem, t, ext);
  return buf;
}

std::vector<int> identities_of(const SceneSpec& s) {
  std::vector<int> ids;
  for (const auto& a : s.agents) ids.push_back(a.identity);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void check_splits(const std::vector<SceneSpec>& scenes, const std::vector<Split>& splits) {
  require(splits.size() == scenes.size(), ErrorKind::Config,
          "split tags for " + std::to_string(splits.size()) + " of " +
              std::to_string(scenes.size()) + " scenes");
}

}  // namespace

Dataset make_dataset(const std::vector<SceneSpec>& scenes, const std::vector<Split>& splits,
                     uint64_t seed) {
  check_splits(scenes, splits);
  Dataset d;
  d.manifest.seed = seed;
  for (size_t i = 0; i < scenes.size(); ++i) {
    SceneData sd;
    sd.id = static_cast<int>(i);
    sd.name = scene_name(sd.id);
    sd.split = splits[i];
    sd.identities = identities_of(scenes[i]);
    sd.views = render_scene(scenes[i], sd.id);
    d.scenes.push_back(std::move(sd));
  }
  return d;
}

DatasetManifest export_dataset(const std::vector<SceneSpec>& scenes,
                               const std::vector<Split>& splits, const fs::path& root,
                               uint64_t seed) {
  check_splits(scenes, splits);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) fail(ErrorKind::Io, "cannot create " + root.string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = seed;
  for (size_t i = 0; i < scenes.size(); ++i) {
    const SceneSpec& spec = scenes[i];
    SceneEntry e;
    e.id = static_cast<int>(i);
    e.name = scene_name(e.id);
    e.split = splits[i];
    e.width = spec.view_width;
    e.height = spec.view_height;
    e.num_frames = spec.num_frames;
    e.identities = identities_of(spec);
    e.spec = spec;
    const auto views = render_scene(spec, e.id);
    for (const auto& seq : views) {
      ViewEntry v;
      v.id = seq.view_id;
      v.kind = seq.camera_kind;
      v.wearer = seq.wearer_identity;
      const fs::path rel = fs::path(e.name) / ("view_" + std::to_string(v.id));
      fs::create_directories(root / rel, ec);
      if (ec) fail(ErrorKind::Io, "cannot create " + (root / rel).string() + ": " + ec.message());
      for (int t = 0; t < seq.num_frames(); ++t) {
        const auto frame_rel = rel / numbered("frame", t, "png");
        const auto mask_rel = rel / numbered("mask", t, "png");
        write_frame_png(root / frame_rel, seq.frames[t]);
        LabelMap labels(seq.frames[t].width(), seq.frames[t].height());
        for (const auto& inst : seq.instances[t])
          for (size_t p = 0; p < labels.data().size(); ++p)
            if (inst.gt_mask->data()[p]) labels.data()[p] = static_cast<uint8_t>(inst.identity);
        write_gray_png(root / mask_rel, labels);
        v.frames.push_back(frame_rel.generic_string());
        v.masks.push_back(mask_rel.generic_string());
        if (t + 1 < seq.num_frames()) {
          const auto flow_rel = rel / numbered("flow", t, "cvfl");
          write_flow(root / flow_rel, seq.flows[t]);
          v.flows.push_back(flow_rel.generic_string());
        }
      }
      e.views.push_back(std::move(v));
    }
    m.scenes.push_back(std::move(e));
  }
  std::ofstream os(root / "manifest.json");
  if (!os) fail(ErrorKind::Io, "cannot write " + (root / "manifest.json").string());
  os << m.to_json().dump(2) << "\n";
  if (!os) fail(ErrorKind::Io, "short write to " + (root / "manifest.json").string());
  return m;
}

Dataset import_dataset(const fs::path& root) {
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) fail(ErrorKind::Integrity, "missing manifest " + manifest_path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    fail(ErrorKind::Integrity, "cannot parse " + manifest_path.string() + ": " + e.what());
  }
  Dataset d;
  d.root = root;
  d.manifest = DatasetManifest::from_json(j);
  for (const auto& e : d.manifest.scenes) {
    SceneData sd;
    sd.id = e.id;
    sd.name = e.name;
    sd.split = e.split;
    sd.identities = e.identities;
    const std::set<int> known(e.identities.begin(), e.identities.end());
    for (const auto& v : e.views) {
      require(static_cast<int>(v.frames.size()) == e.num_frames &&
                  v.masks.size() == v.frames.size(),
              ErrorKind::Integrity,
              e.name + "/view_" + std::to_string(v.id) + ": frame/mask count mismatch");
      Sequence seq;
      seq.view_id = v.id;
      seq.camera_kind = v.kind;
      seq.wearer_identity = v.wearer;
      for (size_t t = 0; t < v.frames.size(); ++t) {
        seq.frames.push_back(read_frame_png(root / v.frames[t]));
        require(seq.frames.back().same_size(e.width, e.height), ErrorKind::Integrity,
                v.frames[t] + ": unexpected frame size");
        const LabelMap labels = read_gray_png(root / v.masks[t]);
        require(labels.same_size(e.width, e.height), ErrorKind::Integrity,
                v.masks[t] + ": unexpected mask size");
        std::set<int> present(labels.data().begin(), labels.data().end());
        present.erase(0);
        std::vector<PersonInstance> insts;
        for (int id : present) {
          require(known.count(id) == 1, ErrorKind::Integrity,
                  v.masks[t] + ": unknown identity " + std::to_string(id));
          insts.push_back({e.id, v.id, static_cast<int>(t), id, label_to_mask(labels, id)});
        }
        seq.instances.push_back(std::move(insts));
      }
      for (const auto& f : v.flows) {
        seq.flows.push_back(read_flow(root / f));
        require(seq.flows.back().same_size(e.width, e.height), ErrorKind::Integrity,
                f + ": unexpected flow size");
      }
      const auto violations = validate_sequence(seq);
      if (!violations.empty())
        fail(ErrorKind::Integrity, e.name + "/view_" + std::to_string(v.id) + ": " +
                                       violations.front().message);
      sd.views.push_back(std::move(seq));
    }
    d.scenes.push_back(std::move(sd));
  }
  return d;
}

// -------------------------------------------------------------- pairs

std::vector<ExamplePair> sample_pairs(const Dataset& data, Problem problem, double neg_ratio,
                                      uint64_t seed, std::optional<Split> split) {
  require(neg_ratio > 0.0, ErrorKind::Parameter, "negative ratio must be > 0");
  std::vector<ExamplePair> pos, neg;
  for (const auto& scene : data.scenes) {
    if (split && scene.split != *split) continue;
    const int n_views = static_cast<int>(scene.views.size());
    for (int a = 0; a < n_views; ++a) {
      const Sequence& va = scene.views[a];
      if (problem == Problem::ThirdThird) {
        for (int b = a + 1; b < n_views; ++b) {
          const Sequence& vb = scene.views[b];
          const int T = std::min(va.num_frames(), vb.num_frames());
          for (int t = 0; t < T; ++t)
            for (const auto& ia : va.instances[t])
              for (const auto& ib : vb.instances[t]) {
                ExamplePair p;
                p.problem = problem;
                p.side_a = {scene.id, va.view_id, t, ia.identity};
                p.side_b = InstanceRef{scene.id, vb.view_id, t, ib.identity};
                p.label = ia.identity == ib.identity ? 1 : 0;
                (p.label ? pos : neg).push_back(p);
              }
        }
      } else {
        if (va.camera_kind != CameraKind::FirstPerson || !va.wearer_identity) continue;
        const int wearer = *va.wearer_identity;
        for (int b = 0; b < n_views; ++b) {
          if (b == a) continue;
          const Sequence& vb = scene.views[b];
          const int T = std::min(va.num_frames(), vb.num_frames());
          for (int t = 0; t < T; ++t)
            for (const auto& ib : vb.instances[t]) {
              ExamplePair p;
              p.problem = problem;
              p.side_a = {scene.id, vb.view_id, t, ib.identity};
              p.side_b = CameraRef{scene.id, va.view_id, t};
              p.label = ib.identity == wearer ? 1 : 0;
              (p.label ? pos : neg).push_back(p);
            }
        }
      }
    }
  }
  require(!pos.empty(), ErrorKind::EmptyData,
          std::string("no positive pairs available for ") + to_string(problem));
  const size_t want = static_cast<size_t>(std::llround(neg_ratio * double(pos.size())));
  require(want == 0 || !neg.empty(), ErrorKind::EmptyData,
          std::string("no negative pairs available for ") + to_string(problem));

  std::mt19937_64 rng(seed);
  std::vector<ExamplePair> out = std::move(pos);
  out.reserve(out.size() + want);
  if (want <= neg.size()) {
    for (size_t i = 0; i < want; ++i) {
      const size_t j = i + std::uniform_int_distribution<size_t>(0, neg.size() - 1 - i)(rng);
      std::swap(neg[i], neg[j]);
      out.push_back(neg[i]);
    }
  } else {
    std::uniform_int_distribution<size_t> pick(0, neg.size() - 1);
    for (size_t i = 0; i < want; ++i) out.push_back(neg[pick(rng)]);
  }
  return out;
}

}  // namespace coview
