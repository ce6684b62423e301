#pragma once

// On-disk dataset layout and training-pair sampling.
//
//   root/manifest.json
//   root/scene_000/view_0/frame_000.png   8-bit RGB
//   root/scene_000/view_0/mask_000.png    8-bit gray, pixel = identity (0 = background)
//   root/scene_000/view_0/flow_000.cvfl   CVFL flow to the next frame

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coview/core.hpp"
#include "coview/synthdata.hpp"

namespace coview {

inline constexpr int kManifestSchemaVersion = 1;

enum class Split { Train, Test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetConfig {
  uint64_t seed = 0;
  int num_scenes = 9;
  int train_scenes = 6;
  int num_frames = 20;
  int num_agents = 3;
  int first_person_rigs = 2;
  int third_person_rigs = 1;
  int view_width = 64;
  int view_height = 64;
  int world_width = 128;
  int world_height = 128;
  int max_speed = 1;
  int activity_margin = 36;
  bool jitter = true;
  bool third_person_pan = false;
  // When non-empty these specs are used verbatim (first `train_scenes` are train).
  std::vector<SceneSpec> scenes;

  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct ViewEntry {
  int id = 0;
  CameraKind kind = CameraKind::ThirdPerson;
  std::optional<int> wearer;
  std::vector<std::string> frames, masks, flows;  // paths relative to the root
};

struct SceneEntry {
  int id = 0;
  std::string name;
  Split split = Split::Train;
  int width = 0, height = 0, num_frames = 0;
  std::vector<int> identities;
  std::vector<ViewEntry> views;
  SceneSpec spec;
};

struct DatasetManifest {
  int schema_version = kManifestSchemaVersion;
  uint64_t seed = 0;
  std::vector<SceneEntry> scenes;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct SceneData {
  int id = 0;
  std::string name;
  Split split = Split::Train;
  std::vector<int> identities;
  std::vector<Sequence> views;
};

struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<SceneData> scenes;

  const SceneData& scene(int id) const;
  const Sequence& view(int scene_id, int view_id) const;
  std::vector<int> scene_ids(std::optional<Split> split) const;
};

// Resolved scene specs for a dataset configuration (scene i uses a seed derived
// from the dataset seed and i).
std::vector<SceneSpec> build_scene_specs(const DatasetConfig& config);
std::vector<Split> default_splits(const DatasetConfig& config, size_t num_scenes);

// Renders scenes into memory without touching the filesystem.
Dataset make_dataset(const std::vector<SceneSpec>& scenes, const std::vector<Split>& splits,
                     uint64_t seed = 0);

DatasetManifest export_dataset(const std::vector<SceneSpec>& scenes,
                               const std::vector<Split>& splits,
                               const std::filesystem::path& root, uint64_t seed = 0);
// Loads and checks every referenced file; inconsistencies raise integrity errors.
Dataset import_dataset(const std::filesystem::path& root);

// third_third: same identity in two different views at the same time step.
// third_first: first-person camera vs. a person in another view at the same time step.
// |negatives| = round(neg_ratio * |positives|); drawn without replacement when the
// pool allows it, with replacement otherwise.
std::vector<ExamplePair> sample_pairs(const Dataset& data, Problem problem, double neg_ratio,
                                      uint64_t seed,
                                      std::optional<Split> split = Split::Train);

}  // namespace coview
