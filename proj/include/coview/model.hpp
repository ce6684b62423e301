#pragma once

// The segmentation network together with its matching branch, plus the
// binary checkpoint container.
//
// Checkpoint layout (little-endian):
//   "CVCK", u32 version, u32 n + n bytes of config JSON, u32 parameter count,
//   per parameter: u32 n + name, u32 ndim, ndim x u32 dims, float32 payload.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>

#include <json.hpp>

#include "coview/matchnet.hpp"
#include "coview/segnet.hpp"

namespace coview {

inline constexpr uint32_t kCheckpointVersion = 1;

void to_json(nlohmann::json& j, const SegNetConfig& c);
void from_json(const nlohmann::json& j, SegNetConfig& c);
void to_json(nlohmann::json& j, const MatchConfig& c);
void from_json(const nlohmann::json& j, MatchConfig& c);

struct ModelConfig {
  SegNetConfig seg;
  MatchConfig match;
  bool with_match = false;  // stage-(a) models carry no matching branch
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

class JointModel {
 public:
  JointModel(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  SegNet& seg() { return seg_; }
  const SegNet& seg() const { return seg_; }
  bool has_match() const { return head_ != nullptr; }
  EmbeddingHead& head() { return *head_; }
  const EmbeddingHead& head() const { return *head_; }
  std::shared_ptr<EmbeddingHead> shared_head() const { return head_; }
  // Present for the third-first problem only.
  FirstPersonEncoder* first_person() { return fp_ ? &*fp_ : nullptr; }
  const FirstPersonEncoder* first_person() const { return fp_ ? &*fp_ : nullptr; }

  nn::ParamList fcn_params() { return seg_.params(); }
  // Matching head plus first-person streams.
  nn::ParamList match_params();
  nn::ParamList all_params();

 private:
  ModelConfig config_;
  SegNet seg_;
  std::shared_ptr<EmbeddingHead> head_;
  std::optional<FirstPersonEncoder> fp_;
};

struct Checkpoint {
  nlohmann::json meta;  // {"model": ModelConfig, ...}
  struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
  };
  std::map<std::string, Tensor> params;

  ModelConfig model_config() const;
};

void save_checkpoint(const std::filesystem::path& path, JointModel& model,
                     const nlohmann::json& extra = nlohmann::json::object());
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies the named parameters of `ckpt` into `params`. Every entry of `params`
// must be present with the same shape; with `exact`, the checkpoint may not
// hold anything else.
void load_params(const Checkpoint& ckpt, const nn::ParamList& params, bool exact);

// Rebuilds the model a checkpoint was saved from.
JointModel load_model(const std::filesystem::path& path);

}  // namespace coview
