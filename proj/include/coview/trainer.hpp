#pragma once

// Two-stage optimisation: segmentation-only training of the FCN, then joint
// training with the matching branch (FCN frozen for the first epochs).

#include <concepts>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coview/dataset.hpp"
#include "coview/model.hpp"

namespace coview {

// Classical momentum: g' = g + wd p; v = momentum v + g'; p -= lr v.
template <std::floating_point T>
void sgd_update(std::span<T> p, std::span<const T> g, std::span<T> v, double lr,
                double momentum, double weight_decay) {
  require(p.size() == g.size() && p.size() == v.size(), ErrorKind::Shape,
          "sgd_step: parameter, gradient and velocity sizes differ");
  const T l = static_cast<T>(lr), m = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
  for (size_t i = 0; i < p.size(); ++i) {
    v[i] = m * v[i] + (g[i] + wd * p[i]);
    p[i] -= l * v[i];
  }
}

struct OptimizerState {
  std::vector<std::vector<float>> velocity;  // parallel to the parameter list
  int64_t steps = 0;
};

void sgd_step(const nn::ParamList& params, OptimizerState& state, double lr, double momentum,
              double weight_decay);

enum class Stage { Fcn, Joint };
const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
  Stage stage = Stage::Fcn;
  Problem problem = Problem::ThirdThird;
  double lr = 1e-4;
  double joint_lr = 1e-5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 25;
  int fcn_epochs = 30;
  int frozen_epochs = 20;
  int joint_epochs = 40;
  double lambda = 0.1;      // weight of the matching loss in the joint phase
  double neg_ratio = 3.0;   // negatives per positive pair
  int premask_switch = -1;  // first epoch fed predicted pre-masks; -1 = midpoint
  int max_samples_per_epoch = 0;  // 0 = every sample
  int max_pairs_per_epoch = 0;
  uint64_t seed = 0;

  void validate() const;
  int resolved_premask_switch() const { return premask_switch >= 0 ? premask_switch : fcn_epochs / 2; }

  static TrainConfig paper(Stage stage);
  static TrainConfig desk(Stage stage);
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  int epoch = 0;  // 1-based within the stage
  std::string phase;  // "fcn", "frozen" or "joint"
  double loss = 0, seg_loss = 0, siam_loss = 0;  // means per sample / pair
  int samples = 0;
  double seconds = 0;
  uint64_t fcn_checksum = 0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  uint64_t fcn_checksum_start = 0;
};

using EpochCallback = std::function<void(const EpochRecord&, JointModel&)>;

// One training sample: a person at a time step, conditioned on a pre-mask.
struct SegSample {
  InstanceRef ref;
};

// Every train-split instance with a usable pre-mask (visible at t-1, or t = 0).
std::vector<SegSample> segmentation_samples(const Dataset& data, std::optional<Split> split);

// Pre-mask for `ref`: ground truth at t-1 (t at frame 0), or the model's
// thresholded prediction for frame t-1 when `predicted`.
Mask premask_for(const JointModel& model, const Dataset& data, const InstanceRef& ref,
                 bool predicted);

TrainHistory train_fcn_stage(JointModel& model, const Dataset& data, const TrainConfig& cfg,
                             const EpochCallback& on_epoch = {});

TrainHistory train_joint_stage(JointModel& model, const Dataset& data,
                               const std::vector<ExamplePair>& pairs, const TrainConfig& cfg,
                               const EpochCallback& on_epoch = {});

}  // namespace coview
