#pragma once

// Test-time inference: per-person mask propagation, cross-view matching and
// evaluation over a dataset split.

#include <atomic>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "coview/dataset.hpp"
#include "coview/metrics.hpp"
#include "coview/model.hpp"

namespace coview {

// Anything that maps (frames, flows, t, previous mask) to a foreground map.
class MaskPredictor {
 public:
  virtual ~MaskPredictor() = default;
  virtual SoftMask predict(std::span<const Frame> frames, std::span<const FlowField> flows,
                           int t, const Mask& premask) const = 0;
};

class SegNetPredictor : public MaskPredictor {
 public:
  explicit SegNetPredictor(const SegNet& net) : net_(net) {}
  SoftMask predict(std::span<const Frame> frames, std::span<const FlowField> flows, int t,
                   const Mask& premask) const override;

 private:
  const SegNet& net_;
};

// Returns its pre-mask unchanged.
class PremaskEcho : public MaskPredictor {
 public:
  SoftMask predict(std::span<const Frame>, std::span<const FlowField>, int,
                   const Mask& premask) const override {
    return to_soft(premask);
  }
};

struct PropagationResult {
  std::vector<SoftMask> soft;
  std::vector<Mask> masks;
  bool operator==(const PropagationResult&) const = default;
};

// Frame 0 is first_mask; frame t uses the binarized prediction of t-1 as pre-mask.
PropagationResult propagate_sequence(const MaskPredictor& net, std::span<const Frame> frames,
                                     std::span<const FlowField> flows, const Mask& first_mask);
PropagationResult copy_first_baseline(const Mask& first_mask, int num_frames);

// Propagation plus the per-frame deep features the matching head consumes.
struct TrackedPerson {
  int identity = 0;
  PropagationResult masks;
  std::vector<nn::Tensor> probs, visual5, motion5;  // per frame
};

TrackedPerson track_person(const SegNet& net, const Sequence& seq, int identity,
                           const Mask& first_mask);

// Per-frame embeddings of one side of a match.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<Embedding> embed_person(const Sequence& seq,
                                              const TrackedPerson& person) const = 0;
  virtual std::vector<Embedding> embed_camera(const Sequence& seq) const = 0;
};

class ModelEmbedder : public Embedder {
 public:
  explicit ModelEmbedder(const JointModel& model);
  std::vector<Embedding> embed_person(const Sequence& seq,
                                      const TrackedPerson& person) const override;
  std::vector<Embedding> embed_camera(const Sequence& seq) const override;

 private:
  const JointModel& model_;
};

// How per-frame embeddings become one distance per pair.
enum class Aggregation { Mean, PerFrameMin };
const char* to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& s);

struct ViewTracks {
  const Sequence* seq = nullptr;
  std::vector<TrackedPerson> people;
};

// third_third: rows are the people of view_a, columns the people of view_b.
// third_first: view_a is a first-person view; its camera is the single row
// (labelled with the wearer) and the people of view_b are the columns.
// Each side is embedded exactly once.
MatchResult match_views(const Embedder& embedder, const ViewTracks& view_a,
                        const ViewTracks& view_b, Problem problem,
                        Aggregation aggregation = Aggregation::Mean);

enum class EvalMethod { Model, CopyFirst };
const char* to_string(EvalMethod m);
EvalMethod eval_method_from_string(const std::string& s);

struct EvalConfig {
  Problem problem = Problem::ThirdThird;
  EvalMethod method = EvalMethod::Model;
  Aggregation aggregation = Aggregation::Mean;
  bool matching = true;  // ignored without a matching branch or for Copy First
  std::optional<Split> split = Split::Test;
  int threads = 0;  // 0: COVIEW_THREADS, else hardware concurrency
};

// "split" is "train", "test" or "all".
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EvalOutputs {
  EvalReport report;
  // Propagated masks keyed like report.sequences (same order).
  std::vector<PropagationResult> propagations;
};

// Propagates every person visible at frame 0 of each view, then (optionally)
// matches every ordered pair of distinct views of a scene.
EvalOutputs evaluate(const Dataset& data, const JointModel* model, const EvalConfig& config);

// Writes seq_<scene>_<view>_<identity>/mask_<t>.png for every propagation.
void write_predictions(const std::filesystem::path& dir, const EvalOutputs& outputs);

// Worker count: COVIEW_THREADS when set and positive, else hardware concurrency.
int worker_threads(int requested = 0);
// Runs body(i) for i in [0, n); results must go to per-index slots.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& body);

}  // namespace coview
