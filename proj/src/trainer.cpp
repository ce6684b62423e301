#include "coview/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "coview/losses.hpp"

namespace coview {

using nlohmann::json;
using nn::Tensor;

void sgd_step(const nn::ParamList& params, OptimizerState& state, double lr, double momentum,
              double weight_decay) {
  if (state.velocity.empty()) {
    for (const auto* p : params) state.velocity.emplace_back(p->size(), 0.0f);
  }
  require(state.velocity.size() == params.size(), ErrorKind::Shape,
          "sgd_step: optimizer state tracks " + std::to_string(state.velocity.size()) +
              " parameters, got " + std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    require(p->grad.size() == p->value.size(), ErrorKind::Shape,
            "sgd_step: gradient of " + p->name + " has the wrong size");
    sgd_update<float>(p->value, p->grad, state.velocity[i], lr, momentum, weight_decay);
  }
  ++state.steps;
}

const char* to_string(Stage s) { return s == Stage::Joint ? "joint" : "fcn"; }

Stage stage_from_string(const std::string& s) {
  if (s == "fcn") return Stage::Fcn;
  if (s == "joint") return Stage::Joint;
  fail(ErrorKind::Config, "unknown stage '" + s + "' (expected fcn or joint)");
}

void TrainConfig::validate() const {
  require(lr > 0 && joint_lr > 0, ErrorKind::Config, "learning rates must be > 0");
  require(momentum >= 0 && momentum < 1, ErrorKind::Config, "momentum must lie in [0,1)");
  require(weight_decay >= 0, ErrorKind::Config, "weight decay must be >= 0");
  require(batch_size >= 1, ErrorKind::Config, "batch size must be >= 1");
  require(fcn_epochs >= 1, ErrorKind::Config, "fcn epochs must be >= 1");
  require(frozen_epochs >= 0 && joint_epochs >= 0 && frozen_epochs + joint_epochs >= 1,
          ErrorKind::Config, "joint stage needs at least one epoch");
  require(lambda > 0, ErrorKind::Config, "lambda must be > 0");
  require(neg_ratio > 0, ErrorKind::Config, "negative ratio must be > 0");
  require(max_samples_per_epoch >= 0 && max_pairs_per_epoch >= 0, ErrorKind::Config,
          "per-epoch caps must be >= 0");
}

TrainConfig TrainConfig::paper(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  return c;
}

TrainConfig TrainConfig::desk(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.batch_size = 8;
  // The loss is a sum over pixels, so the usable rate shrinks with the image
  // area; 64x64 inputs diverge above roughly 5e-6.
  c.lr = 3e-6;
  c.joint_lr = 3e-7;
  return c;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"stage", to_string(c.stage)},
           {"problem", to_string(c.problem)},
           {"lr", c.lr},
           {"joint_lr", c.joint_lr},
           {"momentum", c.momentum},
           {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},
           {"fcn_epochs", c.fcn_epochs},
           {"frozen_epochs", c.frozen_epochs},
           {"joint_epochs", c.joint_epochs},
           {"lambda", c.lambda},
           {"neg_ratio", c.neg_ratio},
           {"premask_switch", c.premask_switch},
           {"max_samples_per_epoch", c.max_samples_per_epoch},
           {"max_pairs_per_epoch", c.max_pairs_per_epoch},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  if (j.contains("stage")) c.stage = stage_from_string(j.at("stage").get<std::string>());
  if (j.contains("problem")) c.problem = problem_from_string(j.at("problem").get<std::string>());
  c.lr = j.value("lr", c.lr);
  c.joint_lr = j.value("joint_lr", c.joint_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.fcn_epochs = j.value("fcn_epochs", c.fcn_epochs);
  c.frozen_epochs = j.value("frozen_epochs", c.frozen_epochs);
  c.joint_epochs = j.value("joint_epochs", c.joint_epochs);
  c.lambda = j.value("lambda", c.lambda);
  c.neg_ratio = j.value("neg_ratio", c.neg_ratio);
  c.premask_switch = j.value("premask_switch", c.premask_switch);
  c.max_samples_per_epoch = j.value("max_samples_per_epoch", c.max_samples_per_epoch);
  c.max_pairs_per_epoch = j.value("max_pairs_per_epoch", c.max_pairs_per_epoch);
  c.seed = j.value("seed", c.seed);
}

void to_json(json& j, const EpochRecord& r) {
  j = json{{"epoch", r.epoch},         {"phase", r.phase},         {"loss", r.loss},
           {"seg_loss", r.seg_loss},   {"siam_loss", r.siam_loss}, {"samples", r.samples},
           {"seconds", r.seconds},     {"fcn_checksum", r.fcn_checksum}};
}

// ---------------------------------------------------------------- samples

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

const Mask& gt_mask(const Sequence& seq, int t, int identity) {
  const PersonInstance* inst = seq.find(t, identity);
  require(inst && inst->gt_mask, ErrorKind::Lookup,
          "identity " + std::to_string(identity) + " not visible in view " +
              std::to_string(seq.view_id) + " at frame " + std::to_string(t));
  return *inst->gt_mask;
}

// Ground-truth pre-mask: previous frame when visible there, else the frame itself.
const Mask& gt_premask(const Sequence& seq, int t, int identity) {
  if (t > 0 && seq.find(t - 1, identity)) return gt_mask(seq, t - 1, identity);
  return gt_mask(seq, t, identity);
}

std::vector<size_t> epoch_order(size_t n, uint64_t seed, int epoch, int cap) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(mix(seed, static_cast<uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  if (cap > 0 && order.size() > static_cast<size_t>(cap)) order.resize(cap);
  return order;
}

// Loss value on the foreground channel; the gradient goes to the logits.
double seg_loss_grad(const Tensor& probs, const Mask& gt, Tensor* grad_logits) {
  std::span<const float> fg(probs.channel(1), probs.plane());
  if (grad_logits) seg_logit_grad(probs, gt, *grad_logits);
  return seg_loss<float>(fg, gt.data());
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

std::vector<SegSample> segmentation_samples(const Dataset& data, std::optional<Split> split) {
  std::vector<SegSample> out;
  for (const auto& scene : data.scenes) {
    if (split && scene.split != *split) continue;
    for (const auto& seq : scene.views)
      for (int t = 0; t < seq.num_frames(); ++t)
        for (const auto& inst : seq.instances[t])
          if (inst.gt_mask && (t == 0 || seq.find(t - 1, inst.identity)))
            out.push_back({{scene.id, seq.view_id, t, inst.identity}});
  }
  return out;
}

Mask premask_for(const JointModel& model, const Dataset& data, const InstanceRef& ref,
                 bool predicted) {
  const Sequence& seq = data.view(ref.scene, ref.view);
  if (!predicted || ref.frame == 0 || !seq.find(ref.frame - 1, ref.identity))
    return gt_premask(seq, ref.frame, ref.identity);
  const int prev = ref.frame - 1;
  const Mask& cond = gt_premask(seq, prev, ref.identity);
  const auto& cfg = model.seg().config();
  const SegOutput out =
      model.seg().forward(make_seg_input(seq.frames, seq.flows, prev, cond, cfg.flow_stack));
  return threshold_mask(out.foreground());
}

// -------------------------------------------------------------- FCN stage

TrainHistory train_fcn_stage(JointModel& model, const Dataset& data, const TrainConfig& cfg,
                             const EpochCallback& on_epoch) {
  cfg.validate();
  const auto samples = segmentation_samples(data, Split::Train);
  require(!samples.empty(), ErrorKind::EmptyData, "no training instances in the train split");
  SegNet& net = model.seg();
  const int K = net.config().flow_stack;
  const nn::ParamList params = model.fcn_params();
  OptimizerState state;
  TrainHistory hist;
  hist.fcn_checksum_start = nn::checksum(params);

  for (int epoch = 1; epoch <= cfg.fcn_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const bool predicted = epoch - 1 >= cfg.resolved_premask_switch();
    const auto order = epoch_order(samples.size(), cfg.seed, epoch, cfg.max_samples_per_epoch);
    double total = 0;
    for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
      nn::zero_grad(params);
      const size_t end = std::min(order.size(), b + cfg.batch_size);
      for (size_t i = b; i < end; ++i) {
        const InstanceRef& ref = samples[order[i]].ref;
        const Sequence& seq = data.view(ref.scene, ref.view);
        const Mask pre = premask_for(model, data, ref, predicted);
        SegNet::Trace trace;
        const SegOutput out = net.forward(make_seg_input(seq.frames, seq.flows, ref.frame, pre, K),
                                          &trace);
        Tensor grad;
        total += seg_loss_grad(out.probs, gt_mask(seq, ref.frame, ref.identity), &grad);
        net.backward(trace, {{}, {}, {}, grad});
      }
      sgd_step(params, state, cfg.lr, cfg.momentum, cfg.weight_decay);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = "fcn";
    rec.samples = static_cast<int>(order.size());
    rec.seg_loss = rec.loss = total / rec.samples;
    rec.seconds = elapsed(start);
    rec.fcn_checksum = nn::checksum(params);
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, model);
  }
  return hist;
}

// ------------------------------------------------------------ joint stage

namespace {

struct CachedSeg {
  Tensor probs, visual5, motion5;
};

using CacheKey = std::tuple<int, int, int, int>;

struct Side {
  bool camera = false;
  InstanceRef ref;
  CameraRef cam;
  SegNet::Trace seg_trace;
  Tensor probs;
  ReweightTrace rw;
  EmbeddingHead::Trace head;
  FirstPersonEncoder::Trace fp;
  Embedding emb;
};

class JointStep {
 public:
  JointStep(JointModel& model, const Dataset& data, const TrainConfig& cfg)
      : model_(model), data_(data), cfg_(cfg) {}

  void forward_instance(Side& s, const InstanceRef& ref, bool frozen) {
    s.camera = false;
    s.ref = ref;
    const Sequence& seq = data_.view(ref.scene, ref.view);
    const auto& mc = model_.config().match;
    const int K = model_.seg().config().flow_stack;
    Tensor visual5, motion5;
    if (frozen) {
      const CacheKey key{ref.scene, ref.view, ref.frame, ref.identity};
      auto it = cache_.find(key);
      if (it == cache_.end()) {
        const Mask pre = premask_for(model_, data_, ref, true);
        const SegOutput out =
            model_.seg().forward(make_seg_input(seq.frames, seq.flows, ref.frame, pre, K));
        it = cache_.emplace(key, CachedSeg{out.probs, out.visual5, out.motion5}).first;
      }
      s.probs = it->second.probs;
      visual5 = it->second.visual5;
      motion5 = it->second.motion5;
    } else {
      const Mask pre = premask_for(model_, data_, ref, true);
      const SegOutput out = model_.seg().forward(
          make_seg_input(seq.frames, seq.flows, ref.frame, pre, K), &s.seg_trace);
      s.probs = out.probs;
      visual5 = out.visual5;
      motion5 = out.motion5;
    }
    std::optional<Box> box;
    if (mc.reweight == ReweightMode::BoundingBox)
      box = bounding_box(gt_mask(seq, ref.frame, ref.identity));
    const Reweighted rw =
        reweight(visual5, motion5, s.probs, mc.reweight, mc.problem, box, &s.rw);
    s.emb = model_.head().forward(rw.spatial, rw.temporal, &s.head);
  }

  void forward_camera(Side& s, const CameraRef& cam) {
    s.camera = true;
    s.cam = cam;
    const Sequence& seq = data_.view(cam.scene, cam.view);
    const auto& sc = model_.seg().config();
    s.emb = model_.first_person()->forward(
        make_first_person_visual(seq.frames[cam.frame]),
        make_first_person_motion(seq.flows, cam.frame, sc.flow_stack, sc.width, sc.height),
        &s.fp);
  }

  // Returns the segmentation loss added for this side (joint phase only).
  double backward(Side& s, const Tensor& grad_emb, bool frozen) {
    if (s.camera) {
      model_.first_person()->backward(s.fp, grad_emb);
      return 0.0;
    }
    auto [gs, gt] = model_.head().backward(s.head, grad_emb);
    if (frozen) return 0.0;
    ReweightGrads rg = reweight_backward(s.rw, gs, gt);
    const Sequence& seq = data_.view(s.ref.scene, s.ref.view);
    Tensor gl;
    const double loss = seg_loss_grad(s.probs, gt_mask(seq, s.ref.frame, s.ref.identity), &gl);
    model_.seg().backward(s.seg_trace, {rg.probs, rg.spatial, rg.temporal, gl});
    return loss;
  }

 private:
  JointModel& model_;
  const Dataset& data_;
  const TrainConfig& cfg_;
  std::map<CacheKey, CachedSeg> cache_;
};

}  // namespace

TrainHistory train_joint_stage(JointModel& model, const Dataset& data,
                               const std::vector<ExamplePair>& pairs, const TrainConfig& cfg,
                               const EpochCallback& on_epoch) {
  cfg.validate();
  require(!pairs.empty(), ErrorKind::EmptyData, "joint training needs at least one pair");
  require(model.has_match(), ErrorKind::Config, "joint training needs a matching branch");
  const Problem problem = model.config().match.problem;
  require(problem == cfg.problem, ErrorKind::Config,
          std::string("model is built for ") + to_string(problem) + ", training asked for " +
              to_string(cfg.problem));
  for (const auto& p : pairs)
    require(p.problem == problem, ErrorKind::Config, "pair list mixes problems");

  const nn::ParamList fcn = model.fcn_params();
  const nn::ParamList match = model.match_params();
  const float margin = static_cast<float>(model.config().match.margin);
  OptimizerState fcn_state, match_state;
  TrainHistory hist;
  hist.fcn_checksum_start = nn::checksum(fcn);
  JointStep step(model, data, cfg);

  const int total_epochs = cfg.frozen_epochs + cfg.joint_epochs;
  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const bool frozen = epoch <= cfg.frozen_epochs;
    const float siam_scale = frozen ? 1.0f : static_cast<float>(cfg.lambda);
    const auto order = epoch_order(pairs.size(), cfg.seed, epoch, cfg.max_pairs_per_epoch);
    double seg_total = 0, siam_total = 0;
    for (size_t b = 0; b < order.size(); b += cfg.batch_size) {
      nn::zero_grad(match);
      if (!frozen) nn::zero_grad(fcn);
      const size_t end = std::min(order.size(), b + cfg.batch_size);
      for (size_t i = b; i < end; ++i) {
        const ExamplePair& pair = pairs[order[i]];
        Side a, c;
        step.forward_instance(a, pair.side_a, frozen);
        if (const auto* inst = std::get_if<InstanceRef>(&pair.side_b))
          step.forward_instance(c, *inst, frozen);
        else
          step.forward_camera(c, std::get<CameraRef>(pair.side_b));
        require(a.emb.same_shape(c.emb), ErrorKind::Shape,
                "embedding shapes " + a.emb.shape_str() + " vs " + c.emb.shape_str());
        Tensor ga(a.emb.c, a.emb.h, a.emb.w), gc(c.emb.c, c.emb.h, c.emb.w);
        const int label = pair.label;
        siam_total += contrastive_loss<float>(a.emb.v, c.emb.v, std::span<const int>(&label, 1),
                                              margin, ga.v, gc.v);
        ga.scale(siam_scale);
        gc.scale(siam_scale);
        seg_total += step.backward(a, ga, frozen);
        seg_total += step.backward(c, gc, frozen);
      }
      sgd_step(match, match_state, cfg.joint_lr, cfg.momentum, cfg.weight_decay);
      if (!frozen) sgd_step(fcn, fcn_state, cfg.joint_lr, cfg.momentum, cfg.weight_decay);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = frozen ? "frozen" : "joint";
    rec.samples = static_cast<int>(order.size());
    rec.siam_loss = siam_total / rec.samples;
    rec.seg_loss = seg_total / rec.samples;
    rec.loss = frozen ? rec.siam_loss : rec.seg_loss + cfg.lambda * rec.siam_loss;
    rec.seconds = elapsed(start);
    rec.fcn_checksum = nn::checksum(fcn);
    hist.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec, model);
  }
  return hist;
}

}  // namespace coview
