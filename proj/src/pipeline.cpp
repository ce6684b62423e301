#include "coview/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

#include "coview/image_io.hpp"

namespace coview {

using nn::Tensor;

SoftMask SegNetPredictor::predict(std::span<const Frame> frames,
                                  std::span<const FlowField> flows, int t,
                                  const Mask& premask) const {
  return net_.forward(make_seg_input(frames, flows, t, premask, net_.config().flow_stack))
      .foreground();
}

namespace {

void check_sequence_shape(std::span<const Frame> frames, std::span<const FlowField> flows,
                          const Mask& first_mask) {
  require(!frames.empty(), ErrorKind::EmptyData, "propagation needs at least one frame");
  require(flows.size() + 1 == frames.size(), ErrorKind::Shape,
          "propagation: " + std::to_string(frames.size()) + " frames need " +
              std::to_string(frames.size() - 1) + " flow fields, got " +
              std::to_string(flows.size()));
  require(first_mask.same_size(frames[0]), ErrorKind::Shape,
          "propagation: first mask does not match the frame size");
}

// step(t, premask) -> soft prediction for frame t.
template <typename Step>
PropagationResult propagate_with(int n, const Mask& first_mask, Step&& step) {
  PropagationResult r;
  r.soft.reserve(n);
  r.masks.reserve(n);
  r.soft.push_back(to_soft(first_mask));
  r.masks.push_back(first_mask);
  for (int t = 1; t < n; ++t) {
    r.soft.push_back(step(t, r.masks.back()));
    r.masks.push_back(threshold_mask(r.soft.back()));
  }
  return r;
}

}  // namespace

PropagationResult propagate_sequence(const MaskPredictor& net, std::span<const Frame> frames,
                                     std::span<const FlowField> flows, const Mask& first_mask) {
  check_sequence_shape(frames, flows, first_mask);
  return propagate_with(static_cast<int>(frames.size()), first_mask,
                        [&](int t, const Mask& pre) { return net.predict(frames, flows, t, pre); });
}

PropagationResult copy_first_baseline(const Mask& first_mask, int num_frames) {
  require(num_frames >= 1, ErrorKind::Parameter, "copy first: num_frames must be >= 1");
  PropagationResult r;
  r.soft.assign(num_frames, to_soft(first_mask));
  r.masks.assign(num_frames, first_mask);
  return r;
}

TrackedPerson track_person(const SegNet& net, const Sequence& seq, int identity,
                           const Mask& first_mask) {
  check_sequence_shape(seq.frames, seq.flows, first_mask);
  const int K = net.config().flow_stack;
  TrackedPerson p;
  p.identity = identity;
  auto run = [&](int t, const Mask& pre) {
    SegOutput out = net.forward(make_seg_input(seq.frames, seq.flows, t, pre, K));
    SoftMask fg = out.foreground();
    p.probs.push_back(std::move(out.probs));
    p.visual5.push_back(std::move(out.visual5));
    p.motion5.push_back(std::move(out.motion5));
    return fg;
  };
  // Frame 0 features use the given mask as pre-mask, as in training.
  run(0, first_mask);
  p.masks = propagate_with(seq.num_frames(), first_mask, run);
  return p;
}

ModelEmbedder::ModelEmbedder(const JointModel& model) : model_(model) {
  require(model.has_match(), ErrorKind::Config, "model has no matching branch");
}

std::vector<Embedding> ModelEmbedder::embed_person(const Sequence&,
                                                   const TrackedPerson& person) const {
  const auto& mc = model_.config().match;
  std::vector<Embedding> out;
  out.reserve(person.probs.size());
  for (size_t t = 0; t < person.probs.size(); ++t) {
    // At test time the box comes from the propagated mask.
    std::optional<Box> box;
    if (mc.reweight == ReweightMode::BoundingBox) box = bounding_box(person.masks.masks[t]);
    const Reweighted rw = reweight(person.visual5[t], person.motion5[t], person.probs[t],
                                   mc.reweight, mc.problem, box);
    out.push_back(model_.head().forward(rw.spatial, rw.temporal));
  }
  return out;
}

std::vector<Embedding> ModelEmbedder::embed_camera(const Sequence& seq) const {
  const FirstPersonEncoder* fp = model_.first_person();
  require(fp != nullptr, ErrorKind::Config, "model has no first-person branch");
  const auto& sc = fp->config();
  std::vector<Embedding> out;
  for (int t = 0; t < seq.num_frames(); ++t)
    out.push_back(fp->forward(make_first_person_visual(seq.frames[t]),
                              make_first_person_motion(seq.flows, t, sc.flow_stack, sc.width,
                                                       sc.height)));
  return out;
}

const char* to_string(Aggregation a) {
  return a == Aggregation::Mean ? "mean" : "per-frame-min";
}

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "mean") return Aggregation::Mean;
  if (s == "per-frame-min") return Aggregation::PerFrameMin;
  fail(ErrorKind::Config, "unknown aggregation '" + s + "' (expected mean or per-frame-min)");
}

namespace {

struct SideEmbedding {
  std::vector<Embedding> frames;
  Embedding mean;
};

SideEmbedding summarize(std::vector<Embedding> frames) {
  require(!frames.empty(), ErrorKind::EmptyData, "embedder returned no frames");
  SideEmbedding s;
  s.mean = frames[0];
  for (size_t t = 1; t < frames.size(); ++t) s.mean.add(frames[t]);
  s.mean.scale(1.0f / static_cast<float>(frames.size()));
  s.frames = std::move(frames);
  return s;
}

double side_distance(const SideEmbedding& a, const SideEmbedding& b, Aggregation agg) {
  if (agg == Aggregation::Mean) return pair_distance(a.mean, b.mean);
  const size_t n = std::min(a.frames.size(), b.frames.size());
  double best = pair_distance(a.frames[0], b.frames[0]);
  for (size_t t = 1; t < n; ++t) best = std::min(best, pair_distance(a.frames[t], b.frames[t]));
  return best;
}

}  // namespace

MatchResult match_views(const Embedder& embedder, const ViewTracks& view_a,
                        const ViewTracks& view_b, Problem problem, Aggregation aggregation) {
  require(view_a.seq && view_b.seq, ErrorKind::Parameter, "match_views: missing sequence");
  std::vector<SideEmbedding> rows, cols;
  std::vector<int> row_ids, col_ids;
  if (problem == Problem::ThirdFirst) {
    const Sequence& cam = *view_a.seq;
    require(cam.camera_kind == CameraKind::FirstPerson && cam.wearer_identity.has_value(),
            ErrorKind::Parameter, "match_views: third-first query must be a worn first-person view");
    rows.push_back(summarize(embedder.embed_camera(cam)));
    row_ids.push_back(*cam.wearer_identity);
  } else {
    for (const auto& p : view_a.people) {
      rows.push_back(summarize(embedder.embed_person(*view_a.seq, p)));
      row_ids.push_back(p.identity);
    }
  }
  for (const auto& p : view_b.people) {
    cols.push_back(summarize(embedder.embed_person(*view_b.seq, p)));
    col_ids.push_back(p.identity);
  }
  require(!rows.empty() && !cols.empty(), ErrorKind::EmptyData,
          "match_views: no candidates on one side");

  MatchResult m;
  m.problem = problem;
  m.rows = static_cast<int>(rows.size());
  m.cols = static_cast<int>(cols.size());
  m.query_ids = std::move(row_ids);
  m.candidate_ids = std::move(col_ids);
  m.distances.resize(size_t(m.rows) * m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) m.at(r, c) = side_distance(rows[r], cols[c], aggregation);
  m.validate();
  return m;
}

const char* to_string(EvalMethod m) { return m == EvalMethod::Model ? "model" : "copy-first"; }

EvalMethod eval_method_from_string(const std::string& s) {
  if (s == "model") return EvalMethod::Model;
  if (s == "copy-first") return EvalMethod::CopyFirst;
  fail(ErrorKind::Config, "unknown evaluation method '" + s + "' (expected model or copy-first)");
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = nlohmann::json{{"problem", to_string(c.problem)},
                     {"method", to_string(c.method)},
                     {"aggregation", to_string(c.aggregation)},
                     {"matching", c.matching},
                     {"split", c.split ? to_string(*c.split) : "all"},
                     {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  c = EvalConfig{};
  if (j.contains("problem")) c.problem = problem_from_string(j.at("problem").get<std::string>());
  if (j.contains("method")) c.method = eval_method_from_string(j.at("method").get<std::string>());
  if (j.contains("aggregation"))
    c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  c.matching = j.value("matching", c.matching);
  if (j.contains("split")) {
    const auto s = j.at("split").get<std::string>();
    c.split = s == "all" ? std::nullopt : std::optional(split_from_string(s));
  }
  c.threads = j.value("threads", c.threads);
  require(c.threads >= 0, ErrorKind::Config, "threads must be >= 0");
}

int worker_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("COVIEW_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(size_t n, int threads, const std::function<void(size_t)>& body) {
  const size_t workers = std::min<size_t>(n, static_cast<size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

EvalOutputs evaluate(const Dataset& data, const JointModel* model, const EvalConfig& config) {
  require(config.method == EvalMethod::CopyFirst || model != nullptr, ErrorKind::Config,
          "evaluation with the model method needs a model");
  const bool matching = config.matching && config.method == EvalMethod::Model &&
                        model->has_match() && model->config().match.problem == config.problem;
  const int threads = worker_threads(config.threads);

  struct Job {
    int scene, view, identity;
  };
  std::vector<Job> jobs;
  for (int s : data.scene_ids(config.split)) {
    const SceneData& scene = data.scene(s);
    for (const auto& seq : scene.views)
      for (const auto& inst : seq.instances.at(0)) jobs.push_back({s, seq.view_id, inst.identity});
  }
  require(!jobs.empty(), ErrorKind::EmptyData, "evaluation split has no people at frame 0");

  std::vector<TrackedPerson> tracks(jobs.size());
  parallel_for(jobs.size(), threads, [&](size_t i) {
    const Job& j = jobs[i];
    const Sequence& seq = data.view(j.scene, j.view);
    const Mask& first = *seq.find(0, j.identity)->gt_mask;
    if (config.method == EvalMethod::CopyFirst) {
      tracks[i].identity = j.identity;
      tracks[i].masks = copy_first_baseline(first, seq.num_frames());
    } else {
      tracks[i] = track_person(model->seg(), seq, j.identity, first);
    }
  });

  EvalOutputs out;
  EvalReport& rep = out.report;
  rep.problem = to_string(config.problem);
  rep.method = to_string(config.method);
  for (size_t i = 0; i < jobs.size(); ++i) {
    const Job& j = jobs[i];
    const Sequence& seq = data.view(j.scene, j.view);
    SequenceIoU s{j.scene, j.view, j.identity, {}, 0};
    const Mask empty(seq.frames[0].width(), seq.frames[0].height());
    for (int t = 0; t < seq.num_frames(); ++t) {
      const auto* gt = seq.find(t, j.identity);
      s.per_frame.push_back(iou(tracks[i].masks.masks[t], gt ? *gt->gt_mask : empty));
    }
    double sum = 0;
    for (size_t t = 1; t < s.per_frame.size(); ++t) sum += s.per_frame[t];
    s.mean = s.per_frame.size() > 1 ? sum / double(s.per_frame.size() - 1) : 1.0;
    rep.sequences.push_back(std::move(s));
    out.propagations.push_back(tracks[i].masks);
  }
  rep.summarize_iou();
  if (!matching) return out;

  // Ordered pairs of distinct views inside each scene.
  const ModelEmbedder embedder(*model);
  struct PairJob {
    int scene, a, b;
  };
  std::vector<PairJob> pair_jobs;
  for (int s : data.scene_ids(config.split)) {
    const SceneData& scene = data.scene(s);
    for (const auto& va : scene.views) {
      if (config.problem == Problem::ThirdFirst &&
          !(va.camera_kind == CameraKind::FirstPerson && va.wearer_identity))
        continue;
      for (const auto& vb : scene.views)
        if (vb.view_id != va.view_id) pair_jobs.push_back({s, va.view_id, vb.view_id});
    }
  }
  auto view_tracks = [&](int scene, int view) {
    ViewTracks vt;
    vt.seq = &data.view(scene, view);
    for (size_t i = 0; i < jobs.size(); ++i)
      if (jobs[i].scene == scene && jobs[i].view == view) vt.people.push_back(tracks[i]);
    return vt;
  };
  std::vector<std::optional<MatchResult>> results(pair_jobs.size());
  parallel_for(pair_jobs.size(), threads, [&](size_t i) {
    const PairJob& p = pair_jobs[i];
    const ViewTracks a = view_tracks(p.scene, p.a), b = view_tracks(p.scene, p.b);
    if ((config.problem == Problem::ThirdThird && a.people.empty()) || b.people.empty()) return;
    results[i] = match_views(embedder, a, b, config.problem, config.aggregation);
  });

  rep.has_matching = true;
  double ap_sum = 0;
  std::vector<double> all_d;
  std::vector<int> all_l;
  for (const auto& r : results) {
    if (!r) continue;
    const ChoiceSummary fc = forced_choice(*r);
    rep.acc_queries += fc.queries;
    rep.acc_excluded += fc.excluded;
    auto& bucket = rep.acc_by_candidates[r->cols];
    bucket.queries += fc.queries;
    bucket.correct += fc.correct;
    const MapSummary ms = mean_average_precision(*r);
    ap_sum += ms.map * ms.queries;
    rep.map_queries += ms.queries;
    rep.map_skipped += ms.skipped;
    for (int q = 0; q < r->rows; ++q)
      for (int c = 0; c < r->cols; ++c) {
        all_d.push_back(r->at(q, c));
        all_l.push_back(r->query_ids[q] == r->candidate_ids[c]);
      }
  }
  int correct = 0;
  for (const auto& [k, b] : rep.acc_by_candidates) correct += b.correct;
  rep.acc = rep.acc_queries ? double(correct) / rep.acc_queries : 0.0;
  rep.map = rep.map_queries ? ap_sum / rep.map_queries : 0.0;
  if (std::find(all_l.begin(), all_l.end(), 1) != all_l.end()) rep.pr = pr_curve(all_d, all_l);
  return out;
}

void write_predictions(const std::filesystem::path& dir, const EvalOutputs& outputs) {
  std::filesystem::create_directories(dir);
  const auto& seqs = outputs.report.sequences;
  require(seqs.size() == outputs.propagations.size(), ErrorKind::Shape,
          "predictions do not line up with the report");
  for (size_t i = 0; i < seqs.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "seq_%03d_%d_%d", seqs[i].scene, seqs[i].view,
                  seqs[i].identity);
    const auto sub = dir / name;
    std::filesystem::create_directories(sub);
    const auto& masks = outputs.propagations[i].masks;
    for (size_t t = 0; t < masks.size(); ++t) {
      LabelMap lm(masks[t].width(), masks[t].height());
      for (size_t k = 0; k < lm.data().size(); ++k) lm.data()[k] = masks[t].data()[k] ? 255 : 0;
      char file[32];
      std::snprintf(file, sizeof file, "mask_%03zu.png", t);
      write_gray_png(sub / file, lm);
    }
  }
}

}  // namespace coview
