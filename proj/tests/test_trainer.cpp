#include <doctest.h>

#include <cmath>
#include <random>

#include "coview/trainer.hpp"

using namespace coview;

namespace {

Dataset small_dataset(int frames, int scenes = 1) {
  DatasetConfig dc;
  dc.seed = 3;
  dc.num_scenes = scenes;
  dc.train_scenes = scenes;
  dc.num_frames = frames;
  const auto specs = build_scene_specs(dc);
  return make_dataset(specs, default_splits(dc, specs.size()));
}

ModelConfig seg_only() { return ModelConfig{}; }

ModelConfig matching() {
  ModelConfig mc;
  mc.with_match = true;
  return mc;
}

}  // namespace

TEST_CASE("sgd worked examples") {
  std::vector<double> p{1.0}, g{0.5}, v{0.0};
  sgd_update<double>(p, g, v, 0.1, 0.0, 0.0);
  CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-12));

  p = {1.0};
  v = {0.0};
  sgd_update<double>(p, g, v, 0.1, 0.9, 0.0);
  CHECK(p[0] == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(v[0] == doctest::Approx(0.5).epsilon(1e-12));
  sgd_update<double>(p, g, v, 0.1, 0.9, 0.0);
  CHECK(v[0] == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.855).epsilon(1e-12));

  p = {1.0};
  v = {0.0};
  std::vector<double> zero{0.0};
  sgd_update<double>(p, zero, v, 0.1, 0.0, 0.1);
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-12));

  std::vector<double> short_g{};
  CHECK_THROWS_AS(sgd_update<double>(p, short_g, v, 0.1, 0.0, 0.0), Error);
}

TEST_CASE("sgd_step keeps one velocity buffer per parameter") {
  nn::Param a("a", {2}), b("b", {3});
  a.value = {1, 2};
  a.grad = {0.5f, 0.5f};
  b.value = {1, 1, 1};
  b.grad = {1, 1, 1};
  OptimizerState st;
  sgd_step({&a, &b}, st, 0.1, 0.9, 0.0);
  CHECK(st.steps == 1);
  REQUIRE(st.velocity.size() == 2);
  CHECK(st.velocity[1].size() == 3);
  CHECK(a.value[0] == doctest::Approx(0.95));
  CHECK_THROWS_AS(sgd_step({&a}, st, 0.1, 0.9, 0.0), Error);
  b.grad.resize(1);
  OptimizerState fresh;
  CHECK_THROWS_AS(sgd_step({&b}, fresh, 0.1, 0.9, 0.0), Error);
}

TEST_CASE("plain sgd step decreases a convex quadratic below the curvature bound") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.1, 5.0), s(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = u(rng);
    double x0 = s(rng);
    if (std::abs(x0) < 1e-3) x0 = 1.0;
    const double lr = std::uniform_real_distribution<double>(1e-3, 2.0 / a - 1e-3)(rng);
    std::vector<double> p{x0}, g{a * x0}, v{0.0};
    sgd_update<double>(p, g, v, lr, 0.0, 0.0);
    CHECK(0.5 * a * p[0] * p[0] < 0.5 * a * x0 * x0);
  }
}

TEST_CASE("train config presets, validation and JSON") {
  const auto paper = TrainConfig::paper(Stage::Fcn);
  CHECK(paper.lr == 1e-4);
  CHECK(paper.joint_lr == 1e-5);
  CHECK(paper.momentum == 0.9);
  CHECK(paper.weight_decay == 5e-4);
  CHECK(paper.batch_size == 25);
  CHECK(paper.fcn_epochs == 30);
  CHECK(paper.frozen_epochs == 20);
  CHECK(paper.joint_epochs == 40);
  CHECK(TrainConfig::desk(Stage::Fcn).batch_size == 8);

  nlohmann::json j = paper;
  CHECK(j.get<TrainConfig>().lr == paper.lr);
  auto bad = paper;
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = paper;
  bad.fcn_epochs = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(stage_from_string("warmup"), Error);
}

TEST_CASE("fcn stage lowers the loss and is deterministic") {
  const Dataset data = small_dataset(8);
  auto run = [&] {
    JointModel m(seg_only(), 1);
    auto cfg = TrainConfig::desk(Stage::Fcn);
    return train_fcn_stage(m, data, cfg);
  };
  const auto h1 = run();
  const auto h2 = run();
  REQUIRE(h1.epochs.size() == 30);
  CHECK(h1.epochs.back().loss < h1.epochs.front().loss);
  for (size_t e = 0; e < h1.epochs.size(); ++e) {
    CHECK(std::abs(h1.epochs[e].loss - h2.epochs[e].loss) <= 1e-6);
    CHECK(h1.epochs[e].fcn_checksum == h2.epochs[e].fcn_checksum);
  }
}

TEST_CASE("fcn stage needs training instances") {
  DatasetConfig dc;
  dc.num_scenes = 1;
  dc.train_scenes = 0;
  dc.num_frames = 3;
  const auto specs = build_scene_specs(dc);
  const Dataset data = make_dataset(specs, default_splits(dc, specs.size()));
  JointModel m(seg_only(), 1);
  try {
    train_fcn_stage(m, data, TrainConfig::desk(Stage::Fcn));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EmptyData);
  }
}

TEST_CASE("segmentation samples need the person at t-1 unless t = 0") {
  const Dataset data = small_dataset(6);
  for (const auto& s : segmentation_samples(data, Split::Train)) {
    const Sequence& seq = data.view(s.ref.scene, s.ref.view);
    CHECK(seq.find(s.ref.frame, s.ref.identity) != nullptr);
    if (s.ref.frame > 0) CHECK(seq.find(s.ref.frame - 1, s.ref.identity) != nullptr);
  }
}

TEST_CASE("joint stage freezes the fcn exactly, then updates it") {
  const Dataset data = small_dataset(3);
  const auto pairs = sample_pairs(data, Problem::ThirdThird, 1.0, 4);
  const ModelConfig mc = matching();
  auto run = [&] {
    JointModel m(mc, 2);
    auto cfg = TrainConfig::desk(Stage::Joint);
    cfg.frozen_epochs = 2;
    cfg.joint_epochs = 1;
    cfg.max_pairs_per_epoch = 6;
    std::vector<uint64_t> sums;
    const auto h = train_joint_stage(m, data, pairs, cfg, [&](const EpochRecord& r, JointModel&) {
      sums.push_back(r.fcn_checksum);
    });
    return std::make_pair(h, sums);
  };
  const auto [h, sums] = run();
  REQUIRE(sums.size() == 3);
  CHECK(sums[0] == h.fcn_checksum_start);
  CHECK(sums[1] == h.fcn_checksum_start);
  CHECK(sums[2] != h.fcn_checksum_start);
  CHECK(h.epochs[0].phase == "frozen");
  CHECK(h.epochs[2].phase == "joint");

  const auto [h2, sums2] = run();
  for (size_t e = 0; e < h.epochs.size(); ++e) {
    CHECK(std::abs(h.epochs[e].loss - h2.epochs[e].loss) <= 1e-6);
    CHECK(sums[e] == sums2[e]);
  }
}

TEST_CASE("identical positive pair has zero matching loss") {
  const Dataset data = small_dataset(3);
  const auto pairs = sample_pairs(data, Problem::ThirdThird, 1.0, 4);
  ExamplePair same = pairs.front();
  same.side_b = same.side_a;
  same.label = 1;
  JointModel m(matching(), 5);
  auto cfg = TrainConfig::desk(Stage::Joint);
  cfg.frozen_epochs = 1;
  cfg.joint_epochs = 0;
  const auto h = train_joint_stage(m, data, {same}, cfg);
  CHECK(h.epochs[0].siam_loss == 0.0);
}

TEST_CASE("joint stage input checks") {
  const Dataset data = small_dataset(3);
  JointModel with(matching(), 1);
  JointModel without(seg_only(), 1);
  auto cfg = TrainConfig::desk(Stage::Joint);
  CHECK_THROWS_AS(train_joint_stage(with, data, {}, cfg), Error);
  const auto pairs = sample_pairs(data, Problem::ThirdThird, 1.0, 4);
  CHECK_THROWS_AS(train_joint_stage(without, data, pairs, cfg), Error);
  cfg.problem = Problem::ThirdFirst;
  CHECK_THROWS_AS(train_joint_stage(with, data, pairs, cfg), Error);
}

TEST_CASE("matching loss reaches the fcn through soft attention") {
  const Dataset data = small_dataset(3);
  JointModel m(matching(), 9);
  const auto pairs = sample_pairs(data, Problem::ThirdThird, 1.0, 4);
  const ExamplePair& p = pairs.front();
  const InstanceRef a = p.side_a, b = std::get<InstanceRef>(p.side_b);
  nn::zero_grad(m.all_params());

  struct Fwd {
    SegNet::Trace trace;
    SegOutput out;
    ReweightTrace rw;
    EmbeddingHead::Trace head;
    Embedding emb;
  };
  auto forward = [&](const InstanceRef& r, Fwd& f) {
    const Sequence& seq = data.view(r.scene, r.view);
    const Mask pre = premask_for(m, data, r, false);
    f.out = m.seg().forward(make_seg_input(seq.frames, seq.flows, r.frame, pre,
                                           m.seg().config().flow_stack),
                            &f.trace);
    const auto w = reweight(f.out.visual5, f.out.motion5, f.out.probs,
                            ReweightMode::SoftAttention, Problem::ThirdThird, std::nullopt, &f.rw);
    f.emb = m.head().forward(w.spatial, w.temporal, &f.head);
  };
  Fwd fa, fb;
  forward(a, fa);
  forward(b, fb);
  nn::Tensor ga(fa.emb.c, fa.emb.h, fa.emb.w), gb(fb.emb.c, fb.emb.h, fb.emb.w);
  // Positive pair: d/da of sum (a-b)^2.
  for (size_t i = 0; i < ga.v.size(); ++i) {
    ga.v[i] = 2.0f * (fa.emb.v[i] - fb.emb.v[i]);
    gb.v[i] = -ga.v[i];
  }
  for (auto* f : {&fa, &fb}) {
    auto [gs, gt] = m.head().backward(f->head, f == &fa ? ga : gb);
    const ReweightGrads rg = reweight_backward(f->rw, gs, gt);
    m.seg().backward(f->trace, {rg.probs, rg.spatial, rg.temporal, {}});
  }
  double norm = 0;
  for (const auto* prm : m.fcn_params())
    for (float g : prm->grad) norm += double(g) * g;
  CHECK(norm > 0.0);
}
