#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "coview/metrics.hpp"

using namespace coview;

namespace {

Mask from_points(int w, int h, std::initializer_list<std::pair<int, int>> pts) {
  Mask m(w, h);
  for (auto [y, x] : pts) m.at(y, x) = 1;
  return m;
}

// Precision at every positive rank, summed directly.
double ap_oracle(const std::vector<int>& labels) {
  double sum = 0;
  int pos = 0;
  for (size_t k = 0; k < labels.size(); ++k) {
    if (!labels[k]) continue;
    ++pos;
    int hits = 0;
    for (size_t i = 0; i <= k; ++i) hits += labels[i];
    sum += double(hits) / double(k + 1);
  }
  return sum / pos;
}

MatchResult make_match(int rows, int cols, std::vector<double> d, std::vector<int> q,
                       std::vector<int> c) {
  MatchResult m;
  m.rows = rows;
  m.cols = cols;
  m.distances = std::move(d);
  m.query_ids = std::move(q);
  m.candidate_ids = std::move(c);
  return m;
}

}  // namespace

TEST_CASE("iou worked examples") {
  const Mask a = from_points(2, 2, {{0, 0}, {0, 1}});
  const Mask b = from_points(2, 2, {{0, 1}, {1, 1}});
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(from_points(2, 2, {{0, 0}}), from_points(2, 2, {{1, 1}})) == 0.0);
  CHECK(iou(Mask(4, 4), Mask(4, 4)) == 1.0);
  CHECK_THROWS_AS(iou(Mask(2, 2), Mask(3, 2)), Error);
}

TEST_CASE("iou matches pixel counting and is symmetric") {
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 100; ++trial) {
    Mask a(9, 7), b(9, 7);
    for (auto& v : a.data()) v = coin(rng);
    for (auto& v : b.data()) v = coin(rng);
    int inter = 0, uni = 0;
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x) {
        inter += a.at(y, x) & b.at(y, x);
        uni += a.at(y, x) | b.at(y, x);
      }
    const double expect = uni ? double(inter) / uni : 1.0;
    CHECK(iou(a, b) == expect);
    CHECK(iou(b, a) == expect);
  }
}

TEST_CASE("average precision worked examples") {
  CHECK(*average_precision(std::vector<int>{1, 1, 0}) == 1.0);
  CHECK(*average_precision(std::vector<int>{1, 0, 1}) == doctest::Approx(0.8333333333));
  CHECK(*average_precision(std::vector<int>{0, 1}) == 0.5);
  CHECK_FALSE(average_precision(std::vector<int>{0, 0}).has_value());
  // Interpolation lifts the earlier precision to the later maximum.
  CHECK(*average_precision(std::vector<int>{0, 1, 1}, true) ==
        doctest::Approx((2.0 / 3 + 2.0 / 3) / 2));
}

TEST_CASE("average precision equals the direct oracle on random lists") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + int(rng() % 30);
    std::vector<int> labels(n);
    for (auto& l : labels) l = rng() % 3 == 0;
    labels[rng() % n] = 1;
    CHECK(std::abs(*average_precision(labels) - ap_oracle(labels)) <= 1e-9);
  }
}

TEST_CASE("forced choice examples") {
  const std::vector<double> d{0.1, 0.9, 0.8, 0.2};
  CHECK(forced_choice_acc(make_match(2, 2, d, {1, 2}, {1, 2})) == 1.0);
  CHECK(forced_choice_acc(make_match(2, 2, d, {1, 2}, {2, 1})) == 0.0);
  CHECK(forced_choice_acc(make_match(1, 2, {0.5, 0.5}, {7}, {7, 3})) == 1.0);
  CHECK(forced_choice_acc(make_match(1, 2, {0.5, 0.5}, {7}, {3, 7})) == 0.0);

  const auto s = forced_choice(make_match(2, 2, d, {1, 9}, {1, 2}));
  CHECK(s.queries == 1);
  CHECK(s.excluded == 1);
  CHECK(s.acc == 1.0);
  CHECK_THROWS_AS(forced_choice(make_match(0, 0, {}, {}, {})), Error);
  CHECK_THROWS_AS(forced_choice(make_match(1, 1, {-1.0}, {1}, {1})), Error);
}

TEST_CASE("accuracy and mAP are invariant under monotone distance transforms") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int rows = 4, cols = 5;
    std::vector<double> d(rows * cols);
    for (auto& v : d) v = u(rng);
    std::vector<int> q{1, 2, 3, 4}, c{1, 2, 3, 5, 2};
    const auto base = make_match(rows, cols, d, q, c);
    const double a = rng() % 4 + 0.5, p = 0.5 + (rng() % 3);
    auto moved = base;
    for (auto& v : moved.distances) v = a * std::pow(v, p) + std::log1p(v);
    CHECK(forced_choice_acc(moved) == forced_choice_acc(base));
    CHECK(mean_average_precision(moved).map == mean_average_precision(base).map);
  }
}

TEST_CASE("mAP skips queries without positives") {
  const auto m = make_match(2, 2, {0.1, 0.2, 0.3, 0.4}, {1, 8}, {2, 1});
  const auto s = mean_average_precision(m);
  CHECK(s.queries == 1);
  CHECK(s.skipped == 1);
  CHECK(s.map == 0.5);
}

TEST_CASE("precision recall curve") {
  const std::vector<double> d{0.1, 0.2, 0.3};
  const auto pr = pr_curve(d, std::vector<int>{1, 0, 1});
  REQUIRE(pr.size() == 3);
  CHECK(pr[0].precision == 1.0);
  CHECK(pr[0].recall == 0.5);
  CHECK(pr[1].precision == 0.5);
  CHECK(pr[1].recall == 0.5);
  CHECK(pr[2].precision == doctest::Approx(2.0 / 3.0));
  CHECK(pr[2].recall == 1.0);

  for (const auto& p : pr_curve(d, std::vector<int>{1, 1, 1})) CHECK(p.precision == 1.0);
  const auto single = pr_curve(std::vector<double>{0.4}, std::vector<int>{1});
  CHECK(single.size() == 1);
  CHECK(single[0].precision == 1.0);
  CHECK(single[0].recall == 1.0);
  CHECK_THROWS_AS(pr_curve(d, std::vector<int>{0, 0, 0}), Error);
  CHECK_THROWS_AS(pr_curve(d, std::vector<int>{1}), Error);

  std::mt19937_64 rng(3);
  std::vector<double> rd(40);
  std::vector<int> rl(40);
  for (size_t i = 0; i < rd.size(); ++i) {
    rd[i] = double(rng() % 10);
    rl[i] = rng() % 2;
  }
  rl[0] = 1;
  const auto curve = pr_curve(rd, rl);
  for (size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].recall >= curve[k - 1].recall);
  CHECK(curve.back().recall == 1.0);
}

TEST_CASE("report summary and JSON round trip") {
  EvalReport r;
  r.problem = "third-third";
  r.sequences.push_back({0, 0, 1, {1.0, 0.5, 0.25}, 0.375});
  r.sequences.push_back({0, 1, 1, {1.0, 0.75}, 0.75});
  r.summarize_iou();
  CHECK(r.mean_iou == doctest::Approx((0.5 + 0.25 + 0.75) / 3));
  REQUIRE(r.iou_by_frame.size() == 3);
  CHECK(r.iou_by_frame[1] == doctest::Approx(0.625));
  CHECK(r.iou_vs_length[2] == doctest::Approx(0.625));
  CHECK(r.iou_vs_length[3] == doctest::Approx(0.5));

  r.has_matching = true;
  r.map = 0.5;
  r.acc = 0.75;
  r.acc_by_candidates[3] = {4, 3};
  r.pr = {{1.0, 0.5}, {0.5, 1.0}};
  const auto back = EvalReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK(back.acc_by_candidates.at(3).acc() == 0.75);

  const auto dir = std::filesystem::temp_directory_path() / "coview_metrics_test";
  std::filesystem::create_directories(dir);
  save_report(dir / "r.json", r);
  CHECK(load_report(dir / "r.json").to_json() == r.to_json());
  r.write_iou_csv(dir / "iou.csv");
  r.write_pr_csv(dir / "pr.csv");
  CHECK(std::filesystem::file_size(dir / "pr.csv") > 0);
  CHECK_THROWS_AS(load_report(dir / "missing.json"), Error);
  std::filesystem::remove_all(dir);
}
