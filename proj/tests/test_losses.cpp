#include <doctest.h>

#include <random>
#include <vector>

#include "coview/losses.hpp"

using namespace coview;

TEST_CASE("seg_loss scalar cases") {
  const std::vector<double> p1{0.5};
  const std::vector<uint8_t> s1{1};
  CHECK(seg_loss<double>(p1, s1) == doctest::Approx(0.693147).epsilon(1e-6));

  const std::vector<double> p2{0.9, 0.2};
  const std::vector<uint8_t> s2{1, 0};
  const double expected = -std::log(0.9) - std::log(0.8);
  CHECK(std::abs(seg_loss<double>(p2, s2) - expected) < 1e-12);
  CHECK(std::abs(seg_loss<double>(p2, s2) - 0.3285) < 1e-4);
}

TEST_CASE("seg_loss perfect prediction limit and clamp gradient") {
  const double eps = kProbEpsilon;
  const std::vector<double> p{1 - eps, eps, 1.0, 0.0};
  const std::vector<uint8_t> s{1, 0, 1, 0};
  std::vector<double> g(4);
  const double loss = seg_loss<double>(p, s, g);
  CHECK(loss == doctest::Approx(-4 * std::log1p(-eps)));
  CHECK(loss < 1e-5);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("seg_loss shape mismatch") {
  const std::vector<double> p{0.5, 0.5};
  const std::vector<uint8_t> s{1};
  CHECK_THROWS_AS(seg_loss<double>(p, s), Error);
}

TEST_CASE("contrastive_loss scalar cases") {
  const std::vector<double> a{0.2}, b{0.5};
  const std::vector<int> neg{0}, pos{1};
  CHECK(std::abs(contrastive_loss<double>(a, b, neg, 1.0) - 0.49) < 1e-9);
  CHECK(contrastive_loss<double>(a, a, pos, 1.0) == 0.0);

  const std::vector<double> far_a{0.0, 3.0}, far_b{1.5, 1.0};
  const std::vector<int> one_neg{0};
  CHECK(contrastive_loss<double>(far_a, far_b, one_neg, 1.0) == 0.0);

  const std::vector<int> bad{2};
  CHECK_THROWS_AS(contrastive_loss<double>(a, b, bad, 1.0), Error);
  CHECK_THROWS_AS(contrastive_loss<double>(a, b, neg, 0.0), Error);
}

TEST_CASE("squared_distance") {
  const std::vector<double> a{1, 0}, b{0, 2};
  CHECK(squared_distance<double>(a, b) == 5.0);
  CHECK(squared_distance<double>(a, a) == 0.0);
}

TEST_CASE("loss gradients against central differences") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95), n(-1.0, 1.0);
  const size_t N = 2 * 3 * 4 * 4;
  std::vector<double> p(N), g(N);
  std::vector<uint8_t> s(N);
  for (size_t i = 0; i < N; ++i) {
    p[i] = u(rng);
    s[i] = rng() % 2;
  }
  seg_loss<double>(p, s, g);
  for (size_t i = 0; i < N; ++i) {
    const double h = 1e-6;
    auto q = p;
    q[i] += h;
    const double up = seg_loss<double>(q, s);
    q[i] -= 2 * h;
    const double dn = seg_loss<double>(q, s);
    const double fd = (up - dn) / (2 * h);
    CHECK(std::abs(fd - g[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }

  std::vector<double> a(N), b(N), ga(N), gb(N);
  for (size_t i = 0; i < N; ++i) {
    a[i] = n(rng);
    b[i] = n(rng);
  }
  const std::vector<int> labels{1, 0};
  contrastive_loss<double>(a, b, labels, 1.0, ga, gb);
  for (size_t i = 0; i < N; ++i) {
    const double h = 1e-6;
    auto q = a;
    q[i] += h;
    const double up = contrastive_loss<double>(q, b, labels, 1.0);
    q[i] -= 2 * h;
    const double dn = contrastive_loss<double>(q, b, labels, 1.0);
    const double fd = (up - dn) / (2 * h);
    CHECK(std::abs(fd - ga[i]) <= 1e-4 * std::max(1.0, std::abs(fd)));
    CHECK(gb[i] == -ga[i]);
  }
}
