#include <doctest.h>

#include "coview/nn.hpp"
#include "grad_check.hpp"

using namespace coview;
using namespace coview::nn;
using gradcheck::dot;
using gradcheck::max_rel_error;
using gradcheck::random_tensor;

TEST_CASE("conv2d matches a direct convolution") {
  std::mt19937_64 rng(1);
  Conv2d conv("c", 3, 4, 3, 2, 1);
  conv.init_he(rng);
  for (auto& b : conv.bias.value) b = 0.1f;
  const Tensor x = random_tensor(3, 7, 6, rng);
  const Tensor y = conv.forward(x);
  REQUIRE(y.c == 4);
  REQUIRE(y.h == 4);
  REQUIRE(y.w == 3);
  for (int o = 0; o < 4; ++o)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox) {
        double s = conv.bias.value[o];
        for (int i = 0; i < 3; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || ix < 0 || iy >= x.h || ix >= x.w) continue;
              s += conv.weight.value[((o * 3 + i) * 3 + ky) * 3 + kx] * x.at(i, iy, ix);
            }
        CHECK(y.at(o, oy, ox) == doctest::Approx(s).epsilon(1e-5));
      }
}

TEST_CASE("conv2d gradients") {
  std::mt19937_64 rng(2);
  for (int k : {1, 3}) {
    Conv2d conv("c", 3, 5, k);
    conv.init_he(rng);
    Tensor x = random_tensor(3, 6, 5, rng);
    const Tensor proj = random_tensor(5, 6, 5, rng);
    conv.weight.zero_grad();
    conv.bias.zero_grad();
    const Tensor gx = conv.backward(x, proj, true);
    auto loss = [&] { return dot(conv.forward(x), proj); };
    CHECK(max_rel_error(conv.weight.value, conv.weight.grad, loss, 40, rng) < 2e-2);
    CHECK(max_rel_error(conv.bias.value, conv.bias.grad, loss, 5, rng) < 2e-2);
    CHECK(max_rel_error(x.v, gx.v, loss, 40, rng) < 2e-2);
  }
}

TEST_CASE("transposed conv gradients and bilinear upsampling") {
  std::mt19937_64 rng(3);
  ConvTranspose2d up("u", 2, 2, 4, 2, 1);
  for (auto& w : up.weight.value) w = std::uniform_real_distribution<float>(-1, 1)(rng);
  Tensor x = random_tensor(2, 3, 4, rng);
  const Tensor y = up.forward(x);
  REQUIRE(y.h == 6);
  REQUIRE(y.w == 8);
  const Tensor proj = random_tensor(2, 6, 8, rng);
  up.weight.zero_grad();
  up.bias.zero_grad();
  const Tensor gx = up.backward(x, proj, true);
  auto loss = [&] { return dot(up.forward(x), proj); };
  CHECK(max_rel_error(up.weight.value, up.weight.grad, loss, 40, rng) < 2e-2);
  CHECK(max_rel_error(x.v, gx.v, loss, 20, rng) < 2e-2);

  ConvTranspose2d bil("b", 1, 1, 16, 8, 4);
  bil.init_bilinear();
  const Tensor flat(1, 4, 4, 0.7f);
  const Tensor out = bil.forward(flat);
  REQUIRE(out.h == 32);
  // Interior of a constant map stays constant.
  for (int yy = 8; yy < 24; ++yy)
    for (int xx = 8; xx < 24; ++xx) CHECK(out.at(0, yy, xx) == doctest::Approx(0.7f));
}

TEST_CASE("pooling, softmax and channel plumbing") {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor(2, 4, 6, rng);
  std::vector<int32_t> arg;
  const Tensor p = maxpool2(x, arg);
  REQUIRE(p.h == 2);
  REQUIRE(p.w == 3);
  CHECK(p.at(1, 1, 2) == std::max({x.at(1, 2, 4), x.at(1, 2, 5), x.at(1, 3, 4), x.at(1, 3, 5)}));
  const Tensor proj = random_tensor(2, 2, 3, rng);
  const Tensor gx = maxpool2_backward(proj, arg, 4, 6);
  double s = 0;
  for (float v : gx.v) s += v;
  double t = 0;
  for (float v : proj.v) t += v;
  CHECK(s == doctest::Approx(t));

  const Tensor a = avgpool(x, 2);
  CHECK(a.at(0, 0, 0) ==
        doctest::Approx((x.at(0, 0, 0) + x.at(0, 0, 1) + x.at(0, 1, 0) + x.at(0, 1, 1)) / 4));
  const Tensor ga = avgpool_backward(proj, 2);
  auto avg_loss = [&] { return dot(avgpool(x, 2), proj); };
  CHECK(max_rel_error(x.v, ga.v, avg_loss, 20, rng) < 2e-2);

  Tensor logits = random_tensor(2, 3, 3, rng, -3, 3);
  const Tensor probs = softmax_channels(logits);
  for (int i = 0; i < 9; ++i) CHECK(probs.v[i] + probs.v[9 + i] == doctest::Approx(1.0f));
  const Tensor sp = random_tensor(2, 3, 3, rng);
  const Tensor gl = softmax_backward(probs, sp);
  auto sm_loss = [&] { return dot(softmax_channels(logits), sp); };
  CHECK(max_rel_error(logits.v, gl.v, sm_loss, 18, rng, 1e-3f) < 2e-2);

  const Tensor zeros(2, 3, 3, 0.0f);
  const Tensor half = softmax_channels(zeros);
  for (float v : half.v) CHECK(v == 0.5f);

  const Tensor b = random_tensor(3, 4, 6, rng);
  const Tensor cat = concat_channels(x, b);
  CHECK(cat.c == 5);
  Tensor g1, g2;
  split_channels(cat, 2, g1, g2);
  CHECK(g1.v == x.v);
  CHECK(g2.v == b.v);
}

TEST_CASE("checksum tracks values") {
  Param p("w", {2, 2});
  ParamList list{&p};
  const auto c0 = checksum(list);
  p.value[3] = 1e-30f;
  CHECK(checksum(list) != c0);
  CHECK(parameter_count(list) == 4);
}
