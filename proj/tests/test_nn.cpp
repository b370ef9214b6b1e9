#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "fforge/error.hpp"
#include "fforge/nn/layers.hpp"
#include "fforge/nn/optim.hpp"

using namespace fforge;
using namespace fforge::nn;

namespace {

Tensor random_tensor(Shape s, Rng& rng) {
  Tensor t(s);
  for (float& v : t.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

// Scalar objective sum(probe * f(x)); returns objective and the tape grads.
struct Probe {
  std::function<NodeId(Tape&, NodeId)> f;
  Tensor weights;

  double eval(const Tensor& x) {
    Tape tape(false);
    const NodeId out = f(tape, tape.input(x));
    const auto& y = tape.value(out).values();
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(weights.values()[i]) * y[i];
    return acc;
  }
};

void check_gradients(std::function<NodeId(Tape&, NodeId)> f, Shape in_shape, std::vector<Parameter*> params,
                     std::uint64_t seed = 7) {
  Rng rng(seed);
  Tensor x = random_tensor(in_shape, rng);
  Tape tape(true);
  const NodeId xid = tape.input(x, true);
  const NodeId out = f(tape, xid);
  Probe probe{f, random_tensor(tape.value(out).shape(), rng)};
  tape.backward(out, probe.weights);

  const double h = 1e-2;
  for (std::size_t i = 0; i < x.numel(); i += std::max<std::size_t>(1, x.numel() / 23)) {
    Tensor xp = x, xm = x;
    xp.values()[i] += static_cast<float>(h);
    xm.values()[i] -= static_cast<float>(h);
    const double fd = (probe.eval(xp) - probe.eval(xm)) / (2 * h);
    CHECK(tape.grad(xid).values()[i] == doctest::Approx(fd).epsilon(2e-2).scale(1.0));
  }
  for (Parameter* p : params) {
    const auto& g = tape.param_grads().at(p);
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 11)) {
      const float saved = p->value[i];
      p->value[i] = saved + static_cast<float>(h);
      const double up = probe.eval(x);
      p->value[i] = saved - static_cast<float>(h);
      const double down = probe.eval(x);
      p->value[i] = saved;
      CHECK(g[i] == doctest::Approx((up - down) / (2 * h)).epsilon(2e-2).scale(1.0));
    }
  }
}

}  // namespace

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(1);
  Conv2d conv(2, 3, 3, 2, "c", rng);
  for (float& b : conv.bias.value) b = static_cast<float>(rng.uniform(-1, 1));
  Tensor x = random_tensor({2, 2, 7, 6}, rng);
  Tape tape(false);
  const Tensor& y = tape.value(conv2d(tape, tape.input(x), conv));
  REQUIRE(y.shape() == Shape{2, 3, 4, 3});
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double acc = conv.bias.value[o];
          for (int c = 0; c < 2; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                acc += conv.weight.value[o * 18 + (c * 3 + ky) * 3 + kx] * x.at(n, c, iy, ix);
              }
          CHECK(y.at(n, o, oy, ox) == doctest::Approx(acc).epsilon(1e-5));
        }
}

TEST_CASE("conv_transpose2d matches a direct scatter and doubles the size") {
  Rng rng(2);
  ConvTranspose2d up(2, 2, 4, 2, 1, "t", rng);
  Tensor x = random_tensor({1, 2, 3, 4}, rng);
  Tape tape(false);
  const Tensor& y = tape.value(conv_transpose2d(tape, tape.input(x), up));
  REQUIRE(y.shape() == Shape{1, 2, 6, 8});
  Tensor ref(Shape{1, 2, 6, 8});
  for (int ci = 0; ci < 2; ++ci)
    for (int iy = 0; iy < 3; ++iy)
      for (int ix = 0; ix < 4; ++ix)
        for (int co = 0; co < 2; ++co)
          for (int ky = 0; ky < 4; ++ky)
            for (int kx = 0; kx < 4; ++kx) {
              const int oy = iy * 2 - 1 + ky, ox = ix * 2 - 1 + kx;
              if (oy < 0 || oy >= 6 || ox < 0 || ox >= 8) continue;
              ref.at(0, co, oy, ox) += up.weight.value[ci * 32 + (co * 4 + ky) * 4 + kx] * x.at(0, ci, iy, ix);
            }
  for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(y.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-5));
}

TEST_CASE("odd-kernel conv_transpose2d with output padding doubles the size") {
  Rng rng(5);
  ConvTranspose2d up(1, 1, 3, 2, 1, "t", rng, 1);
  Tensor x = random_tensor({1, 1, 3, 3}, rng);
  Tape tape(false);
  const Tensor& y = tape.value(conv_transpose2d(tape, tape.input(x), up));
  REQUIRE(y.shape() == Shape{1, 1, 6, 6});
  Tensor ref(Shape{1, 1, 6, 6});
  for (int iy = 0; iy < 3; ++iy)
    for (int ix = 0; ix < 3; ++ix)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int oy = iy * 2 - 1 + ky, ox = ix * 2 - 1 + kx;
          if (oy < 0 || oy >= 6 || ox < 0 || ox >= 6) continue;
          ref.at(0, 0, oy, ox) += up.weight.value[ky * 3 + kx] * x.at(0, 0, iy, ix);
        }
  for (std::size_t i = 0; i < ref.numel(); ++i) CHECK(y.values()[i] == doctest::Approx(ref.values()[i]).epsilon(1e-5));
}

TEST_CASE("upsampling reproduces constants and nearest replicates") {
  for (auto mode : {Resample::Nearest, Resample::Bilinear, Resample::Bicubic}) {
    Tape tape(false);
    const Tensor& y = tape.value(upsample2x(tape, tape.input(Tensor({1, 1, 3, 5}, 0.25f)), mode));
    CHECK(y.shape() == Shape{1, 1, 6, 10});
    for (float v : y.values()) CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));
  }
  Tensor x({1, 1, 1, 2});
  x.values()[0] = 1.0f;
  x.values()[1] = 3.0f;
  Tape tape(false);
  const Tensor& y = tape.value(upsample2x(tape, tape.input(x), Resample::Nearest));
  CHECK(y.values()[0] == 1.0f);
  CHECK(y.values()[1] == 1.0f);
  CHECK(y.values()[2] == 3.0f);
  CHECK(y.values()[7] == 3.0f);
}

TEST_CASE("gradients agree with central finite differences") {
  Rng rng(3);
  SUBCASE("conv2d") {
    Conv2d conv(2, 3, 3, 1, "c", rng);
    check_gradients([&](Tape& t, NodeId x) { return conv2d(t, x, conv); }, {2, 2, 5, 5}, {&conv.weight, &conv.bias});
  }
  SUBCASE("strided conv2d") {
    Conv2d conv(2, 2, 5, 2, "c", rng);
    check_gradients([&](Tape& t, NodeId x) { return conv2d(t, x, conv); }, {1, 2, 8, 6}, {&conv.weight, &conv.bias});
  }
  SUBCASE("conv_transpose2d") {
    ConvTranspose2d up(3, 2, 4, 2, 1, "t", rng);
    check_gradients([&](Tape& t, NodeId x) { return conv_transpose2d(t, x, up); }, {2, 3, 3, 3},
                    {&up.weight, &up.bias});
  }
  SUBCASE("conv_transpose2d, odd kernel") {
    ConvTranspose2d up(2, 3, 5, 2, 2, "t", rng, 1);
    check_gradients([&](Tape& t, NodeId x) { return conv_transpose2d(t, x, up); }, {1, 2, 3, 4},
                    {&up.weight, &up.bias});
  }
  SUBCASE("upsampling") {
    for (auto mode : {Resample::Nearest, Resample::Bilinear, Resample::Bicubic}) {
      check_gradients([&](Tape& t, NodeId x) { return upsample2x(t, x, mode); }, {1, 2, 4, 3}, {});
    }
  }
  SUBCASE("sigmoid, concat, pooling and linear") {
    Linear fc(6, 2, "fc", rng);
    check_gradients(
        [&](Tape& t, NodeId x) {
          const NodeId s = sigmoid(t, x);
          const NodeId cat = concat_channels(t, s, x);
          return linear(t, global_avg_pool(t, cat), fc);
        },
        {3, 3, 4, 4}, {&fc.weight, &fc.bias});
  }
}

TEST_CASE("relu passes gradient only where active") {
  Tensor x({1, 1, 1, 4}, std::vector<float>{-1.0f, 2.0f, -3.0f, 4.0f});
  Tape tape;
  const NodeId in = tape.input(x, true);
  const NodeId out = relu(tape, in);
  tape.backward(out, Tensor({1, 1, 1, 4}, 1.0f));
  CHECK(tape.grad(in).values()[0] == 0.0f);
  CHECK(tape.grad(in).values()[1] == 1.0f);
  CHECK(tape.grad(in).values()[3] == 1.0f);
}

TEST_CASE("dropout is the identity without an rng and rescales kept units") {
  Tensor x({1, 1, 10, 10}, 1.0f);
  Tape tape(false);
  const NodeId in = tape.input(x);
  CHECK(dropout(tape, in, 0.25f, nullptr) == in);
  Rng rng(4);
  const Tensor& y = tape.value(dropout(tape, in, 0.25f, &rng));
  for (float v : y.values()) CHECK((v == 0.0f || v == doctest::Approx(1.0f / 0.75f)));
}

TEST_CASE("losses") {
  Tensor p({1, 1, 1, 2}, std::vector<float>{0.0f, 1.0f});
  Tensor t({1, 1, 1, 2}, std::vector<float>{0.25f, 0.5f});
  CHECK(l1_loss(p, t).value == doctest::Approx(0.375));
  CHECK(mse_loss(p, t).value == doctest::Approx((0.0625 + 0.25) / 2));
  const auto bce = bce_with_logits(Tensor({2, 1, 1, 1}, std::vector<float>{0.0f, 100.0f}), {1.0f, 1.0f});
  CHECK(bce.value == doctest::Approx(std::log(2.0) / 2).epsilon(1e-6));
  CHECK(bce.grad.values()[0] == doctest::Approx(-0.25));
}

TEST_CASE("adam minimizes a quadratic") {
  Parameter p{"p", {2}, {3.0f, -2.0f}};
  Adam adam({&p}, AdamOptions{.lr = 0.1});
  for (int i = 0; i < 300; ++i) {
    Gradients g;
    g[&p] = {2.0f * p.value[0], 2.0f * p.value[1]};
    adam.step(g);
  }
  CHECK(std::abs(p.value[0]) < 0.05);
  CHECK(std::abs(p.value[1]) < 0.05);
}

TEST_CASE("parameter blobs round-trip bit-exactly") {
  Rng rng(5);
  Conv2d a(3, 4, 3, 1, "conv", rng);
  Conv2d b(3, 4, 3, 1, "conv", rng);
  std::stringstream buffer;
  write_parameters(buffer, {&a.weight, &a.bias});
  read_parameters(buffer, {&b.weight, &b.bias});
  CHECK(b.weight.value == a.weight.value);
  CHECK(parameter_checksum({&a.weight, &a.bias}) == parameter_checksum({&b.weight, &b.bias}));

  Conv2d wrong(3, 4, 5, 1, "conv", rng);
  std::stringstream again;
  write_parameters(again, {&a.weight, &a.bias});
  CHECK_THROWS_AS(read_parameters(again, {&wrong.weight, &wrong.bias}), Error);
}
