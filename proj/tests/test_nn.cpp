#include <doctest.h>

#include <cmath>
#include <functional>

#include "patchguard/nn/ops.hpp"
#include "patchguard/nn/optim.hpp"
#include "support/gradcheck.hpp"

using namespace patchguard;
using namespace patchguard::nn;
using patchguard::testing::check_param_gradient;

namespace {

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Builds `body` on a fresh graph and reduces it with mse against a fixed
// random target, so every output element contributes to the loss.
void check_all(ParamMap<double>& params, const std::function<Var(Graph<double>&, ParamMap<double>&)>& body,
               std::size_t samples = 6) {
  Rng rng(RandomSeed{99});
  Tensor<double> target;
  {
    Graph<double> g(false);
    auto out = body(g, params);
    target = random_tensor(g.value(out).shape, rng);
  }
  auto loss = [&](ParamMap<double>& p, bool backward) {
    Graph<double> g(backward);
    Var out = body(g, p);
    Var l = mse(g, out, g.input(target));
    if (backward) g.backward(l);
    return g.value(l).data[0];
  };
  for (auto& [name, p] : params) {
    auto results = check_param_gradient(params, name, loss, samples, rng);
    for (const auto& r : results) {
      CAPTURE(r.name);
      CAPTURE(r.index);
      CAPTURE(r.analytic);
      CAPTURE(r.numeric);
      CHECK(r.rel_error < 1e-4);
    }
  }
}

}  // namespace

TEST_CASE("linear gradient") {
  Rng rng(RandomSeed{1});
  ParamMap<double> p;
  p.emplace("x", Param<double>(random_tensor({5, 4}, rng)));
  p.emplace("w", Param<double>(random_tensor({3, 4}, rng)));
  p.emplace("b", Param<double>(random_tensor({3}, rng)));
  check_all(p, [](Graph<double>& g, ParamMap<double>& q) {
    return linear(g, g.param(q.at("x")), g.param(q.at("w")), g.param(q.at("b")));
  });
}

TEST_CASE("layer norm, gelu, relu, sigmoid gradients") {
  Rng rng(RandomSeed{2});
  ParamMap<double> p;
  p.emplace("x", Param<double>(random_tensor({4, 6}, rng, 2.0)));
  p.emplace("gamma", Param<double>(random_tensor({6}, rng)));
  p.emplace("beta", Param<double>(random_tensor({6}, rng)));
  check_all(p, [](Graph<double>& g, ParamMap<double>& q) {
    Var h = layer_norm(g, g.param(q.at("x")), g.param(q.at("gamma")), g.param(q.at("beta")));
    h = gelu(g, h);
    Var r = relu(g, h);
    return add(g, sigmoid(g, h), r);
  });
}

TEST_CASE("attention gradient") {
  Rng rng(RandomSeed{3});
  ParamMap<double> p;
  p.emplace("qkv", Param<double>(random_tensor({7, 12}, rng, 1.5)));
  check_all(p, [](Graph<double>& g, ParamMap<double>& q) { return attention(g, g.param(q.at("qkv")), 2); }, 12);
}

TEST_CASE("cosine distance gradient and values") {
  Rng rng(RandomSeed{4});
  ParamMap<double> p;
  p.emplace("a", Param<double>(random_tensor({5, 8}, rng)));
  p.emplace("b", Param<double>(random_tensor({5, 8}, rng)));
  check_all(p, [](Graph<double>& g, ParamMap<double>& q) {
    return cosine_distance_rows(g, g.param(q.at("a")), g.param(q.at("b")));
  });

  Graph<double> g(false);
  Tensor<double> x({2, 2}, std::vector<double>{1, 0, 0, 1});
  Tensor<double> y({2, 2}, std::vector<double>{2, 0, 0, -3});
  auto d = g.value(cosine_distance_rows(g, g.input(x), g.input(y)));
  CHECK(d.data[0] == doctest::Approx(0.0));
  CHECK(d.data[1] == doctest::Approx(2.0));
}

TEST_CASE("conv2d, upsample, token reshape gradients") {
  Rng rng(RandomSeed{5});
  ParamMap<double> p;
  p.emplace("x", Param<double>(random_tensor({2, 6, 6}, rng)));
  p.emplace("w", Param<double>(random_tensor({3, 2, 3, 3}, rng)));
  p.emplace("b", Param<double>(random_tensor({3}, rng)));
  p.emplace("t", Param<double>(random_tensor({9, 3}, rng)));
  check_all(p, [](Graph<double>& g, ParamMap<double>& q) {
    Var y = conv2d(g, g.param(q.at("x")), g.param(q.at("w")), g.param(q.at("b")), 2, 1);  // [3,3,3]
    y = add(g, y, tokens_to_chw(g, g.param(q.at("t")), 3, 3));
    return upsample2x(g, y);
  });
}

TEST_CASE("conv2d matches direct convolution") {
  Rng rng(RandomSeed{6});
  auto x = random_tensor({2, 5, 4}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  Graph<double> g(false);
  auto y = g.value(conv2d(g, g.input(x), g.input(w), Var{}, 1, 1));
  REQUIRE(y.shape == std::vector<std::size_t>{3, 5, 4});
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t yy = 0; yy < 5; ++yy)
      for (std::size_t xx = 0; xx < 4; ++xx) {
        double acc = 0;
        for (std::size_t c = 0; c < 2; ++c)
          for (int ky = -1; ky <= 1; ++ky)
            for (int kx = -1; kx <= 1; ++kx) {
              const int iy = static_cast<int>(yy) + ky, ix = static_cast<int>(xx) + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 4) continue;
              acc += x.data[(c * 5 + iy) * 4 + ix] * w.data[((o * 2 + c) * 3 + (ky + 1)) * 3 + (kx + 1)];
            }
        CHECK(y.data[(o * 5 + yy) * 4 + xx] == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("frozen parameters receive no gradient and stop_gradient cuts the path") {
  Rng rng(RandomSeed{7});
  Param<float> w(random_tensor({2, 3}, rng).cast<float>(), false);
  Param<float> x(random_tensor({4, 3}, rng).cast<float>(), true);
  Graph<float> g;
  Var y = linear(g, g.param(x), g.param(w), Var{});
  Var l = mean(g, y);
  g.backward(l);
  for (float v : w.grad.data) CHECK(v == 0.0f);
  bool nonzero = false;
  for (float v : x.grad.data) nonzero |= v != 0.0f;
  CHECK(nonzero);

  x.zero_grad();
  Graph<float> g2;
  Var cut = stop_gradient(g2, g2.param(x));
  g2.backward(mean(g2, cut));
  for (float v : x.grad.data) CHECK(v == 0.0f);
}

TEST_CASE("adam decreases a quadratic") {
  Param<float> x(Tensor<float>({3}, std::vector<float>{1.0f, -2.0f, 3.0f}));
  Adam opt({0.1f});
  opt.add("x", x);
  float first = 0, last = 0;
  for (int i = 0; i < 100; ++i) {
    Graph<float> g;
    Var l = mse(g, g.param(x), g.input(Tensor<float>({3})));
    if (i == 0) first = g.value(l).data[0];
    last = g.value(l).data[0];
    g.backward(l);
    opt.step();
  }
  CHECK(last < first * 0.01f);
  CHECK(opt.steps() == 100);
}
