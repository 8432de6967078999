#include <gtest/gtest.h>

#include <cmath>

#include "semdiff/errors.hpp"
#include "semdiff/gradcheck.hpp"

using namespace semdiff;

namespace {

ag::Var random_param(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return ag::Var::parameter(std::move(t));
}

// Weighted sum so every output element carries a distinct gradient.
ag::Var probe(const ag::Var& y, const Tensor& weights) {
  return ag::sum(ag::mul(y, ag::Var::constant(weights)));
}

Tensor random_like(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

void expect_grads(const std::function<ag::Var()>& f, const nn::StateRefs& refs, Rng& rng,
                  double tol = 1e-5, std::size_t samples = 30) {
  const auto r = check_gradients(f, refs, samples, rng);
  for (const auto& e : r.entries) {
    EXPECT_LT(e.rel_error, tol) << e.param << "[" << e.index << "] analytic " << e.analytic
                                << " numeric " << e.numeric;
  }
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  Rng rng(1);
  auto a = random_param({3, 4}, rng), b = random_param({3, 4}, rng);
  const Tensor w = random_like({3, 4}, rng);
  nn::StateRefs refs;
  refs.add("a", a);
  refs.add("b", b);
  const std::vector<double> rows{0.5, -1.5, 2.0};
  expect_grads([&] { return probe(ag::add(ag::mul(a, b), ag::scale(ag::sub(a, b), 0.3)), w); }, refs, rng);
  expect_grads([&] { return probe(ag::tanh(ag::gelu(a)), w); }, refs, rng);
  expect_grads([&] { return probe(ag::exp(ag::scale_rows(a, rows)), w); }, refs, rng);
  expect_grads([&] { return ag::mse_loss(ag::add_scalar(a, 0.2), b); }, refs, rng);
}

TEST(Autograd, ReluAndClampAwayFromKinks) {
  Rng rng(2);
  Tensor t({20});
  for (std::size_t i = 0; i < 20; ++i) t[i] = (i % 2 ? 1.0 : -1.0) * (0.1 + 0.1 * i);
  auto a = ag::Var::parameter(t);
  const Tensor w = random_like({20}, rng);
  nn::StateRefs refs;
  refs.add("a", a);
  expect_grads([&] { return probe(ag::relu(a), w); }, refs, rng);
  expect_grads([&] { return probe(ag::clamp(a, -0.55, 0.75), w); }, refs, rng);
}

TEST(Autograd, LinearAndConvolutions) {
  Rng rng(3);
  auto x = random_param({2, 3, 6, 6}, rng);
  auto cw = random_param({4, 3, 3, 3}, rng, 0.3), cb = random_param({4}, rng);
  auto tw = random_param({3, 2, 3, 3}, rng, 0.3), tb = random_param({2}, rng);
  auto lw = random_param({5, 7}, rng, 0.3), lb = random_param({5}, rng);
  auto lx = random_param({2, 7}, rng);
  nn::StateRefs refs;
  refs.add("x", x);
  refs.add("cw", cw);
  refs.add("cb", cb);
  refs.add("tw", tw);
  refs.add("tb", tb);
  const Tensor w1 = random_like({2, 4, 3, 3}, rng);
  expect_grads([&] { return probe(ag::conv2d(x, cw, cb, 2, 1), w1); }, refs, rng, 1e-5, 60);
  const Tensor w2 = random_like({2, 2, 12, 12}, rng);
  expect_grads([&] { return probe(ag::conv_transpose2d(x, tw, tb, 2, 1, 1), w2); }, refs, rng, 1e-5, 60);
  nn::StateRefs lrefs;
  lrefs.add("x", lx);
  lrefs.add("w", lw);
  lrefs.add("b", lb);
  const Tensor w3 = random_like({2, 5}, rng);
  expect_grads([&] { return probe(ag::linear(lx, lw, lb), w3); }, lrefs, rng);
}

TEST(Autograd, ConvMatchesDirectLoop) {
  Rng rng(4);
  const Tensor x = random_like({1, 2, 5, 5}, rng);
  const Tensor w = random_like({3, 2, 3, 3}, rng);
  const Tensor y = ag::conv2d(ag::Var::constant(x), ag::Var::constant(w), ag::Var(), 1, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 3, 5, 5}));
  for (std::size_t o = 0; o < 3; ++o) {
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 2; ++c) {
          for (int di = 0; di < 3; ++di) {
            for (int dj = 0; dj < 3; ++dj) {
              const int ii = i + di - 1, jj = j + dj - 1;
              if (ii < 0 || jj < 0 || ii >= 5 || jj >= 5) continue;
              acc += x.at(0, c, ii, jj) * w.at(o, c, di, dj);
            }
          }
        }
        EXPECT_NEAR(y.at(0, o, i, j), acc, 1e-12);
      }
    }
  }
}

TEST(Autograd, Normalizations) {
  Rng rng(5);
  auto x = random_param({2, 4, 3, 3}, rng);
  auto g = random_param({4}, rng), b = random_param({4}, rng);
  nn::StateRefs refs;
  refs.add("x", x);
  refs.add("g", g);
  refs.add("b", b);
  const Tensor w = random_like({2, 4, 3, 3}, rng);
  expect_grads([&] { return probe(ag::group_norm(x, g, b, 2), w); }, refs, rng, 1e-4, 60);
  ag::BatchNormState state{Tensor({4}, 0.0), Tensor({4}, 1.0)};
  expect_grads([&] { return probe(ag::batch_norm(x, g, b, state, true), w); }, refs, rng, 1e-4, 60);
}

TEST(Autograd, StructuralOps) {
  Rng rng(6);
  auto a = random_param({2, 2, 4, 4}, rng), c = random_param({2, 3, 4, 4}, rng);
  auto bias = random_param({2, 5}, rng);
  nn::StateRefs refs;
  refs.add("a", a);
  refs.add("c", c);
  refs.add("bias", bias);
  const Tensor w = random_like({2, 5, 8, 8}, rng);
  expect_grads(
      [&] { return probe(ag::upsample_nearest2x(ag::add_channel_bias(ag::concat_channels(a, c), bias)), w); },
      refs, rng, 1e-5, 60);
}

TEST(Autograd, LinearAttentionAndPower) {
  Rng rng(7);
  auto q = random_param({2, 3, 5}, rng), k = random_param({2, 3, 5}, rng), v = random_param({2, 3, 5}, rng);
  nn::StateRefs refs;
  refs.add("q", q);
  refs.add("k", k);
  refs.add("v", v);
  const Tensor w = random_like({2, 3, 5}, rng);
  expect_grads([&] { return probe(ag::linear_attention(q, k, v), w); }, refs, rng, 1e-5, 60);

  auto z = random_param({3, 8}, rng);
  nn::StateRefs zr;
  zr.add("z", z);
  const Tensor wz = random_like({3, 1, 4, 4}, rng);
  expect_grads([&] { return probe(ag::pad_to_image(ag::power_normalize(z, 1.5), {1, 4, 4}), wz); }, zr, rng);
  const Tensor p = ag::power_normalize(z, 1.5).value();
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < 8; ++i) s += p[r * 8 + i] * p[r * 8 + i];
    EXPECT_NEAR(s / 4.0, 1.5, 1e-12);
  }
}

TEST(Autograd, GradientAccumulatesOverReuse) {
  auto a = ag::Var::parameter(Tensor({1}, 3.0));
  ag::Var y = ag::mul(a, a);
  y = ag::add(y, a);
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
  a.zero_grad();
  EXPECT_DOUBLE_EQ(a.grad()[0], 0.0);
}

TEST(Autograd, ShapeErrors) {
  auto a = ag::Var::constant(Tensor({2, 3}));
  auto b = ag::Var::constant(Tensor({3, 2}));
  EXPECT_THROW(ag::add(a, b), ShapeError);
  EXPECT_THROW(a.backward(), ShapeError);
}
