#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "semdiff/denoiser.hpp"
#include "semdiff/errors.hpp"
#include "semdiff/gradcheck.hpp"

using namespace semdiff;

namespace {

DenoiserConfig tiny_config(bool attention = false) {
  DenoiserConfig cfg;
  cfg.image_size = 8;
  cfg.base_dim = 4;
  cfg.dim_mults = {1, 2};
  cfg.blocks_per_stage = 1;
  cfg.attention = attention;
  cfg.groups = 2;
  return cfg;
}

Tensor randn(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = rng.normal();
  return t;
}

// The output layer starts at zero; give it values so the output depends on the input.
void randomize_output_layer(UNetDenoiser& net, Rng& rng) {
  nn::StateRefs refs;
  net.collect("net", refs);
  for (auto& [name, var] : refs.params) {
    if (name.find("final_conv") == std::string::npos) continue;
    for (auto& v : var.mutable_value().data()) v = 0.3 * rng.normal();
  }
}

}  // namespace

TEST(TimeEmbedding, Properties) {
  const std::size_t dim = 32;
  const auto e0 = sinusoidal_time_embedding(0.0, dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    EXPECT_EQ(e0[i], 0.0);
    EXPECT_EQ(e0[i + 1], 1.0);
  }
  std::vector<std::vector<double>> all;
  for (std::size_t t = 1; t <= 200; ++t) {
    auto e = sinusoidal_time_embedding(static_cast<double>(t), dim);
    double n2 = 0.0;
    for (double v : e) n2 += v * v;
    EXPECT_LE(std::sqrt(n2), std::sqrt(static_cast<double>(dim)) + 1e-12);
    const double f1 = std::pow(10000.0, -1.0 / (dim / 2 - 1));
    EXPECT_NEAR(e[2], std::sin(t * f1), 1e-12);
    EXPECT_NEAR(e[3], std::cos(t * f1), 1e-12);
    all.push_back(std::move(e));
  }
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      double d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d += std::abs(all[a][i] - all[b][i]);
      EXPECT_GT(d, 1e-6);
    }
  }
  EXPECT_THROW(sinusoidal_time_embedding(1.0, 7), InvalidArgument);
}

TEST(Denoiser, OutputShapeAndZeroInit) {
  Rng rng(1);
  for (bool attention : {false, true}) {
    UNetDenoiser net(tiny_config(attention), rng);
    const Tensor x = randn({3, 1, 8, 8}, rng), c = randn({3, 1, 8, 8}, rng);
    const std::vector<std::size_t> steps{1, 50, 200};
    const Tensor y = net.forward(ag::Var::constant(x), ag::Var::constant(c), steps).value();
    EXPECT_EQ(y.shape(), x.shape());
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
  }
  DenoiserConfig full;
  UNetDenoiser big(full, rng);
  const Tensor x = randn({1, 1, 32, 32}, rng);
  EXPECT_EQ(big.predict_x0(x, x, 10).shape(), x.shape());
}

TEST(Denoiser, BatchPermutationEquivariance) {
  Rng rng(2);
  UNetDenoiser net(tiny_config(true), rng);
  randomize_output_layer(net, rng);
  const Tensor x = randn({3, 1, 8, 8}, rng), c = randn({3, 1, 8, 8}, rng);
  const std::vector<std::size_t> steps{5, 80, 190};
  const Tensor y = net.forward(ag::Var::constant(x), ag::Var::constant(c), steps).value();
  const std::vector<std::size_t> perm{2, 0, 1};
  const std::vector<std::size_t> psteps{190, 5, 80};
  const Tensor yp = net.forward(ag::Var::constant(x.gather_rows(perm)), ag::Var::constant(c.gather_rows(perm)), psteps)
                        .value();
  const Tensor expected = y.gather_rows(perm);
  for (std::size_t i = 0; i < yp.numel(); ++i) EXPECT_NEAR(yp[i], expected[i], 1e-12);
}

TEST(Denoiser, DependsOnConditionAndTime) {
  Rng rng(3);
  UNetDenoiser net(tiny_config(), rng);
  randomize_output_layer(net, rng);
  const Tensor x = randn({1, 1, 8, 8}, rng), c1 = randn({1, 1, 8, 8}, rng), c2 = randn({1, 1, 8, 8}, rng);
  auto diff = [](const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) d += std::abs(a[i] - b[i]);
    return d;
  };
  EXPECT_GT(diff(net.predict_x0(x, c1, 10), net.predict_x0(x, c2, 10)), 1e-6);
  EXPECT_GT(diff(net.predict_x0(x, c1, 10), net.predict_x0(x, c1, 150)), 1e-6);
}

TEST(Denoiser, EveryParameterReceivesGradient) {
  Rng rng(4);
  UNetDenoiser net(tiny_config(true), rng);
  randomize_output_layer(net, rng);
  nn::StateRefs refs;
  net.collect("net", refs);
  const Tensor x = randn({2, 1, 8, 8}, rng), c = randn({2, 1, 8, 8}, rng), target = randn({2, 1, 8, 8}, rng);
  const std::vector<std::size_t> steps{3, 120};
  refs.zero_grad();
  ag::mse_loss(net.forward(ag::Var::constant(x), ag::Var::constant(c), steps), ag::Var::constant(target)).backward();
  for (const auto& [name, var] : refs.params) {
    double g = 0.0;
    for (double v : var.grad().data()) g += std::abs(v);
    EXPECT_GT(g, 0.0) << name;
  }
}

TEST(Denoiser, GradientCheck) {
  Rng rng(5);
  UNetDenoiser net(tiny_config(true), rng);
  randomize_output_layer(net, rng);
  nn::StateRefs refs;
  net.collect("net", refs);
  const Tensor x = randn({2, 1, 8, 8}, rng), c = randn({2, 1, 8, 8}, rng), target = randn({2, 1, 8, 8}, rng);
  const std::vector<std::size_t> steps{7, 99};
  auto loss = [&] {
    return ag::mse_loss(net.forward(ag::Var::constant(x), ag::Var::constant(c), steps), ag::Var::constant(target));
  };
  const auto r = check_gradients(loss, refs, 40, rng, 1e-5, 1e-7);
  ASSERT_GE(r.entries.size(), 20u);
  for (const auto& e : r.entries) {
    EXPECT_LT(e.rel_error, 1e-4) << e.param << "[" << e.index << "] " << e.analytic << " vs " << e.numeric;
  }
}

TEST(Denoiser, RejectsBadInputs) {
  Rng rng(6);
  DenoiserConfig bad = tiny_config();
  bad.groups = 3;
  EXPECT_THROW(UNetDenoiser(bad, rng), InvalidArgument);
  UNetDenoiser net(tiny_config(), rng);
  const Tensor x = randn({2, 1, 8, 8}, rng);
  const std::vector<std::size_t> one{1};
  EXPECT_THROW(net.forward(ag::Var::constant(x), ag::Var::constant(x), one), ShapeError);
}
