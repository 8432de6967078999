#include <gtest/gtest.h>

#include <cmath>

#include "semdiff/diffusion.hpp"
#include "semdiff/errors.hpp"
#include "semdiff/oracle.hpp"

using namespace semdiff;

namespace {

DiffusionSchedule reference_schedule() { return build_schedule(200, 1e-4, 0.0095, WeightSchedule::kLinear); }

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  rng.fill_normal(t.data());
  return t;
}

ConditionTensor random_cond(const Shape& shape, Rng& rng) {
  ConditionTensor c = ConditionTensor::zeros(shape);
  c.data = random_tensor(shape, rng);
  c.mask.fill(1.0);
  c.source_len = c.mask.numel();
  return c;
}

// Scalar toy: x0 ~ N(m, v), y = x0 + N(0, s2); the image is a single pixel.
LinearGaussianToy scalar_toy(const DiffusionSchedule& s) {
  LinearGaussianToy toy;
  toy.prior_mean = Eigen::VectorXd::Constant(1, 0.2);
  toy.prior_cov = Eigen::MatrixXd::Constant(1, 1, 0.09);
  toy.A = Eigen::MatrixXd::Identity(1, 1);
  toy.obs_var = 0.04;
  toy.schedule = s;
  return toy;
}

}  // namespace

TEST(Diffusion, ReplayIsBitExact) {
  Rng rng(1);
  const auto s = reference_schedule();
  const Shape shape{2, 1, 32, 32};
  const Tensor x0 = random_tensor(shape, rng);
  const auto cond = random_cond(shape, rng);
  for (std::size_t t : {1u, 57u, 200u}) {
    const auto d = forward_diffuse(x0, cond, t, s, rng);
    EXPECT_TRUE(replay(d, s) == d.x_t);
  }
}

TEST(Diffusion, ZeroNoiseZeroWeight) {
  Rng rng(2);
  const auto s = reference_schedule();
  const Shape shape{1, 1, 4, 4};
  const Tensor x0 = random_tensor(shape, rng);
  const auto cond = random_cond(shape, rng);
  const Tensor eps(shape);
  const Tensor x1 = forward_combine(x0, cond.data, eps, s, 1);
  for (std::size_t i = 0; i < x0.numel(); ++i) EXPECT_NEAR(x1[i], std::sqrt(s.alpha_bar(1)) * x0[i], 1e-15);
  const Tensor xT = forward_combine(x0, cond.data, eps, s, 200);
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    EXPECT_NEAR(xT[i], std::sqrt(s.alpha_bar(200)) * cond.data[i], 1e-12);
  }
}

TEST(Diffusion, ForwardMomentsMatchKernel) {
  Rng rng(3);
  const auto s = reference_schedule();
  const Shape shape{1, 1, 1, 2};
  const Tensor x0({1, 1, 1, 2}, {0.5, -0.3});
  ConditionTensor cond = ConditionTensor::zeros(shape);
  cond.data = Tensor(shape, {-0.8, 0.9});
  const std::size_t t = 120, n = 100000;
  const auto c = forward_coefficients(s, t);
  for (std::size_t k = 0; k < 2; ++k) {
    double sum = 0.0, sq = 0.0;
    Rng r = Rng::derive(3, k);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = forward_diffuse(x0, cond, t, s, r).x_t[k];
      sum += v;
      sq += v * v;
    }
    const double mean = sum / n, var = sq / n - mean * mean;
    const double expected = c.signal * x0[k] + c.condition * cond.data[k];
    EXPECT_NEAR(mean, expected, 3.0 * std::sqrt(s.delta(t) / n));
    // Var of the sample variance of a Gaussian is 2 sigma^4 / n.
    EXPECT_NEAR(var, s.delta(t), 3.0 * std::sqrt(2.0 / n) * s.delta(t));
  }
}

TEST(Diffusion, PredictEps) {
  Rng rng(4);
  const auto s = build_schedule(200, 1e-4, 0.0095, WeightSchedule::kConstantZero);
  const Shape shape{1, 1, 3, 3};
  const Tensor x0 = random_tensor(shape, rng), eps = random_tensor(shape, rng);
  const Tensor xt = forward_combine(x0, Tensor(shape), eps, s, 77);
  const Tensor got = predict_eps(xt, x0, 77, s);
  for (std::size_t i = 0; i < eps.numel(); ++i) EXPECT_NEAR(got[i], eps[i], 1e-12);

  Tensor scaled = xt;
  scaled *= 1.0 / std::sqrt(s.alpha_bar(77));
  const Tensor zero = predict_eps(xt, scaled, 77, s);
  for (std::size_t i = 0; i < zero.numel(); ++i) EXPECT_NEAR(zero[i], 0.0, 1e-12);

  const auto sp = reference_schedule();
  const Tensor a = random_tensor(shape, rng), b = random_tensor(shape, rng);
  const Tensor e = predict_eps(a, b, 150, sp);
  for (std::size_t i = 0; i < e.numel(); ++i) {
    const double ref = (a[i] - std::sqrt(sp.alpha_bar(150)) * b[i]) / std::sqrt(1.0 - sp.alpha_bar(150));
    EXPECT_NEAR(e[i], ref, 1e-12);
  }
}

TEST(Diffusion, ReverseStepReducesToVanillaDdpm) {
  Rng rng(5);
  const auto s = build_schedule(200, 1e-4, 0.0095, WeightSchedule::kConstantZero);
  std::vector<double> betas;
  for (int t = 1; t <= 200; ++t) betas.push_back(1e-4 + (0.0095 - 1e-4) * (t - 1) / 199.0);
  const Shape shape{1, 1, 4, 4};
  const auto zero = ConditionTensor::zeros(shape);
  for (std::size_t t = 1; t <= 200; ++t) {
    const Tensor xt = random_tensor(shape, rng), eps = random_tensor(shape, rng);
    const Tensor mine = reverse_mean(xt, zero, eps, t, s);
    const Tensor ref = vanilla_ddpm_reference_step(xt, eps, t, betas, nullptr);
    for (std::size_t i = 0; i < xt.numel(); ++i) ASSERT_NEAR(mine[i], ref[i], 1e-10) << "t=" << t;
  }
}

TEST(Diffusion, ZeroConditionContributesNothing) {
  Rng rng(6);
  const auto s = reference_schedule();
  const Shape shape{1, 1, 4, 4};
  const Tensor xt = random_tensor(shape, rng), eps = random_tensor(shape, rng);
  const auto zero = ConditionTensor::zeros(shape);
  const Tensor m = reverse_mean(xt, zero, eps, 100, s);
  const auto c = s.coefficients(100);
  for (std::size_t i = 0; i < m.numel(); ++i) EXPECT_EQ(m[i], c.psi_x * xt[i] + c.psi_y * 0.0 - c.psi_eps * eps[i]);
}

TEST(Diffusion, FinalStepIgnoresRng) {
  Rng rng(7);
  const auto s = reference_schedule();
  const Shape shape{1, 1, 4, 4};
  const Tensor xt = random_tensor(shape, rng), eps = random_tensor(shape, rng);
  const auto cond = random_cond(shape, rng);
  Rng a(100), b(200);
  EXPECT_TRUE(reverse_step(xt, cond, eps, 1, s, a) == reverse_step(xt, cond, eps, 1, s, b));
  Rng c(100), d(200);
  EXPECT_FALSE(reverse_step(xt, cond, eps, 2, s, c) == reverse_step(xt, cond, eps, 2, s, d));
}

TEST(Diffusion, ReverseStepShapeMismatch) {
  const auto s = reference_schedule();
  Rng rng(8);
  const auto cond = ConditionTensor::zeros({1, 1, 4, 4});
  EXPECT_THROW(reverse_step(Tensor({1, 1, 4, 4}), cond, Tensor({1, 1, 2, 2}), 5, s, rng), ShapeError);
  EXPECT_THROW(forward_diffuse(Tensor({1, 1, 4, 4}), cond, 0, s, rng), InvalidArgument);
}

TEST(Sampler, SingleChainWithinTwoPosteriorSd) {
  const auto s = reference_schedule();
  const auto toy = scalar_toy(s);
  const AnalyticDenoiser oracle(toy);
  const double y = 0.6;
  // E[x0 | y] and Var[x0 | y] for the scalar Gaussian.
  const double v = 0.09, s2 = 0.04;
  const double post_mean = 0.2 + v / (v + s2) * (y - 0.2);
  const double post_sd = std::sqrt(v * s2 / (v + s2));
  ConditionTensor cond = ConditionTensor::zeros({1, 1, 1, 1});
  cond.data[0] = y;
  SamplerOptions opts;
  opts.noise = SamplerNoise::kPosterior;
  Rng rng(9);
  const Tensor out = sample(cond, oracle, s, rng, opts);
  EXPECT_LT(std::abs(out[0] - post_mean), 2.0 * post_sd);
}

TEST(Sampler, ChainMeanMatchesConditionalMean) {
  const auto s = reference_schedule();
  const auto toy = scalar_toy(s);
  const AnalyticDenoiser oracle(toy);
  const double y = 0.6, v = 0.09, s2 = 0.04;
  const double post_mean = 0.2 + v / (v + s2) * (y - 0.2);
  const std::size_t chains = 10000;
  // All chains run as one batch of independent pixels.
  ConditionTensor cond = ConditionTensor::zeros({chains, 1, 1, 1});
  cond.data.fill(y);
  SamplerOptions opts;
  opts.clamp_output = false;
  Rng rng(10);
  const Tensor out = sample(cond, oracle, s, rng, opts);
  double sum = 0.0, sq = 0.0;
  for (double x : out.data()) {
    sum += x;
    sq += x * x;
  }
  const double mean = sum / chains;
  const double se = std::sqrt((sq / chains - mean * mean) / chains);
  EXPECT_NEAR(mean, post_mean, 3.0 * se);
}

TEST(Sampler, DeterministicAndClamped) {
  const auto s = reference_schedule();
  class ZeroDenoiser : public X0Predictor {
   public:
    Tensor predict_x0(const Tensor& x, const Tensor&, std::size_t) const override { return Tensor(x.shape()); }
  } zero;
  const auto cond = ConditionTensor::zeros({2, 1, 8, 8});
  Rng a(11), b(11);
  const Tensor x = sample(cond, zero, s, a);
  const Tensor y = sample(cond, zero, s, b);
  EXPECT_TRUE(x == y);
  for (double v : x.data()) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}
