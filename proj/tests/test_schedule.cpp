#include <gtest/gtest.h>

#include <cmath>

#include "semdiff/errors.hpp"
#include "semdiff/schedule.hpp"

using namespace semdiff;

namespace {

DiffusionSchedule reference() { return build_schedule(200, 1e-4, 0.0095, WeightSchedule::kLinear); }

}  // namespace

TEST(Schedule, AlphaBarMatchesDirectProduct) {
  const auto s = reference();
  double prod = 1.0;
  for (int t = 1; t <= 200; ++t) {
    const double beta = 1e-4 + (0.0095 - 1e-4) * (t - 1) / 199.0;
    prod *= 1.0 - beta;
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-12) << "t=" << t;
  }
  EXPECT_NEAR(s.alpha_bar(200), 0.381722135219536, 1e-12);
}

TEST(Schedule, DeltaPositiveEverywhere) {
  const auto s = reference();
  for (std::size_t t = 1; t <= s.steps(); ++t) {
    EXPECT_GT(s.delta(t), 0.0) << "t=" << t;
    EXPECT_GT(s.delta_cond(t), 0.0) << "t=" << t;
  }
  EXPECT_DOUBLE_EQ(s.w(1), 0.0);
  EXPECT_DOUBLE_EQ(s.w(200), 1.0);
  EXPECT_NEAR(s.delta(200), 0.23655572956092796, 1e-12);
}

TEST(Schedule, ClampsEndpointWhenUnitWeightInfeasible) {
  // Three steps with small betas: w_T = 1 would make delta_T negative.
  const auto s = build_schedule(3, 0.01, 0.02, WeightSchedule::kLinear);
  EXPECT_LT(s.w(3), 1.0);
  for (std::size_t t = 1; t <= 3; ++t) EXPECT_GT(s.delta(t), 0.0);
}

TEST(Schedule, ZeroWeightReducesToDdpm) {
  const auto s = build_schedule(50, 1e-3, 0.05, WeightSchedule::kConstantZero);
  for (std::size_t t = 1; t <= 50; ++t) {
    EXPECT_NEAR(s.delta(t), 1.0 - s.alpha_bar(t), 1e-15);
    const auto c = s.coefficients(t);
    // Vanilla posterior mean: (x_t - beta / sqrt(1 - abar) eps) / sqrt(alpha).
    EXPECT_NEAR(c.psi_x, 1.0 / std::sqrt(s.alpha(t)), 1e-12);
    EXPECT_NEAR(c.psi_eps, s.beta(t) / std::sqrt(1.0 - s.alpha_bar(t)) / std::sqrt(s.alpha(t)), 1e-12);
    EXPECT_NEAR(c.psi_y, 0.0, 1e-15);
  }
}

TEST(Schedule, FirstStepReturnsX0Estimate) {
  // At t = 1 the step is psi_x x_1 - psi_eps eps_hat, which equals x0_hat when
  // eps_hat = (x_1 - sqrt(abar_1) x0_hat) / sqrt(1 - abar_1).
  const auto s = reference();
  const auto c = s.coefficients(1);
  const double x1 = 0.37, x0 = -0.2;
  const double eps = (x1 - std::sqrt(s.alpha_bar(1)) * x0) / std::sqrt(1.0 - s.alpha_bar(1));
  EXPECT_NEAR(c.psi_x * x1 - c.psi_eps * eps, x0, 1e-9);
  EXPECT_DOUBLE_EQ(c.psi_y, 0.0);
}

TEST(Schedule, RejectsBadInput) {
  EXPECT_THROW(build_schedule(1, 1e-4, 0.01, WeightSchedule::kLinear), InvalidArgument);
  EXPECT_THROW(build_schedule(10, 0.0, 0.01, WeightSchedule::kLinear), InvalidArgument);
  EXPECT_THROW(build_schedule(10, 0.02, 0.01, WeightSchedule::kLinear), InvalidArgument);
  EXPECT_THROW(DiffusionSchedule::from_arrays({0.1, 0.1}, {0.0, 1.5}), InvalidArgument);
  // w = 1 at t = 1 makes delta_1 negative.
  EXPECT_THROW(DiffusionSchedule::from_arrays({0.1, 0.1}, {1.0, 1.0}), InvalidArgument);
  const auto s = reference();
  EXPECT_THROW(s.coefficients(0), InvalidArgument);
  EXPECT_THROW(s.coefficients(201), InvalidArgument);
}
