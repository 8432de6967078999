#include "semdiff/schedule.hpp"

#include <cmath>
#include <string>

#include "semdiff/errors.hpp"

namespace semdiff {

namespace {

// Fraction of the largest feasible w_T actually used when w_T = 1 is
// infeasible, leaving delta_t strictly positive.
constexpr double kClampMargin = 0.999;

std::vector<double> linear_ramp(std::size_t steps, double start, double end) {
  std::vector<double> out(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    out[i] = start + (end - start) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  return out;
}

}  // namespace

std::size_t DiffusionSchedule::check(std::size_t t) const {
  if (t < 1 || t > steps_) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [1, " +
                          std::to_string(steps_) + "]");
  }
  return t;
}

std::size_t DiffusionSchedule::check0(std::size_t t) const {
  if (t > steps_) {
    throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " +
                          std::to_string(steps_) + "]");
  }
  return t;
}

DiffusionSchedule DiffusionSchedule::from_arrays(const std::vector<double>& betas,
                                                 const std::vector<double>& weights) {
  const std::size_t steps = betas.size();
  if (steps < 2) throw InvalidArgument("schedule needs T >= 2 steps");
  if (weights.size() != steps) throw InvalidArgument("beta and w arrays differ in length");

  DiffusionSchedule s;
  s.steps_ = steps;
  s.beta_.assign(steps + 1, 0.0);
  s.alpha_.assign(steps + 1, 1.0);
  s.alpha_bar_.assign(steps + 1, 1.0);
  s.w_.assign(steps + 1, 0.0);
  s.delta_.assign(steps + 1, 0.0);
  s.delta_cond_.assign(steps + 1, 0.0);
  s.coeffs_.assign(steps + 1, SamplerCoefficients{});

  for (std::size_t t = 1; t <= steps; ++t) {
    const double b = betas[t - 1];
    if (!(b > 0.0 && b < 1.0)) {
      throw InvalidArgument("beta_" + std::to_string(t) + " = " + std::to_string(b) +
                            " outside (0, 1)");
    }
    const double w = weights[t - 1];
    if (!(w >= 0.0 && w <= 1.0)) {
      throw InvalidArgument("w_" + std::to_string(t) + " outside [0, 1]");
    }
    s.beta_[t] = b;
    s.alpha_[t] = 1.0 - b;
    s.alpha_bar_[t] = s.alpha_bar_[t - 1] * s.alpha_[t];
    s.w_[t] = w;
    s.delta_[t] = (1.0 - s.alpha_bar_[t]) - w * w * s.alpha_bar_[t];
    if (!(s.delta_[t] > 0.0)) {
      throw InvalidArgument("delta_" + std::to_string(t) + " = " + std::to_string(s.delta_[t]) +
                            " is not positive");
    }
  }
  for (std::size_t t = 1; t <= steps; ++t) {
    if (s.w_[t - 1] >= 1.0) {
      throw InvalidArgument("w_" + std::to_string(t - 1) + " = 1 before the final step");
    }
    const double ratio = (1.0 - s.w_[t]) / (1.0 - s.w_[t - 1]);
    s.delta_cond_[t] = s.delta_[t] - ratio * ratio * s.alpha_[t] * s.delta_[t - 1];
  }
  for (std::size_t t = 1; t <= steps; ++t) s.coeffs_[t] = sampler_coefficients(s, t);
  return s;
}

DiffusionSchedule build_schedule(std::size_t steps, double beta_start, double beta_end,
                                 WeightSchedule w_schedule) {
  if (steps < 2) throw InvalidArgument("schedule needs T >= 2 steps");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw InvalidArgument("need 0 < beta_start <= beta_end < 1");
  }
  const auto betas = linear_ramp(steps, beta_start, beta_end);
  if (w_schedule == WeightSchedule::kConstantZero) {
    return DiffusionSchedule::from_arrays(betas, std::vector<double>(steps, 0.0));
  }

  // With w_t = r_t * w_T and r_t = (t - 1) / (T - 1), delta_t > 0 holds iff
  // w_T^2 < (1 - abar_t) / (r_t^2 abar_t) for every t > 1.
  double abar = 1.0;
  double w_max_sq = INFINITY;
  for (std::size_t t = 1; t <= steps; ++t) {
    abar *= 1.0 - betas[t - 1];
    const double r = static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    if (r > 0.0) w_max_sq = std::min(w_max_sq, (1.0 - abar) / (r * r * abar));
  }
  const double w_max = std::sqrt(w_max_sq);
  const double w_end = w_max > 1.0 ? 1.0 : kClampMargin * w_max;
  return DiffusionSchedule::from_arrays(betas, linear_ramp(steps, 0.0, w_end));
}

SamplerCoefficients sampler_coefficients(const DiffusionSchedule& s, std::size_t t) {
  if (t < 1 || t > s.steps()) {
    throw InvalidArgument("sampler step " + std::to_string(t) + " outside [1, " +
                          std::to_string(s.steps()) + "]");
  }
  const double w = s.w(t), w_prev = s.w(t - 1);
  const double a = s.alpha(t), abar = s.alpha_bar(t), abar_prev = s.alpha_bar(t - 1);
  const double d = s.delta(t), d_prev = s.delta(t - 1), d_cond = s.delta_cond(t);
  const double sqrt_a = std::sqrt(a);

  SamplerCoefficients c;
  c.psi_x = d_prev * (1.0 - w) / (d * (1.0 - w_prev)) * sqrt_a +
            (1.0 - w_prev) * d_cond / (d * sqrt_a);
  c.psi_y = (w_prev * d - w * (1.0 - w) / (1.0 - w_prev) * a * d_prev) * std::sqrt(abar_prev) / d;
  c.psi_eps = (1.0 - w_prev) * d_cond * std::sqrt(1.0 - abar) / (d * sqrt_a);
  return c;
}

}  // namespace semdiff
