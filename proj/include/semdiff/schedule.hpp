#pragma once

#include <cstddef>
#include <vector>

namespace semdiff {

enum class WeightSchedule { kLinear, kConstantZero };

struct SamplerCoefficients {
  double psi_x = 0.0;
  double psi_y = 0.0;
  double psi_eps = 0.0;
};

// Per-step schedules of the conditional diffusion process, precomputed at
// construction and immutable afterwards.
//
// Timesteps are 1-indexed (t = 1..T). Index 0 of every array holds the
// boundary values alpha_bar_0 = 1, w_0 = 0, delta_0 = 0 so the recurrences
// can be evaluated at t = 1 without special cases.
class DiffusionSchedule {
 public:
  std::size_t steps() const noexcept { return steps_; }

  double beta(std::size_t t) const { return beta_.at(check(t)); }
  double alpha(std::size_t t) const { return alpha_.at(check(t)); }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(check0(t)); }
  double w(std::size_t t) const { return w_.at(check0(t)); }
  // Forward-kernel variance (1 - abar_t) - w_t^2 abar_t.
  double delta(std::size_t t) const { return delta_.at(check0(t)); }
  // delta_t - ((1 - w_t) / (1 - w_{t-1}))^2 alpha_t delta_{t-1}.
  double delta_cond(std::size_t t) const { return delta_cond_.at(check(t)); }

  SamplerCoefficients coefficients(std::size_t t) const { return coeffs_.at(check(t)); }

  // Builds from explicit per-step beta and w arrays (index 0 = step 1).
  static DiffusionSchedule from_arrays(const std::vector<double>& betas,
                                       const std::vector<double>& weights);

 private:
  std::size_t check(std::size_t t) const;
  std::size_t check0(std::size_t t) const;

  std::size_t steps_ = 0;
  std::vector<double> beta_, alpha_, alpha_bar_, w_, delta_, delta_cond_;
  std::vector<SamplerCoefficients> coeffs_;
};

// Linear beta ramp from beta_start (t = 1) to beta_end (t = T). A linear w
// schedule runs from 0 at t = 1 to w_T = min(1, w_max), where w_max is the
// largest endpoint that keeps every delta_t strictly positive.
DiffusionSchedule build_schedule(std::size_t steps, double beta_start, double beta_end,
                                 WeightSchedule w_schedule);

// Closed-form reverse-sampler coefficients for step t in [2, T]. Step 1 is
// also accepted; there the boundary values make the step return x0_hat.
SamplerCoefficients sampler_coefficients(const DiffusionSchedule& s, std::size_t t);

}  // namespace semdiff
