#pragma once

#include <cstddef>

#include "semdiff/rng.hpp"
#include "semdiff/schedule.hpp"
#include "semdiff/tensor.hpp"

namespace semdiff {

// Received latent padded and reshaped to the image layout.
//
// data is (N, C, H, W) (or (C, H, W) for a single sample); mask is (C, H, W)
// with 1 where a latent entry was placed. Positions with mask 0 are zero.
struct ConditionTensor {
  Tensor data;
  Tensor mask;
  std::size_t source_len = 0;

  // Zero condition of the given batched image shape (nothing transmitted).
  static ConditionTensor zeros(const Shape& batched_shape);
};

struct DiffusedSample {
  Tensor x_t;
  std::size_t t = 0;
  Tensor eps;
  Tensor x0;
  ConditionTensor cond;
};

struct ForwardCoefficients {
  double signal = 0.0;     // (1 - w_t) sqrt(abar_t)
  double condition = 0.0;  // w_t sqrt(abar_t)
  double noise_std = 0.0;  // sqrt(delta_t)
};

ForwardCoefficients forward_coefficients(const DiffusionSchedule& s, std::size_t t);

// x_t = signal * x0 + condition * cond + noise_std * eps.
Tensor forward_combine(const Tensor& x0, const Tensor& cond, const Tensor& eps,
                       const DiffusionSchedule& s, std::size_t t);

// Draws x_t ~ q(x_t | x0, cond) and keeps the exact Gaussian draw for replay.
DiffusedSample forward_diffuse(const Tensor& x0, const ConditionTensor& cond, std::size_t t,
                               const DiffusionSchedule& s, Rng& rng);

// Recomputes x_t from the stored (x0, cond, t, eps).
Tensor replay(const DiffusedSample& sample, const DiffusionSchedule& s);

// eps = (x_t - sqrt(abar_t) x0_hat) / sqrt(1 - abar_t).
Tensor predict_eps(const Tensor& x_t, const Tensor& x0_hat, std::size_t t,
                   const DiffusionSchedule& s);

enum class SamplerNoise {
  kMarginal,   // sqrt(delta_t)
  kPosterior,  // sqrt(delta_{t|t-1} delta_{t-1} / delta_t)
};

struct SamplerOptions {
  SamplerNoise noise = SamplerNoise::kMarginal;
  bool suppress_final_noise = true;
  bool clamp_output = true;
};

// psi_x x_t + psi_y cond - psi_eps eps_hat (the deterministic part of a step).
Tensor reverse_mean(const Tensor& x_t, const ConditionTensor& cond, const Tensor& eps_hat,
                    std::size_t t, const DiffusionSchedule& s);

// Standard deviation of the noise injected at step t.
double reverse_noise_std(const DiffusionSchedule& s, std::size_t t, const SamplerOptions& options);

Tensor reverse_step(const Tensor& x_t, const ConditionTensor& cond, const Tensor& eps_hat,
                    std::size_t t, const DiffusionSchedule& s, Rng& rng,
                    const SamplerOptions& options = {});

// Anything that predicts the clean sample from (x_t, condition, t).
class X0Predictor {
 public:
  virtual ~X0Predictor() = default;
  // x_t and cond are (N, C, H, W); every sample in the batch is at step t.
  virtual Tensor predict_x0(const Tensor& x_t, const Tensor& cond, std::size_t t) const = 0;
};

// Runs the reverse chain from x_T ~ N(0, I) down to t = 1.
Tensor sample(const ConditionTensor& cond, const X0Predictor& denoiser, const DiffusionSchedule& s,
              Rng& rng, const SamplerOptions& options = {});

}  // namespace semdiff
