#include "semdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff {

ConditionTensor ConditionTensor::zeros(const Shape& batched_shape) {
  if (batched_shape.size() != 4) throw ShapeError("ConditionTensor::zeros expects (N, C, H, W)");
  ConditionTensor c;
  c.data = Tensor(batched_shape);
  c.mask = Tensor({batched_shape[1], batched_shape[2], batched_shape[3]});
  return c;
}

ForwardCoefficients forward_coefficients(const DiffusionSchedule& s, std::size_t t) {
  if (t < 1 || t > s.steps()) throw InvalidArgument("forward step out of range");
  const double sqrt_abar = std::sqrt(s.alpha_bar(t));
  return {(1.0 - s.w(t)) * sqrt_abar, s.w(t) * sqrt_abar, std::sqrt(s.delta(t))};
}

Tensor forward_combine(const Tensor& x0, const Tensor& cond, const Tensor& eps,
                       const DiffusionSchedule& s, std::size_t t) {
  require_same_shape(x0, cond, "forward_diffuse");
  require_same_shape(x0, eps, "forward_diffuse");
  const auto c = forward_coefficients(s, t);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = c.signal * x0[i] + c.condition * cond[i] + c.noise_std * eps[i];
  }
  return out;
}

DiffusedSample forward_diffuse(const Tensor& x0, const ConditionTensor& cond, std::size_t t,
                               const DiffusionSchedule& s, Rng& rng) {
  require_same_shape(x0, cond.data, "forward_diffuse");
  DiffusedSample out;
  out.t = t;
  out.x0 = x0;
  out.cond = cond;
  out.eps = Tensor(x0.shape());
  rng.fill_normal(out.eps.data());
  out.x_t = forward_combine(x0, cond.data, out.eps, s, t);
  return out;
}

Tensor replay(const DiffusedSample& sample, const DiffusionSchedule& s) {
  return forward_combine(sample.x0, sample.cond.data, sample.eps, s, sample.t);
}

Tensor predict_eps(const Tensor& x_t, const Tensor& x0_hat, std::size_t t,
                   const DiffusionSchedule& s) {
  require_same_shape(x_t, x0_hat, "predict_eps");
  if (t < 1 || t > s.steps()) throw InvalidArgument("predict_eps step out of range");
  const double sqrt_abar = std::sqrt(s.alpha_bar(t));
  const double inv = 1.0 / std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - sqrt_abar * x0_hat[i]) * inv;
  return out;
}

Tensor reverse_mean(const Tensor& x_t, const ConditionTensor& cond, const Tensor& eps_hat,
                    std::size_t t, const DiffusionSchedule& s) {
  require_same_shape(x_t, eps_hat, "reverse_step");
  require_same_shape(x_t, cond.data, "reverse_step");
  const auto c = s.coefficients(t);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = c.psi_x * x_t[i] + c.psi_y * cond.data[i] - c.psi_eps * eps_hat[i];
  }
  return out;
}

double reverse_noise_std(const DiffusionSchedule& s, std::size_t t, const SamplerOptions& options) {
  if (t == 1 && options.suppress_final_noise) return 0.0;
  if (options.noise == SamplerNoise::kMarginal) return std::sqrt(s.delta(t));
  const double var = s.delta_cond(t) * s.delta(t - 1) / s.delta(t);
  return std::sqrt(std::max(var, 0.0));
}

Tensor reverse_step(const Tensor& x_t, const ConditionTensor& cond, const Tensor& eps_hat,
                    std::size_t t, const DiffusionSchedule& s, Rng& rng,
                    const SamplerOptions& options) {
  Tensor out = reverse_mean(x_t, cond, eps_hat, t, s);
  const double sd = reverse_noise_std(s, t, options);
  if (sd > 0.0) {
    for (auto& v : out.data()) v += sd * rng.normal();
  }
  return out;
}

Tensor sample(const ConditionTensor& cond, const X0Predictor& denoiser, const DiffusionSchedule& s,
              Rng& rng, const SamplerOptions& options) {
  Tensor x(cond.data.shape());
  rng.fill_normal(x.data());
  for (std::size_t t = s.steps(); t >= 1; --t) {
    const Tensor x0_hat = denoiser.predict_x0(x, cond.data, t);
    require_same_shape(x, x0_hat, "denoiser output");
    const Tensor eps_hat = predict_eps(x, x0_hat, t, s);
    x = reverse_step(x, cond, eps_hat, t, s, rng, options);
  }
  if (options.clamp_output) {
    for (auto& v : x.data()) v = std::clamp(v, -1.0, 1.0);
  }
  return x;
}

}  // namespace semdiff
