#pragma once

#include <vector>

#include "semdiff/encoder.hpp"

namespace semdiff {

// Log-variances are clamped to this range before use.
inline constexpr double kLogVarMin = -30.0;
inline constexpr double kLogVarMax = 20.0;

struct VaeHead {
  std::vector<double> mu;
  std::vector<double> log_var;
};

// mu + exp(log_var / 2) * eps with eps ~ N(0, I), before power normalization.
std::vector<double> vae_sample_raw(const VaeHead& head, Rng& rng);
// Reparameterized draw followed by power normalization.
SemanticLatent vae_reparameterize(const VaeHead& head, Rng& rng, double power = 1.0);

// KL(N(mu, diag sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - log sigma^2 - 1).
double kl_divergence(const VaeHead& head);
// Pixel MSE plus KL with equal weights.
double vae_loss(const Tensor& x0, const Tensor& x_hat, const VaeHead& head);

// Batched KL term averaged over the leading axis (autograd).
ag::Var kl_divergence(const ag::Var& mu, const ag::Var& log_var);

// Decoder mirroring the conv trunk: linear projection back to the trunk's
// feature map, then transposed convolutions in reverse order, tanh output.
class MatchedDecoder {
 public:
  MatchedDecoder() = default;
  MatchedDecoder(const EncoderConfig& cfg, const ConvTrunk& trunk, double cbr, Rng& rng);

  std::size_t latent_len() const noexcept { return latent_len_; }
  double cbr() const noexcept { return cbr_; }

  // (N, latent_len) -> (N, C, 32, 32); throws on a latent length mismatch.
  ag::Var operator()(const ag::Var& latent) const;
  Tensor decode(const SemanticLatent& latent) const;

  void collect(const std::string& prefix, nn::StateRefs& refs) const;

 private:
  nn::Linear fc_;
  std::vector<nn::ConvTranspose2d> deconvs_;
  std::size_t latent_len_ = 0, channels_ = 0, size_ = 0;
  double cbr_ = 0.0;
};

// Matched-decoder benchmark encoder producing mean and log-variance heads.
class VaeEncoder {
 public:
  VaeEncoder() = default;
  VaeEncoder(const EncoderConfig& cfg, double cbr, Rng& rng);

  struct Output {
    ag::Var mu;
    ag::Var log_var;  // already clamped
  };
  Output operator()(const ag::Var& x, bool training);
  std::vector<VaeHead> heads(const Tensor& x);

  ConvTrunk& trunk() noexcept { return trunk_; }
  double cbr() const noexcept { return cbr_; }
  void collect(const std::string& prefix, nn::StateRefs& refs);

 private:
  ConvTrunk trunk_;
  nn::Linear mu_head_, log_var_head_;
  double cbr_ = 0.0;
};

}  // namespace semdiff
