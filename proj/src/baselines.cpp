#include "semdiff/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff {

std::vector<double> vae_sample_raw(const VaeHead& head, Rng& rng) {
  if (head.mu.size() != head.log_var.size()) throw ShapeError("VAE head lengths differ");
  std::vector<double> z(head.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double lv = std::clamp(head.log_var[i], kLogVarMin, kLogVarMax);
    z[i] = head.mu[i] + std::exp(0.5 * lv) * rng.normal();
  }
  return z;
}

SemanticLatent vae_reparameterize(const VaeHead& head, Rng& rng, double power) {
  const auto z = vae_sample_raw(head, rng);
  return normalize_power(z, 0.0, power);
}

double kl_divergence(const VaeHead& head) {
  if (head.mu.size() != head.log_var.size()) throw ShapeError("VAE head lengths differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < head.mu.size(); ++i) {
    const double lv = std::clamp(head.log_var[i], kLogVarMin, kLogVarMax);
    kl += head.mu[i] * head.mu[i] + std::exp(lv) - lv - 1.0;
  }
  return 0.5 * kl;
}

double vae_loss(const Tensor& x0, const Tensor& x_hat, const VaeHead& head) {
  require_same_shape(x0, x_hat, "vae_loss");
  double se = 0.0;
  for (std::size_t i = 0; i < x0.numel(); ++i) se += (x0[i] - x_hat[i]) * (x0[i] - x_hat[i]);
  return se / static_cast<double>(x0.numel()) + kl_divergence(head);
}

ag::Var kl_divergence(const ag::Var& mu, const ag::Var& log_var) {
  const double n = static_cast<double>(mu.shape()[0]);
  ag::Var terms = ag::sub(ag::add(ag::mul(mu, mu), ag::exp(log_var)), log_var);
  return ag::scale(ag::sum(ag::add_scalar(terms, -1.0)), 0.5 / n);
}

MatchedDecoder::MatchedDecoder(const EncoderConfig& cfg, const ConvTrunk& trunk, double cbr,
                               Rng& rng)
    : latent_len_(latent_dim(cfg.input_dim(), cbr)),
      channels_(trunk.out_channels()),
      size_(trunk.out_size()),
      cbr_(cbr) {
  fc_ = nn::Linear(latent_len_, trunk.feature_dim(), rng);
  const auto& strides = trunk.strides();
  const std::size_t layers = cfg.conv_channels.size();
  for (std::size_t k = 0; k < layers; ++k) {
    const std::size_t i = layers - 1 - k;
    const std::size_t in = cfg.conv_channels[i];
    const std::size_t out = i == 0 ? cfg.input_channels : cfg.conv_channels[i - 1];
    const int stride = strides[i];
    deconvs_.emplace_back(in, out, 3, stride, 1, stride - 1, rng, i == 0 ? 1.0 : 2.0);
  }
}

ag::Var MatchedDecoder::operator()(const ag::Var& latent) const {
  if (latent.shape().size() != 2 || latent.shape()[1] != latent_len_) {
    throw InvalidArgument("matched decoder expects latents of length " +
                          std::to_string(latent_len_) + " (CBR " + std::to_string(cbr_) +
                          "), got " + shape_str(latent.shape()));
  }
  ag::Var h = ag::relu(fc_(latent));
  h = ag::reshape(h, {latent.shape()[0], channels_, size_, size_});
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    h = deconvs_[i](h);
    h = i + 1 < deconvs_.size() ? ag::relu(h) : ag::tanh(h);
  }
  return h;
}

Tensor MatchedDecoder::decode(const SemanticLatent& latent) const {
  const Tensor z({1, latent.values.size()}, latent.values);
  return (*this)(ag::Var::constant(z)).value();
}

void MatchedDecoder::collect(const std::string& prefix, nn::StateRefs& refs) const {
  fc_.collect(prefix + ".fc", refs);
  for (std::size_t i = 0; i < deconvs_.size(); ++i) {
    deconvs_[i].collect(prefix + ".deconv" + std::to_string(i), refs);
  }
}

VaeEncoder::VaeEncoder(const EncoderConfig& cfg, double cbr, Rng& rng) : trunk_(cfg, rng), cbr_(cbr) {
  const std::size_t len = latent_dim(cfg.input_dim(), cbr);
  mu_head_ = nn::Linear(trunk_.feature_dim(), len, rng, 1.0);
  log_var_head_ = nn::Linear(trunk_.feature_dim(), len, rng, 0.1);
}

VaeEncoder::Output VaeEncoder::operator()(const ag::Var& x, bool training) {
  const ag::Var f = trunk_(x, training);
  return {mu_head_(f), ag::clamp(log_var_head_(f), kLogVarMin, kLogVarMax)};
}

std::vector<VaeHead> VaeEncoder::heads(const Tensor& x) {
  const auto out = (*this)(ag::Var::constant(x), false);
  const std::size_t n = out.mu.shape()[0], len = out.mu.shape()[1];
  std::vector<VaeHead> heads(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto mu = out.mu.value().data();
    const auto lv = out.log_var.value().data();
    heads[i].mu.assign(mu.begin() + i * len, mu.begin() + (i + 1) * len);
    heads[i].log_var.assign(lv.begin() + i * len, lv.begin() + (i + 1) * len);
  }
  return heads;
}

void VaeEncoder::collect(const std::string& prefix, nn::StateRefs& refs) {
  trunk_.collect(prefix + ".trunk", refs);
  mu_head_.collect(prefix + ".mu", refs);
  log_var_head_.collect(prefix + ".log_var", refs);
}

}  // namespace semdiff
