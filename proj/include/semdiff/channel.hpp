#pragma once

#include <span>
#include <vector>

#include "semdiff/rng.hpp"

namespace semdiff {

// N_c complex channel symbols stored as interleaved (re, im) pairs.
struct SemanticLatent {
  std::vector<double> values;
  double cbr = 0.0;
  double power = 1.0;

  std::size_t symbols() const noexcept { return values.size() / 2; }
  // (1 / N_c) * sum |z_i|^2
  double average_power() const;
};

struct Interferer {
  double coefficient = 0.0;
  SemanticLatent latent;
};

// Link parameters. The intended user's mixing coefficient is
// 1 - sum(interferer coefficients).
struct ChannelConfig {
  double snr_db = 0.0;
  double power = 1.0;
  std::vector<Interferer> interferers;

  double sigma2() const;
  double primary_coefficient() const;
  // Throws InvalidArgument on negative coefficients or a sum outside [0, 1].
  void validate() const;
};

// sigma^2 = P / 10^(snr / 10); +inf dB gives 0.
double snr_db_to_sigma2(double snr_db, double power = 1.0);
double sigma2_to_snr_db(double sigma2, double power = 1.0);

// Scales to (1 / N_c) sum |z_i|^2 == power, i.e. unit l2 norm times
// sqrt(N_c * power). Throws InvalidArgument on an all-zero vector.
SemanticLatent normalize_power(std::span<const double> values, double cbr = 0.0,
                               double power = 1.0);

// Adds circularly-symmetric complex Gaussian noise of variance sigma2 per
// symbol (sigma2 / 2 per real component).
void add_awgn(std::span<double> values, double sigma2, Rng& rng);

SemanticLatent awgn(const SemanticLatent& latent, const ChannelConfig& cfg, Rng& rng);

// Elementwise convex combination sum_i coeffs[i] * latent_i, with coeffs[0]
// applied to the primary. Shorter latents are zero-padded; the output keeps
// the primary's length.
SemanticLatent mix_interference(const SemanticLatent& primary,
                                std::span<const SemanticLatent> interferers,
                                std::span<const double> coeffs);

// Mixing followed by AWGN.
SemanticLatent transmit(const SemanticLatent& latent, const ChannelConfig& cfg, Rng& rng);

// 10 log10(c_1^2 P / (sum_{i>1} c_i^2 P + sigma^2)); coeffs[0] is the intended user.
double sinr_db(std::span<const double> coeffs, double power, double sigma2);

// Keeps each complex symbol independently with probability cbr_test / cbr_train,
// zeroes the dropped ones and renormalizes.
SemanticLatent stochastic_mask(const SemanticLatent& latent, double cbr_test, double cbr_train,
                               Rng& rng);

}  // namespace semdiff
