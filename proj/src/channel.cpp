#include "semdiff/channel.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "semdiff/errors.hpp"

namespace semdiff {

namespace {
constexpr double kCoefficientTolerance = 1e-9;
}

double SemanticLatent::average_power() const {
  if (symbols() == 0) return 0.0;
  double s = 0.0;
  for (double v : values) s += v * v;
  return s / static_cast<double>(symbols());
}

double ChannelConfig::sigma2() const { return snr_db_to_sigma2(snr_db, power); }

double ChannelConfig::primary_coefficient() const {
  double s = 0.0;
  for (const auto& i : interferers) s += i.coefficient;
  return 1.0 - s;
}

void ChannelConfig::validate() const {
  if (!(power > 0.0)) throw InvalidArgument("channel power must be positive");
  for (const auto& i : interferers) {
    if (i.coefficient < 0.0) throw InvalidArgument("negative interference coefficient");
  }
  if (primary_coefficient() < -kCoefficientTolerance) {
    throw InvalidArgument("interference coefficients sum above 1");
  }
}

double snr_db_to_sigma2(double snr_db, double power) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return power / std::pow(10.0, snr_db / 10.0);
}

double sigma2_to_snr_db(double sigma2, double power) {
  return 10.0 * std::log10(power / sigma2);
}

SemanticLatent normalize_power(std::span<const double> values, double cbr, double power) {
  if (values.empty() || values.size() % 2 != 0) {
    throw InvalidArgument("latent length must be a positive even number");
  }
  if (!(power > 0.0)) throw InvalidArgument("power must be positive");
  double sq = 0.0;
  for (double v : values) sq += v * v;
  if (sq == 0.0) throw InvalidArgument("cannot normalize an all-zero latent");
  const double scale = std::sqrt(static_cast<double>(values.size() / 2) * power / sq);
  SemanticLatent out;
  out.values.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = values[i] * scale;
  out.cbr = cbr;
  out.power = power;
  return out;
}

void add_awgn(std::span<double> values, double sigma2, Rng& rng) {
  if (sigma2 < 0.0) throw InvalidArgument("negative noise variance");
  if (sigma2 == 0.0) return;
  const double sd = std::sqrt(sigma2 / 2.0);
  for (auto& v : values) v += sd * rng.normal();
}

SemanticLatent awgn(const SemanticLatent& latent, const ChannelConfig& cfg, Rng& rng) {
  SemanticLatent out = latent;
  add_awgn(out.values, cfg.sigma2(), rng);
  return out;
}

SemanticLatent mix_interference(const SemanticLatent& primary,
                                std::span<const SemanticLatent> interferers,
                                std::span<const double> coeffs) {
  if (coeffs.size() != interferers.size() + 1) {
    throw InvalidArgument("need one coefficient per user (primary first)");
  }
  double total = 0.0;
  for (double c : coeffs) {
    if (c < 0.0) throw InvalidArgument("mixing coefficients must be nonnegative");
    total += c;
  }
  if (std::abs(total - 1.0) > kCoefficientTolerance) {
    throw InvalidArgument("mixing coefficients sum to " + std::to_string(total) + ", not 1");
  }
  SemanticLatent out = primary;
  for (auto& v : out.values) v *= coeffs[0];
  for (std::size_t k = 0; k < interferers.size(); ++k) {
    const auto& src = interferers[k].values;
    const std::size_t n = std::min(src.size(), out.values.size());
    for (std::size_t i = 0; i < n; ++i) out.values[i] += coeffs[k + 1] * src[i];
  }
  return out;
}

SemanticLatent transmit(const SemanticLatent& latent, const ChannelConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.interferers.empty()) return awgn(latent, cfg, rng);
  std::vector<SemanticLatent> others;
  std::vector<double> coeffs{cfg.primary_coefficient()};
  for (const auto& i : cfg.interferers) {
    others.push_back(i.latent);
    coeffs.push_back(i.coefficient);
  }
  return awgn(mix_interference(latent, others, coeffs), cfg, rng);
}

double sinr_db(std::span<const double> coeffs, double power, double sigma2) {
  if (coeffs.empty()) throw InvalidArgument("sinr_db needs at least the intended user");
  double interference = 0.0;
  for (std::size_t i = 1; i < coeffs.size(); ++i) interference += coeffs[i] * coeffs[i] * power;
  return 10.0 * std::log10(coeffs[0] * coeffs[0] * power / (interference + sigma2));
}

SemanticLatent stochastic_mask(const SemanticLatent& latent, double cbr_test, double cbr_train,
                               Rng& rng) {
  if (!(cbr_test > 0.0) || !(cbr_train > 0.0)) throw InvalidArgument("CBR must be positive");
  if (cbr_test > cbr_train) {
    throw InvalidArgument("test CBR " + std::to_string(cbr_test) + " exceeds trained CBR " +
                          std::to_string(cbr_train) + "; only downsampling is supported");
  }
  const double keep = cbr_test / cbr_train;
  std::vector<double> v = latent.values;
  bool any = false;
  for (std::size_t s = 0; s < latent.symbols(); ++s) {
    if (rng.bernoulli(keep)) {
      any = any || v[2 * s] != 0.0 || v[2 * s + 1] != 0.0;
    } else {
      v[2 * s] = 0.0;
      v[2 * s + 1] = 0.0;
    }
  }
  if (!any) {
    // Every symbol dropped: nothing to renormalize, transmit silence.
    SemanticLatent out = latent;
    std::fill(out.values.begin(), out.values.end(), 0.0);
    out.cbr = cbr_test;
    return out;
  }
  auto out = normalize_power(v, cbr_test, latent.power);
  return out;
}

}  // namespace semdiff
