#pragma once

#include <span>
#include <utility>
#include <vector>

#include "semdiff/channel.hpp"
#include "semdiff/diffusion.hpp"
#include "semdiff/nn.hpp"

namespace semdiff {

struct EncoderConfig {
  std::size_t input_channels = 1;
  std::size_t image_size = 32;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  bool batch_norm = false;
  std::vector<double> cbr_list{0.3};
  double power = 1.0;

  std::size_t input_dim() const { return input_channels * image_size * image_size; }

  static EncoderConfig mnist(std::vector<double> cbr_list = {0.3});
  static EncoderConfig cifar10(std::vector<double> cbr_list = {0.4});
};

// 2 * floor(input_dim * cbr): real and imaginary parts of N_c symbols.
std::size_t latent_dim(std::size_t input_dim, double cbr);

// Stack of 3x3 convolutions (padding 1) with ReLU. The last three layers use
// stride 2, any earlier ones stride 1, so a 32x32 input ends at 4x4.
class ConvTrunk {
 public:
  ConvTrunk() = default;
  ConvTrunk(const EncoderConfig& cfg, Rng& rng);

  ag::Var operator()(const ag::Var& x, bool training);
  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t out_channels() const noexcept { return out_channels_; }
  std::size_t out_size() const noexcept { return out_size_; }
  const std::vector<int>& strides() const noexcept { return strides_; }
  void collect(const std::string& prefix, nn::StateRefs& refs);

 private:
  std::vector<nn::Conv2d> convs_;
  std::vector<nn::BatchNorm2d> norms_;
  std::vector<int> strides_;
  std::size_t out_channels_ = 0, out_size_ = 0, feature_dim_ = 0;
};

// Semantic encoder: shared conv trunk, one linear projection head per CBR,
// then per-sample power normalization.
class SemanticEncoder {
 public:
  SemanticEncoder() = default;
  SemanticEncoder(const EncoderConfig& cfg, Rng& rng);

  const EncoderConfig& config() const noexcept { return cfg_; }

  // x (N, C, 32, 32) -> normalized latents (N, latent_dim(cbr)).
  ag::Var encode(const ag::Var& x, double cbr, bool training);
  std::vector<SemanticLatent> encode(const Tensor& x, double cbr);

  // Index of the head registered for cbr; throws InvalidArgument listing the heads.
  std::size_t head_index(double cbr) const;
  bool has_head(double cbr) const;
  std::vector<double> heads() const;

  ConvTrunk& trunk() noexcept { return trunk_; }
  void collect(const std::string& prefix, nn::StateRefs& refs);

 private:
  EncoderConfig cfg_;
  ConvTrunk trunk_;
  std::vector<std::pair<double, nn::Linear>> heads_;
};

// Places the latent row-major into a zero (1, C, H, W) tensor.
ConditionTensor pad_and_reshape(const SemanticLatent& latent, const Shape& target_shape);
// Batched variant; all latents must share one length.
ConditionTensor pad_and_reshape(std::span<const SemanticLatent> latents, const Shape& target_shape);
// Inverse of pad_and_reshape for row n: the first source_len entries.
std::vector<double> extract_latent(const ConditionTensor& cond, std::size_t row = 0);

// Uniform draw from the CBR list (one draw per epoch in adaptive training).
double adaptive_head_select(std::span<const double> cbr_list, Rng& epoch_rng);

}  // namespace semdiff
