#pragma once

#include <span>
#include <vector>

#include "semdiff/diffusion.hpp"
#include "semdiff/nn.hpp"

namespace semdiff {

struct DenoiserConfig {
  std::size_t image_channels = 1;
  std::size_t image_size = 32;
  std::size_t base_dim = 32;
  std::vector<std::size_t> dim_mults{1, 2, 4};
  std::size_t blocks_per_stage = 2;
  bool attention = false;
  int groups = 1;

  std::size_t time_dim() const { return base_dim * 4; }
  std::size_t in_channels() const { return 2 * image_channels; }
  std::size_t out_channels() const { return image_channels; }
  // Throws InvalidArgument for inconsistent settings.
  void validate() const;
};

// Interleaved [sin(t f_0), cos(t f_0), sin(t f_1), ...] with log-spaced
// frequencies f_i = 10000^(-i / (dim/2 - 1)). dim must be even.
std::vector<double> sinusoidal_time_embedding(double t, std::size_t dim);

// conv3x3 -> GroupNorm -> GELU, time embedding added per channel, then
// conv3x3 -> GroupNorm -> GELU, plus a (1x1-projected) residual.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::size_t in, std::size_t out, std::size_t time_dim, int groups, Rng& rng);
  ag::Var operator()(const ag::Var& x, const ag::Var& time_act) const;
  void collect(const std::string& prefix, nn::StateRefs& refs) const;

 private:
  nn::Conv2d conv1_, conv2_, skip_;
  nn::GroupNorm norm1_, norm2_;
  nn::Linear time_proj_;
  bool has_skip_ = false;
};

// Pre-norm residual linear attention over spatial positions.
class LinearAttentionBlock {
 public:
  LinearAttentionBlock() = default;
  LinearAttentionBlock(std::size_t channels, int groups, Rng& rng);
  ag::Var operator()(const ag::Var& x) const;
  void collect(const std::string& prefix, nn::StateRefs& refs) const;

 private:
  nn::GroupNorm norm_;
  nn::Conv2d to_q_, to_k_, to_v_, to_out_;
};

// Time-conditioned U-Net predicting x0 from the channel-concatenation of
// x_t and the condition tensor. The final 1x1 convolution starts at zero.
class UNetDenoiser : public X0Predictor {
 public:
  UNetDenoiser() = default;
  UNetDenoiser(const DenoiserConfig& cfg, Rng& rng);

  const DenoiserConfig& config() const noexcept { return cfg_; }

  // x_t, cond (N, C, H, W); steps has one entry per sample.
  ag::Var forward(const ag::Var& x_t, const ag::Var& cond, std::span<const std::size_t> steps) const;
  Tensor predict_x0(const Tensor& x_t, const Tensor& cond, std::size_t t) const override;

  void collect(const std::string& prefix, nn::StateRefs& refs) const;

 private:
  struct Stage {
    std::vector<ResBlock> blocks;
    std::vector<LinearAttentionBlock> attention;
    nn::Conv2d resample;
    bool has_resample = false;
  };

  DenoiserConfig cfg_;
  nn::Conv2d init_conv_;
  nn::Linear time_fc1_, time_fc2_;
  std::vector<Stage> down_, up_;
  ResBlock mid1_, mid2_;
  std::vector<LinearAttentionBlock> mid_attention_;
  ResBlock final_block_;
  nn::Conv2d final_conv_;
};

}  // namespace semdiff
