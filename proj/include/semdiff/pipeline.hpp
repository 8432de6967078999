#pragma once

#include <memory>
#include <span>
#include <vector>

#include "semdiff/baselines.hpp"
#include "semdiff/config.hpp"
#include "semdiff/denoiser.hpp"
#include "semdiff/encoder.hpp"

namespace semdiff {

// Which weights a model instance carries. Training runs on live weights;
// evaluation requires the EMA copy (or weights loaded from a checkpoint,
// which hold the EMA copy).
enum class WeightsTag { kLive, kEma };
std::string to_string(WeightsTag tag);

// One evaluation condition.
struct EvalCell {
  double cbr = 0.3;
  double snr_db = 10.0;
  std::vector<double> mixing{1.0};  // intended user first
};

// Encoder/decoder pair of one pipeline (cdiff, ae or vae).
class Model {
 public:
  Model(const ExperimentConfig& cfg, std::uint64_t init_seed);

  const ExperimentConfig& config() const noexcept { return cfg_; }
  PipelineKind kind() const noexcept { return cfg_.pipeline.kind; }
  const DiffusionSchedule& schedule() const noexcept { return schedule_; }
  Shape image_shape() const { return {cfg_.image_channels(), 32, 32}; }

  SemanticEncoder& encoder();
  UNetDenoiser& denoiser();
  MatchedDecoder& decoder();
  VaeEncoder& vae();

  WeightsTag weights_tag() const noexcept { return tag_; }
  void set_weights_tag(WeightsTag tag) noexcept { tag_ = tag; }

  // Trainable parameters followed by buffers, in a fixed order.
  nn::StateRefs state();
  // Deep copy with identical weights and tag.
  std::unique_ptr<Model> clone();

  // Head used for a test CBR: exact match, else the smallest larger head
  // (masked at evaluation). Throws InvalidArgument above the largest head.
  double head_for(double cbr) const;

  // Transmitted latents for x at the cell's CBR (power-normalized, masked if
  // the CBR is below the head); VAE latents are reparameterized draws.
  std::vector<SemanticLatent> transmit_latents(const Tensor& x, double cbr, Rng& rng);

  // Full link: encode, mix with interferer images (one batch per extra
  // coefficient), AWGN, decode. Requires EMA weights.
  Tensor reconstruct(const Tensor& x, std::span<const Tensor> interferers, const EvalCell& cell,
                     Rng& rng);

 private:
  ExperimentConfig cfg_;
  DiffusionSchedule schedule_;
  std::unique_ptr<SemanticEncoder> encoder_;
  std::unique_ptr<UNetDenoiser> denoiser_;
  std::unique_ptr<MatchedDecoder> decoder_;
  std::unique_ptr<VaeEncoder> vae_;
  WeightsTag tag_ = WeightsTag::kLive;
};

}  // namespace semdiff
