#include "semdiff/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "semdiff/errors.hpp"

namespace semdiff {

std::string to_string(WeightsTag tag) { return tag == WeightsTag::kLive ? "live" : "ema"; }

Model::Model(const ExperimentConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), schedule_(cfg.build_diffusion_schedule()) {
  cfg_.validate();
  Rng rng = Rng::derive(init_seed, 0);
  const EncoderConfig ecfg = cfg_.encoder_config();
  switch (cfg_.pipeline.kind) {
    case PipelineKind::kCdiff:
      encoder_ = std::make_unique<SemanticEncoder>(ecfg, rng);
      denoiser_ = std::make_unique<UNetDenoiser>(cfg_.denoiser_config(), rng);
      break;
    case PipelineKind::kAe:
      encoder_ = std::make_unique<SemanticEncoder>(ecfg, rng);
      decoder_ = std::make_unique<MatchedDecoder>(ecfg, encoder_->trunk(), cfg_.pipeline.cbr, rng);
      break;
    case PipelineKind::kVae:
      vae_ = std::make_unique<VaeEncoder>(ecfg, cfg_.pipeline.cbr, rng);
      decoder_ = std::make_unique<MatchedDecoder>(ecfg, vae_->trunk(), cfg_.pipeline.cbr, rng);
      break;
  }
}

SemanticEncoder& Model::encoder() {
  if (!encoder_) throw InvalidArgument("pipeline " + to_string(kind()) + " has no semantic encoder");
  return *encoder_;
}

UNetDenoiser& Model::denoiser() {
  if (!denoiser_) throw InvalidArgument("pipeline " + to_string(kind()) + " has no denoiser");
  return *denoiser_;
}

MatchedDecoder& Model::decoder() {
  if (!decoder_) throw InvalidArgument("pipeline " + to_string(kind()) + " has no matched decoder");
  return *decoder_;
}

VaeEncoder& Model::vae() {
  if (!vae_) throw InvalidArgument("pipeline " + to_string(kind()) + " has no VAE encoder");
  return *vae_;
}

nn::StateRefs Model::state() {
  nn::StateRefs refs;
  if (encoder_) encoder_->collect("encoder", refs);
  if (vae_) vae_->collect("vae", refs);
  if (denoiser_) denoiser_->collect("denoiser", refs);
  if (decoder_) decoder_->collect("decoder", refs);
  return refs;
}

std::unique_ptr<Model> Model::clone() {
  auto copy = std::make_unique<Model>(cfg_, 0);
  copy->state().assign_from(state());
  copy->tag_ = tag_;
  return copy;
}

double Model::head_for(double cbr) const {
  const auto heads = cfg_.pipeline.trained_cbrs();
  double best = -1.0;
  for (double h : heads) {
    if (std::abs(h - cbr) < 1e-9) return h;
    if (h > cbr && (best < 0 || h < best)) best = h;
  }
  if (best < 0) {
    throw InvalidArgument("test CBR " + std::to_string(cbr) + " exceeds the largest trained CBR");
  }
  return best;
}

std::vector<SemanticLatent> Model::transmit_latents(const Tensor& x, double cbr, Rng& rng) {
  const double head = head_for(cbr);
  std::vector<SemanticLatent> latents;
  if (kind() == PipelineKind::kVae) {
    for (const auto& h : vae_->heads(x)) {
      latents.push_back(vae_reparameterize(h, rng, cfg_.channel.power));
      latents.back().cbr = head;
    }
  } else {
    latents = encoder_->encode(x, head);
  }
  if (std::abs(head - cbr) >= 1e-9) {
    for (auto& z : latents) z = stochastic_mask(z, cbr, head, rng);
  }
  return latents;
}

Tensor Model::reconstruct(const Tensor& x, std::span<const Tensor> interferers,
                          const EvalCell& cell, Rng& rng) {
  if (tag_ != WeightsTag::kEma) throw InvalidArgument("evaluation requires EMA weights");
  if (cell.mixing.empty() || interferers.size() + 1 != cell.mixing.size()) {
    throw InvalidArgument("one interferer batch is needed per extra mixing coefficient");
  }
  const std::size_t n = x.dim(0);
  const auto primary = transmit_latents(x, cell.cbr, rng);
  std::vector<std::vector<SemanticLatent>> others;
  for (const auto& xi : interferers) {
    if (xi.shape() != x.shape()) throw ShapeError("interferer batch shape differs from the input");
    others.push_back(transmit_latents(xi, cell.cbr, rng));
  }
  ChannelConfig channel;
  channel.snr_db = cell.snr_db;
  channel.power = cfg_.channel.power;
  std::vector<SemanticLatent> received(n);
  for (std::size_t i = 0; i < n; ++i) {
    channel.interferers.clear();
    for (std::size_t k = 0; k < others.size(); ++k) {
      channel.interferers.push_back({cell.mixing[k + 1], others[k][i]});
    }
    received[i] = transmit(primary[i], channel, rng);
  }
  if (kind() == PipelineKind::kCdiff) {
    const ConditionTensor cond = pad_and_reshape(received, image_shape());
    return sample(cond, *denoiser_, schedule_, rng, cfg_.sampler_options());
  }
  const std::size_t len = received.front().values.size();
  Tensor z({n, len});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(received[i].values.begin(), received[i].values.end(), z.data().begin() + i * len);
  }
  return (*decoder_)(ag::Var::constant(z)).value();
}

}  // namespace semdiff
