#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "semdiff/dataset.hpp"
#include "semdiff/pipeline.hpp"

namespace semdiff {

// Shadow copy of a model's trainable parameters.
struct EmaState {
  double decay = 0.995;
  std::vector<Tensor> shadow;

  static EmaState from(const nn::StateRefs& live, double decay);
};

// shadow <- decay * shadow + (1 - decay) * live for every parameter.
// Throws ShapeError if the layouts differ.
void ema_update(EmaState& state, const nn::StateRefs& live);

// Per-sample randomness of one training step.
struct TrainingDraws {
  std::vector<std::size_t> t;     // uniform in 1..T
  std::vector<double> snr_db;     // uniform over the training range
  Tensor channel_noise;           // (N, L) standard normal, scaled per sample
  Tensor eps;                     // (N, C, H, W) standard normal
  Tensor latent_eps;              // (N, L) standard normal (VAE reparameterization)

  double mean_snr_db() const;
};

TrainingDraws draw_training(std::size_t batch, std::size_t latent_len, const Shape& image_shape,
                            std::size_t steps, double snr_min_db, double snr_max_db, Rng& rng);

// Loss of one batch on live weights: x0-prediction MSE for cdiff, pixel MSE
// for ae, pixel MSE + KL for vae.
ag::Var training_loss(Model& model, const Tensor& x0, double cbr, const TrainingDraws& draws);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double snr_db = 0.0;  // batch mean
  double cbr = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kTrainLogHeader = "step,epoch,loss,snr_db,cbr,wall_ms";
std::string format_step(const StepRecord& r);

class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, Dataset train);

  Model& live() noexcept { return *model_; }
  const EmaState& ema() const noexcept { return ema_; }
  const std::vector<StepRecord>& log() const noexcept { return log_; }
  std::size_t steps_done() const noexcept { return step_; }

  // One optimizer step on the given images at the given CBR. Throws
  // NumericalError (with step, t and SNR) on a non-finite loss.
  double train_step(const Tensor& batch, double cbr);

  // Runs the configured epochs (stopping early at trainer.max_steps).
  void train(const std::function<void(const StepRecord&)>& on_step = {});

  // Independent model carrying the EMA weights (tagged kEma).
  std::unique_ptr<Model> eval_model();

 private:
  ExperimentConfig cfg_;
  Dataset train_;
  std::unique_ptr<Model> model_;
  nn::StateRefs refs_;
  std::unique_ptr<nn::Adam> adam_;
  EmaState ema_;
  Rng shuffle_rng_, draw_rng_, cbr_rng_;
  std::vector<StepRecord> log_;
  std::size_t step_ = 0, epoch_ = 0;
};

}  // namespace semdiff
