#include "semdiff/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include "semdiff/errors.hpp"

namespace semdiff {

EmaState EmaState::from(const nn::StateRefs& live, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw InvalidArgument("EMA decay must lie in [0, 1]");
  EmaState s;
  s.decay = decay;
  for (const auto& [name, v] : live.params) s.shadow.push_back(v.value());
  return s;
}

void ema_update(EmaState& state, const nn::StateRefs& live) {
  if (state.shadow.size() != live.params.size()) throw ShapeError("EMA shadow does not match the model");
  const double d = state.decay;
  for (std::size_t i = 0; i < state.shadow.size(); ++i) {
    const Tensor& p = live.params[i].second.value();
    Tensor& s = state.shadow[i];
    if (s.shape() != p.shape()) throw ShapeError("EMA shape mismatch at " + live.params[i].first);
    for (std::size_t k = 0; k < s.numel(); ++k) s[k] = d * s[k] + (1.0 - d) * p[k];
  }
}

double TrainingDraws::mean_snr_db() const {
  double m = 0.0;
  for (double s : snr_db) m += s;
  return snr_db.empty() ? 0.0 : m / static_cast<double>(snr_db.size());
}

TrainingDraws draw_training(std::size_t batch, std::size_t latent_len, const Shape& image_shape,
                            std::size_t steps, double snr_min_db, double snr_max_db, Rng& rng) {
  TrainingDraws d;
  for (std::size_t i = 0; i < batch; ++i) {
    d.t.push_back(static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(steps))));
    d.snr_db.push_back(rng.uniform(snr_min_db, snr_max_db));
  }
  d.channel_noise = Tensor({batch, latent_len});
  rng.fill_normal(d.channel_noise.data());
  d.eps = Tensor({batch, image_shape[0], image_shape[1], image_shape[2]});
  rng.fill_normal(d.eps.data());
  d.latent_eps = Tensor({batch, latent_len});
  rng.fill_normal(d.latent_eps.data());
  return d;
}

namespace {

// Complex AWGN at each sample's SNR: sigma^2 / 2 per real component.
Tensor scaled_channel_noise(const TrainingDraws& d, double power) {
  Tensor n = d.channel_noise;
  const std::size_t len = n.row_size();
  for (std::size_t i = 0; i < d.snr_db.size(); ++i) {
    const double sd = std::sqrt(snr_db_to_sigma2(d.snr_db[i], power) / 2.0);
    for (std::size_t k = 0; k < len; ++k) n[i * len + k] *= sd;
  }
  return n;
}

}  // namespace

ag::Var training_loss(Model& model, const Tensor& x0, double cbr, const TrainingDraws& draws) {
  const double power = model.config().channel.power;
  const ag::Var target = ag::Var::constant(x0);
  const ag::Var noise = ag::Var::constant(scaled_channel_noise(draws, power));
  switch (model.kind()) {
    case PipelineKind::kCdiff: {
      const DiffusionSchedule& s = model.schedule();
      const std::size_t n = x0.dim(0);
      std::vector<double> signal(n), condition(n), noise_std(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = forward_coefficients(s, draws.t[i]);
        signal[i] = c.signal;
        condition[i] = c.condition;
        noise_std[i] = c.noise_std;
      }
      const ag::Var z = model.encoder().encode(target, cbr, true);
      const ag::Var cond = ag::pad_to_image(ag::add(z, noise), model.image_shape());
      const ag::Var x_t =
          ag::add(ag::add(ag::scale_rows(target, signal), ag::scale_rows(cond, condition)),
                  ag::scale_rows(ag::Var::constant(draws.eps), noise_std));
      return ag::mse_loss(model.denoiser().forward(x_t, cond, draws.t), target);
    }
    case PipelineKind::kAe: {
      const ag::Var z = model.encoder().encode(target, cbr, true);
      return ag::mse_loss(model.decoder()(ag::add(z, noise)), target);
    }
    case PipelineKind::kVae: {
      const auto out = model.vae()(target, true);
      const ag::Var sigma = ag::exp(ag::scale(out.log_var, 0.5));
      const ag::Var z = ag::power_normalize(
          ag::add(out.mu, ag::mul(sigma, ag::Var::constant(draws.latent_eps))), power);
      const ag::Var recon = model.decoder()(ag::add(z, noise));
      return ag::add(ag::mse_loss(recon, target), kl_divergence(out.mu, out.log_var));
    }
  }
  throw InvalidArgument("unknown pipeline");
}

std::string format_step(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.6f,%.4g,%.3f", r.step, r.epoch, r.loss, r.snr_db,
                r.cbr, r.wall_ms);
  return buf;
}

Trainer::Trainer(const ExperimentConfig& cfg, Dataset train)
    : cfg_(cfg),
      train_(std::move(train)),
      model_(std::make_unique<Model>(cfg, cfg.seed)),
      refs_(model_->state()),
      ema_(EmaState::from(refs_, cfg.trainer.ema_decay)),
      shuffle_rng_(Rng::derive(cfg.seed, 1)),
      draw_rng_(Rng::derive(cfg.seed, 2)),
      cbr_rng_(Rng::derive(cfg.seed, 3)) {
  if (train_.size() == 0) throw DataError(DataError::Kind::kFormat, "training set is empty");
  if (train_.image_shape() != model_->image_shape()) {
    throw ConfigError("dataset image shape " + shape_str(train_.image_shape()) +
                      " does not match the model");
  }
  adam_ = std::make_unique<nn::Adam>(refs_, nn::Adam::Options{cfg.trainer.lr, 0.9, 0.999, 1e-8});
}

double Trainer::train_step(const Tensor& batch, double cbr) {
  if (model_->weights_tag() != WeightsTag::kLive) throw InvalidArgument("training requires live weights");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = batch.dim(0);
  const std::size_t latent_len = latent_dim(shape_numel(model_->image_shape()), cbr);
  const TrainingDraws draws =
      draw_training(n, latent_len, model_->image_shape(), cfg_.schedule.steps,
                    cfg_.trainer.snr_min_db, cfg_.trainer.snr_max_db, draw_rng_);
  refs_.zero_grad();
  ag::Var loss = training_loss(*model_, batch, cbr, draws);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) {
    std::string detail;
    for (std::size_t i = 0; i < n; ++i) {
      detail += " (t=" + std::to_string(draws.t[i]) + ", snr_db=" + std::to_string(draws.snr_db[i]) + ")";
    }
    throw NumericalError("non-finite loss at step " + std::to_string(step_ + 1) + ";" + detail);
  }
  loss.backward();
  adam_->step();
  ema_update(ema_, refs_);
  ++step_;
  StepRecord rec{step_, epoch_, value, draws.mean_snr_db(), cbr, 0.0};
  if (cfg_.output.record_wall_time) {
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  }
  log_.push_back(rec);
  return value;
}

void Trainer::train(const std::function<void(const StepRecord&)>& on_step) {
  BatchIterator it(train_.size(), cfg_.trainer.batch_size);
  std::vector<std::size_t> idx;
  for (std::size_t e = 0; e < cfg_.trainer.epochs; ++e) {
    epoch_ = e + 1;
    const double cbr = cfg_.pipeline.regime == Regime::kFixed
                           ? cfg_.pipeline.cbr
                           : adaptive_head_select(cfg_.pipeline.cbr_list, cbr_rng_);
    it.start_epoch(shuffle_rng_);
    while (it.next(idx)) {
      if (cfg_.trainer.max_steps != 0 && step_ >= cfg_.trainer.max_steps) return;
      train_step(train_.images.gather_rows(idx), cbr);
      if (on_step) on_step(log_.back());
    }
  }
}

std::unique_ptr<Model> Trainer::eval_model() {
  auto m = std::make_unique<Model>(cfg_, cfg_.seed);
  nn::StateRefs refs = m->state();
  for (std::size_t i = 0; i < refs.params.size(); ++i) {
    auto v = refs.params[i].second;
    v.mutable_value() = ema_.shadow[i];
  }
  for (std::size_t i = 0; i < refs.buffers.size(); ++i) *refs.buffers[i].second = *refs_.buffers[i].second;
  m->set_weights_tag(WeightsTag::kEma);
  return m;
}

}  // namespace semdiff
