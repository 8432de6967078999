#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "semdiff/denoiser.hpp"
#include "semdiff/diffusion.hpp"
#include "semdiff/encoder.hpp"
#include "semdiff/schedule.hpp"

namespace semdiff {

enum class PipelineKind { kCdiff, kAe, kVae };
enum class Regime { kFixed, kAdaptive };

std::string to_string(PipelineKind kind);
std::string to_string(Regime regime);

struct DatasetSection {
  std::string source = "synthetic";  // mnist, cifar10, synthetic, auto (mnist if present)
  std::string root;                  // empty: $SEMDIFF_DATA_ROOT, then ./data
  std::size_t train_limit = 0;       // 0 keeps the full split
  std::size_t test_limit = 0;
};

struct PipelineSection {
  PipelineKind kind = PipelineKind::kCdiff;
  Regime regime = Regime::kFixed;
  double cbr = 0.3;
  std::vector<double> cbr_list{0.2, 0.25, 0.3, 0.35, 0.4, 0.45};

  // Heads the encoder carries: {cbr} or cbr_list.
  std::vector<double> trained_cbrs() const;
};

struct ScheduleSection {
  std::size_t steps = 200;
  double beta_start = 1e-4;
  double beta_end = 0.0095;
  WeightSchedule weights = WeightSchedule::kLinear;
};

struct EncoderSection {
  std::vector<std::size_t> conv_channels{8, 16, 32};
  bool batch_norm = false;
};

struct DenoiserSection {
  std::size_t base_dim = 32;
  std::vector<std::size_t> dim_mults{1, 2, 4};
  std::size_t blocks_per_stage = 2;
  bool attention = false;
  int groups = 1;
};

struct TrainerSection {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::size_t max_steps = 0;  // 0: no cap
  double lr = 1e-3;
  double snr_min_db = -10.0;
  double snr_max_db = 10.0;
  double ema_decay = 0.995;
};

struct ChannelSection {
  double power = 1.0;
};

struct SamplerSection {
  SamplerNoise noise = SamplerNoise::kMarginal;
  bool suppress_final_noise = true;
  bool clamp = true;
};

struct SweepSection {
  std::vector<double> snr_db{-10, 0, 10, 20, 30};
  std::vector<double> cbr;  // empty: the trained CBR(s)
  // Mixing coefficients per cell, intended user first; {1} is interference-free.
  std::vector<std::vector<double>> interference{{1.0}};
  std::vector<std::uint64_t> seeds{0};
  std::size_t samples = 100;
  std::size_t batch_size = 50;
};

struct OutputSection {
  std::string dir = "runs/default";
  bool record_wall_time = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  PipelineSection pipeline;
  ScheduleSection schedule;
  EncoderSection encoder;
  DenoiserSection denoiser;
  TrainerSection trainer;
  ChannelSection channel;
  SamplerSection sampler;
  SweepSection sweep;
  OutputSection output;

  // Image geometry follows the dataset (MNIST/synthetic 1x32x32, CIFAR 3x32x32).
  std::size_t image_channels() const;
  EncoderConfig encoder_config() const;
  DenoiserConfig denoiser_config() const;
  DiffusionSchedule build_diffusion_schedule() const;
  SamplerOptions sampler_options() const;

  // Throws ConfigError naming the offending key.
  void validate() const;
};

// Named presets: smoke, mnist-full, mnist-adaptive, cifar-full.
ExperimentConfig preset(const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const ExperimentConfig& cfg);
// Overlays j onto base. Unknown keys and type mismatches raise ConfigError.
ExperimentConfig from_json(const nlohmann::json& j, const ExperimentConfig& base = {});

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base = {});
// Applies "section.key=value" overrides; values are parsed as JSON, falling
// back to a plain string.
ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& sets);

}  // namespace semdiff
