#include "semdiff/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "semdiff/errors.hpp"

namespace semdiff {

using nlohmann::json;

namespace {

std::string weights_name(WeightSchedule w) { return w == WeightSchedule::kLinear ? "linear" : "zero"; }
std::string noise_name(SamplerNoise n) { return n == SamplerNoise::kMarginal ? "marginal" : "posterior"; }

// Recursively overlays src onto dst; every key of src must already exist in dst.
void overlay(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = dst[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + std::string(section) + "." + key + "' has the wrong type");
  }
}

PipelineKind parse_kind(const std::string& s) {
  if (s == "cdiff") return PipelineKind::kCdiff;
  if (s == "ae") return PipelineKind::kAe;
  if (s == "vae") return PipelineKind::kVae;
  throw ConfigError("config key 'pipeline.kind' must be cdiff, ae or vae (got '" + s + "')");
}

Regime parse_regime(const std::string& s) {
  if (s == "fixed") return Regime::kFixed;
  if (s == "adaptive") return Regime::kAdaptive;
  throw ConfigError("config key 'pipeline.regime' must be fixed or adaptive (got '" + s + "')");
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "' " + what);
}

}  // namespace

std::string to_string(PipelineKind kind) {
  switch (kind) {
    case PipelineKind::kCdiff: return "cdiff";
    case PipelineKind::kAe: return "ae";
    case PipelineKind::kVae: return "vae";
  }
  return "unknown";
}

std::string to_string(Regime regime) { return regime == Regime::kFixed ? "fixed" : "adaptive"; }

std::vector<double> PipelineSection::trained_cbrs() const {
  return regime == Regime::kFixed ? std::vector<double>{cbr} : cbr_list;
}

std::size_t ExperimentConfig::image_channels() const { return dataset.source == "cifar10" ? 3 : 1; }

EncoderConfig ExperimentConfig::encoder_config() const {
  EncoderConfig e;
  e.input_channels = image_channels();
  e.image_size = 32;
  e.conv_channels = encoder.conv_channels;
  e.batch_norm = encoder.batch_norm;
  e.cbr_list = pipeline.trained_cbrs();
  e.power = channel.power;
  return e;
}

DenoiserConfig ExperimentConfig::denoiser_config() const {
  DenoiserConfig d;
  d.image_channels = image_channels();
  d.image_size = 32;
  d.base_dim = denoiser.base_dim;
  d.dim_mults = denoiser.dim_mults;
  d.blocks_per_stage = denoiser.blocks_per_stage;
  d.attention = denoiser.attention;
  d.groups = denoiser.groups;
  return d;
}

DiffusionSchedule ExperimentConfig::build_diffusion_schedule() const {
  return build_schedule(schedule.steps, schedule.beta_start, schedule.beta_end, schedule.weights);
}

SamplerOptions ExperimentConfig::sampler_options() const {
  return {sampler.noise, sampler.suppress_final_noise, sampler.clamp};
}

void ExperimentConfig::validate() const {
  const auto& src = dataset.source;
  require(src == "mnist" || src == "cifar10" || src == "synthetic" || src == "auto", "dataset.source",
          "must be mnist, cifar10, synthetic or auto");
  auto valid_cbr = [](double c) { return c > 0.0 && c < 1.0; };
  require(valid_cbr(pipeline.cbr), "pipeline.cbr", "must lie in (0, 1)");
  require(!pipeline.cbr_list.empty() && std::all_of(pipeline.cbr_list.begin(), pipeline.cbr_list.end(), valid_cbr),
          "pipeline.cbr_list", "must be a nonempty list of values in (0, 1)");
  require(pipeline.kind == PipelineKind::kCdiff || pipeline.regime == Regime::kFixed, "pipeline.regime",
          "must be fixed for the ae and vae benchmarks");
  require(schedule.steps >= 2, "schedule.steps", "must be at least 2");
  require(schedule.beta_start > 0 && schedule.beta_end < 1 && schedule.beta_start <= schedule.beta_end,
          "schedule.beta_start", "and schedule.beta_end must satisfy 0 < start <= end < 1");
  require(encoder.conv_channels.size() >= 3, "encoder.conv_channels", "needs at least three layers");
  require(denoiser.base_dim > 0 && denoiser.base_dim % 2 == 0, "denoiser.base_dim", "must be a positive even number");
  require(!denoiser.dim_mults.empty(), "denoiser.dim_mults", "must be nonempty");
  require(denoiser.blocks_per_stage >= 1, "denoiser.blocks_per_stage", "must be at least 1");
  require(denoiser.groups >= 1, "denoiser.groups", "must be at least 1");
  try {
    denoiser_config().validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("denoiser: ") + e.what());
  }
  require(trainer.batch_size >= 1, "trainer.batch_size", "must be at least 1");
  require(trainer.lr > 0, "trainer.lr", "must be positive");
  require(trainer.snr_min_db <= trainer.snr_max_db, "trainer.snr_min_db", "must not exceed trainer.snr_max_db");
  require(trainer.ema_decay >= 0 && trainer.ema_decay <= 1, "trainer.ema_decay", "must lie in [0, 1]");
  require(channel.power > 0, "channel.power", "must be positive");
  require(sweep.samples >= 1, "sweep.samples", "must be at least 1");
  require(sweep.batch_size >= 1, "sweep.batch_size", "must be at least 1");
  for (const auto& c : sweep.cbr) require(valid_cbr(c), "sweep.cbr", "values must lie in (0, 1)");
  for (const auto& mix : sweep.interference) {
    require(!mix.empty(), "sweep.interference", "entries must be nonempty coefficient lists");
    double total = 0.0;
    for (double c : mix) {
      require(c >= 0, "sweep.interference", "coefficients must be nonnegative");
      total += c;
    }
    require(std::abs(total - 1.0) < 1e-9, "sweep.interference", "coefficients must sum to 1");
  }
}

std::vector<std::string> preset_names() { return {"smoke", "mnist-full", "mnist-adaptive", "cifar-full"}; }

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "smoke") {
    c.dataset.source = "auto";
    c.dataset.train_limit = 2000;
    c.dataset.test_limit = 200;
    c.denoiser.base_dim = 8;
    c.denoiser.dim_mults = {1, 2};
    c.denoiser.blocks_per_stage = 1;
    c.trainer.epochs = 4;
    c.trainer.batch_size = 32;
    c.sweep.snr_db = {-10, 10};
    c.sweep.samples = 32;
    c.sweep.batch_size = 32;
    c.output.dir = "runs/smoke";
  } else if (name == "mnist-full") {
    c.dataset.source = "mnist";
    c.trainer.epochs = 10;
    c.output.dir = "runs/mnist-full";
  } else if (name == "mnist-adaptive") {
    c.dataset.source = "mnist";
    c.pipeline.regime = Regime::kAdaptive;
    c.trainer.epochs = 20;
    c.sweep.cbr = {0.2, 0.25, 0.3, 0.35, 0.4, 0.45};
    c.output.dir = "runs/mnist-adaptive";
  } else if (name == "cifar-full") {
    c.dataset.source = "cifar10";
    c.pipeline.cbr = 0.4;
    c.encoder.conv_channels = {64, 128, 256, 256};
    c.encoder.batch_norm = true;
    c.denoiser.base_dim = 64;
    c.denoiser.dim_mults = {1, 2, 4, 8};
    c.denoiser.attention = true;
    c.denoiser.groups = 8;
    c.trainer.epochs = 50;
    c.output.dir = "runs/cifar-full";
  } else {
    std::string names;
    for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "' (available: " + names + ")");
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  return json{
      {"seed", c.seed},
      {"dataset",
       {{"source", c.dataset.source},
        {"root", c.dataset.root},
        {"train_limit", c.dataset.train_limit},
        {"test_limit", c.dataset.test_limit}}},
      {"pipeline",
       {{"kind", to_string(c.pipeline.kind)},
        {"regime", to_string(c.pipeline.regime)},
        {"cbr", c.pipeline.cbr},
        {"cbr_list", c.pipeline.cbr_list}}},
      {"schedule",
       {{"steps", c.schedule.steps},
        {"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"weights", weights_name(c.schedule.weights)}}},
      {"encoder", {{"conv_channels", c.encoder.conv_channels}, {"batch_norm", c.encoder.batch_norm}}},
      {"denoiser",
       {{"base_dim", c.denoiser.base_dim},
        {"dim_mults", c.denoiser.dim_mults},
        {"blocks_per_stage", c.denoiser.blocks_per_stage},
        {"attention", c.denoiser.attention},
        {"groups", c.denoiser.groups}}},
      {"trainer",
       {{"epochs", c.trainer.epochs},
        {"batch_size", c.trainer.batch_size},
        {"max_steps", c.trainer.max_steps},
        {"lr", c.trainer.lr},
        {"snr_min_db", c.trainer.snr_min_db},
        {"snr_max_db", c.trainer.snr_max_db},
        {"ema_decay", c.trainer.ema_decay}}},
      {"channel", {{"power", c.channel.power}}},
      {"sampler",
       {{"noise", noise_name(c.sampler.noise)},
        {"suppress_final_noise", c.sampler.suppress_final_noise},
        {"clamp", c.sampler.clamp}}},
      {"sweep",
       {{"snr_db", c.sweep.snr_db},
        {"cbr", c.sweep.cbr},
        {"interference", c.sweep.interference},
        {"seeds", c.sweep.seeds},
        {"samples", c.sweep.samples},
        {"batch_size", c.sweep.batch_size}}},
      {"output", {{"dir", c.output.dir}, {"record_wall_time", c.output.record_wall_time}}},
  };
}

ExperimentConfig from_json(const json& j, const ExperimentConfig& base) {
  json full = to_json(base);
  overlay(full, j, "");
  ExperimentConfig c;
  try {
    c.seed = full.at("seed").get<std::uint64_t>();
  } catch (const json::exception&) {
    throw ConfigError("config key 'seed' must be a nonnegative integer");
  }
  c.dataset.source = get<std::string>(full, "dataset", "source");
  c.dataset.root = get<std::string>(full, "dataset", "root");
  c.dataset.train_limit = get<std::size_t>(full, "dataset", "train_limit");
  c.dataset.test_limit = get<std::size_t>(full, "dataset", "test_limit");
  c.pipeline.kind = parse_kind(get<std::string>(full, "pipeline", "kind"));
  c.pipeline.regime = parse_regime(get<std::string>(full, "pipeline", "regime"));
  c.pipeline.cbr = get<double>(full, "pipeline", "cbr");
  c.pipeline.cbr_list = get<std::vector<double>>(full, "pipeline", "cbr_list");
  c.schedule.steps = get<std::size_t>(full, "schedule", "steps");
  c.schedule.beta_start = get<double>(full, "schedule", "beta_start");
  c.schedule.beta_end = get<double>(full, "schedule", "beta_end");
  const auto w = get<std::string>(full, "schedule", "weights");
  if (w != "linear" && w != "zero") throw ConfigError("config key 'schedule.weights' must be linear or zero");
  c.schedule.weights = w == "linear" ? WeightSchedule::kLinear : WeightSchedule::kConstantZero;
  c.encoder.conv_channels = get<std::vector<std::size_t>>(full, "encoder", "conv_channels");
  c.encoder.batch_norm = get<bool>(full, "encoder", "batch_norm");
  c.denoiser.base_dim = get<std::size_t>(full, "denoiser", "base_dim");
  c.denoiser.dim_mults = get<std::vector<std::size_t>>(full, "denoiser", "dim_mults");
  c.denoiser.blocks_per_stage = get<std::size_t>(full, "denoiser", "blocks_per_stage");
  c.denoiser.attention = get<bool>(full, "denoiser", "attention");
  c.denoiser.groups = get<int>(full, "denoiser", "groups");
  c.trainer.epochs = get<std::size_t>(full, "trainer", "epochs");
  c.trainer.batch_size = get<std::size_t>(full, "trainer", "batch_size");
  c.trainer.max_steps = get<std::size_t>(full, "trainer", "max_steps");
  c.trainer.lr = get<double>(full, "trainer", "lr");
  c.trainer.snr_min_db = get<double>(full, "trainer", "snr_min_db");
  c.trainer.snr_max_db = get<double>(full, "trainer", "snr_max_db");
  c.trainer.ema_decay = get<double>(full, "trainer", "ema_decay");
  c.channel.power = get<double>(full, "channel", "power");
  const auto noise = get<std::string>(full, "sampler", "noise");
  if (noise != "marginal" && noise != "posterior") {
    throw ConfigError("config key 'sampler.noise' must be marginal or posterior");
  }
  c.sampler.noise = noise == "marginal" ? SamplerNoise::kMarginal : SamplerNoise::kPosterior;
  c.sampler.suppress_final_noise = get<bool>(full, "sampler", "suppress_final_noise");
  c.sampler.clamp = get<bool>(full, "sampler", "clamp");
  c.sweep.snr_db = get<std::vector<double>>(full, "sweep", "snr_db");
  c.sweep.cbr = get<std::vector<double>>(full, "sweep", "cbr");
  c.sweep.interference = get<std::vector<std::vector<double>>>(full, "sweep", "interference");
  c.sweep.seeds = get<std::vector<std::uint64_t>>(full, "sweep", "seeds");
  c.sweep.samples = get<std::size_t>(full, "sweep", "samples");
  c.sweep.batch_size = get<std::size_t>(full, "sweep", "batch_size");
  c.output.dir = get<std::string>(full, "output", "dir");
  c.output.record_wall_time = get<bool>(full, "output", "record_wall_time");
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j, base);
}

ExperimentConfig apply_overrides(const ExperimentConfig& cfg, const std::vector<std::string>& sets) {
  json patch = json::object();
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + s + "' must look like key=value");
    const std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &patch;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("override key '" + key + "' is malformed");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = json::object();
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return from_json(patch, cfg);
}

}  // namespace semdiff
