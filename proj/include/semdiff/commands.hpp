#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "semdiff/config.hpp"
#include "semdiff/dataset.hpp"

namespace semdiff {

inline constexpr const char* kSweepHeader =
    "seed,dataset,pipeline,regime,cbr,snr_db,sinr_db,psnr_mean,psnr_std,ssim_mean,ssim_std,samples,wall_ms";

struct ExperimentRecord {
  std::uint64_t seed = 0;
  std::string dataset;
  std::string pipeline;
  std::string regime;
  double cbr = 0.0;
  double snr_db = 0.0;
  double sinr_db = 0.0;
  double psnr_mean = 0.0, psnr_std = 0.0;
  double ssim_mean = 0.0, ssim_std = 0.0;
  std::size_t samples = 0;
  double wall_ms = 0.0;
};
std::string format_record(const ExperimentRecord& r);

struct DataSplits {
  Dataset train;
  Dataset test;
};
// Loads the configured dataset; "auto" means MNIST when its files exist under
// the data root, the synthetic generator otherwise.
DataSplits load_splits(const ExperimentConfig& cfg);

// Output directory layout written by train.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.resolved.json"; }
  std::filesystem::path train_log() const { return dir / "train_log.csv"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
};

// Trains the configured pipeline and writes the resolved config, the training
// log and the EMA checkpoint into cfg.output.dir.
RunPaths cmd_train(const ExperimentConfig& cfg, std::ostream& progress);

// Evaluates every (seed, cbr, mixing, snr) cell of cfg.sweep and writes one
// CSV row per cell. Throws ConfigError for an empty grid or a CBR above the
// trained range; nothing is written in that case.
std::vector<ExperimentRecord> cmd_sweep(const ExperimentConfig& cfg,
                                        const std::filesystem::path& checkpoint,
                                        const std::filesystem::path& csv_out);

struct VisualizeOptions {
  std::size_t count = 8;
  double snr_db = 10.0;
  double cbr = 0.0;  // 0: the trained CBR
  std::uint64_t seed = 0;
};
// Writes original/reconstruction image pairs (PGM or PPM) plus samples.csv.
std::size_t cmd_visualize(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                          const std::filesystem::path& out_dir, const VisualizeOptions& options);

struct OracleOptions {
  std::vector<std::size_t> n_list{100, 1000, 10000, 100000};
  std::size_t seeds = 10;
  std::size_t eval_draws = 2000;
};
// Consistency experiment on the default linear-Gaussian toy; CSV columns
// n,seed,mse,heldout_loss,bayes_floor,well_posed.
void cmd_oracle(const OracleOptions& options, const std::filesystem::path& csv_out,
                std::ostream& progress);

// Binary PGM (one channel) or PPM (three channels) of a (C, H, W) image in [-1, 1].
void write_image(const std::filesystem::path& path, const Tensor& image);

}  // namespace semdiff
