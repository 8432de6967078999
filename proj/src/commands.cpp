#include "semdiff/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "semdiff/checkpoint.hpp"
#include "semdiff/errors.hpp"
#include "semdiff/metrics.hpp"
#include "semdiff/oracle.hpp"
#include "semdiff/trainer.hpp"

namespace semdiff {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kSyntheticTrain = 2000;
constexpr std::size_t kSyntheticTest = 500;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write " + path.string());
  return out;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

// Test image paired with sample i as the k-th interfering user.
std::size_t interferer_index(std::size_t i, std::size_t k, std::size_t n, std::size_t total) {
  const std::size_t j = (i + k * n) % total;
  return j == i ? (i + k) % total : j;
}

}  // namespace

std::string format_record(const ExperimentRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%llu,%s,%s,%s,%.4g,%.4g,%.4f,%.6f,%.6f,%.6f,%.6f,%zu,%.3f",
                static_cast<unsigned long long>(r.seed), r.dataset.c_str(), r.pipeline.c_str(),
                r.regime.c_str(), r.cbr, r.snr_db, r.sinr_db, r.psnr_mean, r.psnr_std, r.ssim_mean,
                r.ssim_std, r.samples, r.wall_ms);
  return buf;
}

DataSplits load_splits(const ExperimentConfig& cfg) {
  const fs::path root = resolve_data_root(cfg.dataset.root);
  std::string source = cfg.dataset.source;
  if (source == "auto") source = mnist_available(root) ? "mnist" : "synthetic";
  DataSplits s;
  switch (parse_data_source(source)) {
    case DataSource::kMnist:
      s.train = load_mnist(root, Split::kTrain, cfg.dataset.train_limit);
      s.test = load_mnist(root, Split::kTest, cfg.dataset.test_limit);
      break;
    case DataSource::kCifar10:
      s.train = load_cifar10(root, Split::kTrain, cfg.dataset.train_limit);
      s.test = load_cifar10(root, Split::kTest, cfg.dataset.test_limit);
      break;
    case DataSource::kSynthetic: {
      Rng train_rng = Rng::derive(cfg.seed, 50), test_rng = Rng::derive(cfg.seed, 51);
      const std::size_t n_train = cfg.dataset.train_limit != 0 ? cfg.dataset.train_limit : kSyntheticTrain;
      const std::size_t n_test = cfg.dataset.test_limit != 0 ? cfg.dataset.test_limit : kSyntheticTest;
      s.train = synthetic_toy(n_train, train_rng, Split::kTrain);
      s.test = synthetic_toy(n_test, test_rng, Split::kTest);
      break;
    }
  }
  return s;
}

RunPaths cmd_train(const ExperimentConfig& cfg, std::ostream& progress) {
  cfg.validate();
  RunPaths paths{cfg.output.dir};
  DataSplits data = load_splits(cfg);
  fs::create_directories(paths.dir);
  {
    auto out = open_out(paths.config());
    out << to_json(cfg).dump(2) << '\n';
  }
  Trainer trainer(cfg, std::move(data.train));
  auto log = open_out(paths.train_log());
  log << kTrainLogHeader << '\n';
  trainer.train([&](const StepRecord& r) {
    log << format_step(r) << '\n';
    if (r.step % 50 == 0) {
      progress << "step " << r.step << " epoch " << r.epoch << " loss " << r.loss << '\n';
    }
  });
  log.flush();
  auto model = trainer.eval_model();
  save_checkpoint(paths.checkpoint(), *model,
                  {{"steps", trainer.steps_done()}, {"dataset", to_string(data.test.source)}});
  progress << "trained " << trainer.steps_done() << " steps; checkpoint " << paths.checkpoint().string()
           << '\n';
  return paths;
}

std::vector<ExperimentRecord> cmd_sweep(const ExperimentConfig& cfg, const fs::path& checkpoint,
                                        const fs::path& csv_out) {
  const auto& sw = cfg.sweep;
  if (sw.snr_db.empty() || sw.seeds.empty() || sw.interference.empty()) {
    throw ConfigError("sweep grid is empty (sweep.snr_db, sweep.seeds and sweep.interference need entries)");
  }
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  Model& model = *ck.model;
  const ExperimentConfig& trained = model.config();
  const std::vector<double> cbrs = sw.cbr.empty() ? trained.pipeline.trained_cbrs() : sw.cbr;
  for (double c : cbrs) {
    try {
      model.head_for(c);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("sweep.cbr: ") + e.what());
    }
  }
  ExperimentConfig data_cfg = trained;
  data_cfg.dataset.test_limit = std::max(trained.dataset.test_limit, cfg.dataset.test_limit);
  const Dataset test = load_splits(data_cfg).test;
  const std::size_t n = std::min(sw.samples, test.size());
  if (n == 0) throw DataError(DataError::Kind::kFormat, "test split is empty");

  std::vector<ExperimentRecord> rows;
  std::size_t cell = 0;
  for (const auto seed : sw.seeds) {
    for (const double cbr : cbrs) {
      for (const auto& mixing : sw.interference) {
        for (const double snr : sw.snr_db) {
          const auto start = std::chrono::steady_clock::now();
          Rng rng = Rng::derive(seed, 1000 + cell++);
          const EvalCell ec{cbr, snr, mixing};
          MetricReport report;
          for (std::size_t b = 0; b < n; b += sw.batch_size) {
            const std::size_t e = std::min(n, b + sw.batch_size);
            const Tensor x = test.images.slice_rows(b, e);
            std::vector<Tensor> interferers;
            for (std::size_t k = 1; k < mixing.size(); ++k) {
              std::vector<std::size_t> idx;
              for (std::size_t i = b; i < e; ++i) idx.push_back(interferer_index(i, k, n, test.size()));
              interferers.push_back(test.images.gather_rows(idx));
            }
            report.append(evaluate_batch(x, model.reconstruct(x, interferers, ec, rng)));
          }
          ExperimentRecord r;
          r.seed = seed;
          r.dataset = to_string(test.source);
          r.pipeline = to_string(trained.pipeline.kind);
          r.regime = to_string(trained.pipeline.regime);
          r.cbr = cbr;
          r.snr_db = snr;
          r.sinr_db = sinr_db(mixing, trained.channel.power, snr_db_to_sigma2(snr, trained.channel.power));
          const auto p = report.psnr_summary(), s = report.ssim_summary();
          r.psnr_mean = p.mean;
          r.psnr_std = p.std;
          r.ssim_mean = s.mean;
          r.ssim_std = s.std;
          r.samples = report.samples();
          r.wall_ms = cfg.output.record_wall_time ? elapsed_ms(start) : 0.0;
          rows.push_back(r);
        }
      }
    }
  }
  auto out = open_out(csv_out);
  out << kSweepHeader << '\n';
  for (const auto& r : rows) out << format_record(r) << '\n';
  return rows;
}

void write_image(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_image expects (1|3, H, W), got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  auto out = open_out(path);
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::string px;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp((image[(ch * h + y) * w + x] + 1.0) * 127.5, 0.0, 255.0);
        px.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
      }
    }
  }
  out.write(px.data(), static_cast<std::streamsize>(px.size()));
}

std::size_t cmd_visualize(const ExperimentConfig& cfg, const fs::path& checkpoint, const fs::path& out_dir,
                          const VisualizeOptions& options) {
  if (options.count == 0) throw ConfigError("visualize needs a positive sample count");
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  Model& model = *ck.model;
  ExperimentConfig data_cfg = model.config();
  data_cfg.dataset.test_limit = std::max(data_cfg.dataset.test_limit, cfg.dataset.test_limit);
  const Dataset test = load_splits(data_cfg).test;
  if (options.count > test.size()) {
    throw ConfigError("visualize count " + std::to_string(options.count) + " exceeds the test split size");
  }
  std::vector<std::size_t> order(test.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng pick = Rng::derive(options.seed, 70);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  }
  order.resize(options.count);
  const Tensor x = test.images.gather_rows(order);
  const double cbr = options.cbr > 0 ? options.cbr : model.config().pipeline.trained_cbrs().back();
  Rng rng = Rng::derive(options.seed, 71);
  const Tensor recon = model.reconstruct(x, {}, EvalCell{cbr, options.snr_db, {1.0}}, rng);
  const MetricReport report = evaluate_batch(x, recon);

  fs::create_directories(out_dir);
  const std::string ext = test.image_shape()[0] == 1 ? ".pgm" : ".ppm";
  auto csv = open_out(out_dir / "samples.csv");
  csv << "sample,test_index,snr_db,cbr,psnr_db,ssim,original,reconstruction\n";
  for (std::size_t i = 0; i < options.count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%03zu", i);
    const std::string orig = std::string(stem) + "_original" + ext;
    const std::string rec = std::string(stem) + "_reconstruction" + ext;
    write_image(out_dir / orig, x.slice_rows(i, i + 1).reshaped(test.image_shape()));
    write_image(out_dir / rec, recon.slice_rows(i, i + 1).reshaped(test.image_shape()));
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%zu,%.4g,%.4g,%.6f,%.6f,", i, order[i], options.snr_db, cbr,
                  report.psnr_db[i], report.ssim[i]);
    csv << line << orig << ',' << rec << '\n';
  }
  return options.count;
}

void cmd_oracle(const OracleOptions& options, const fs::path& csv_out, std::ostream& progress) {
  if (options.n_list.empty() || options.seeds == 0) throw ConfigError("oracle needs sample counts and seeds");
  const LinearGaussianToy toy = LinearGaussianToy::default_toy();
  const double floor = bayes_floor(toy);
  std::vector<ConsistencyRow> rows;
  for (std::size_t s = 0; s < options.seeds; ++s) {
    const auto part = consistency_experiment(toy, options.n_list, s, options.eval_draws);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  auto out = open_out(csv_out);
  out << "n,seed,mse,heldout_loss,bayes_floor,well_posed\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%llu,%.10e,%.10e,%.10e,%d", r.n, static_cast<unsigned long long>(r.seed),
                  r.mse_to_analytic, r.heldout_loss, floor, r.well_posed ? 1 : 0);
    out << line << '\n';
  }
  progress << "bayes floor " << floor << "; " << rows.size() << " rows written to " << csv_out.string() << '\n';
}

}  // namespace semdiff
