#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "semdiff/checkpoint.hpp"
#include "semdiff/commands.hpp"
#include "semdiff/errors.hpp"
#include "semdiff/trainer.hpp"

using namespace semdiff;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SEMDIFF_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ExperimentConfig tiny_config(const fs::path& dir) {
  ExperimentConfig cfg = preset("smoke");
  cfg.dataset.source = "synthetic";
  cfg.dataset.train_limit = 64;
  cfg.dataset.test_limit = 16;
  cfg.encoder.conv_channels = {4, 8, 8};
  cfg.denoiser.base_dim = 4;
  cfg.denoiser.dim_mults = {1, 2};
  cfg.trainer.batch_size = 8;
  cfg.trainer.max_steps = 4;
  cfg.sweep.samples = 4;
  cfg.sweep.batch_size = 4;
  cfg.output.dir = dir.string();
  return cfg;
}

class Commands : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "semdiff_commands_test";
    fs::remove_all(root_);
    std::ostringstream progress;
    paths_ = cmd_train(tiny_config(root_ / "run"), progress);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }
  static fs::path root_;
  static RunPaths paths_;
};

fs::path Commands::root_;
RunPaths Commands::paths_;

}  // namespace

TEST(Config, UnknownKeyAndTypeErrorsNameTheKey) {
  try {
    from_json(nlohmann::json::parse(R"({"trainer": {"learning_rate": 0.1}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("trainer.learning_rate"), std::string::npos);
  }
  try {
    from_json(nlohmann::json::parse(R"({"trainer": {"epochs": "ten"}})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("trainer.epochs"), std::string::npos);
  }
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"pipeline.cbr=1.5"}), ConfigError);
  EXPECT_THROW(apply_overrides(ExperimentConfig{}, {"nonsense"}), ConfigError);
  EXPECT_THROW(preset("huge"), ConfigError);
  ExperimentConfig ae;
  ae.pipeline.kind = PipelineKind::kAe;
  ae.pipeline.regime = Regime::kAdaptive;
  EXPECT_THROW(ae.validate(), ConfigError);
}

TEST(Config, JsonRoundTripAndOverrides) {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = preset(name);
    EXPECT_EQ(to_json(from_json(to_json(c))), to_json(c)) << name;
  }
  const auto c = apply_overrides(preset("smoke"), {"trainer.lr=0.01", "sweep.snr_db=[0,5]", "dataset.source=mnist"});
  EXPECT_EQ(c.trainer.lr, 0.01);
  EXPECT_EQ(c.sweep.snr_db, (std::vector<double>{0, 5}));
  EXPECT_EQ(c.dataset.source, "mnist");
}

TEST(Config, FullPresetValues) {
  const auto fixed = preset("mnist-full");
  EXPECT_EQ(fixed.schedule.steps, 200u);
  EXPECT_EQ(fixed.trainer.lr, 1e-3);
  EXPECT_EQ(fixed.trainer.snr_min_db, -10.0);
  EXPECT_EQ(fixed.trainer.snr_max_db, 10.0);
  EXPECT_EQ(fixed.pipeline.cbr, 0.3);
  EXPECT_EQ(fixed.trainer.epochs, 10u);
  EXPECT_EQ(fixed.pipeline.trained_cbrs(), (std::vector<double>{0.3}));
  const auto adaptive = preset("mnist-adaptive");
  EXPECT_EQ(adaptive.trainer.epochs, 20u);
  EXPECT_EQ(adaptive.pipeline.trained_cbrs(), (std::vector<double>{0.2, 0.25, 0.3, 0.35, 0.4, 0.45}));
  const auto cifar = preset("cifar-full");
  EXPECT_EQ(cifar.trainer.epochs, 50u);
  EXPECT_EQ(cifar.pipeline.cbr, 0.4);
  EXPECT_EQ(cifar.image_channels(), 3u);
  const auto s = fixed.build_diffusion_schedule();
  EXPECT_NEAR(s.beta(1), 1e-4, 1e-18);
  EXPECT_NEAR(s.beta(200), 0.0095, 1e-15);
}

TEST_F(Commands, TrainWritesEchoLogAndCheckpoint) {
  EXPECT_TRUE(fs::exists(paths_.config()));
  const auto log = lines(paths_.train_log());
  ASSERT_EQ(log.size(), 5u);
  EXPECT_EQ(log[0], kTrainLogHeader);
  for (std::size_t i = 1; i < log.size(); ++i) {
    const auto f = split(log[i]);
    ASSERT_EQ(f.size(), 6u);
    EXPECT_EQ(f[4], "0.3");
    EXPECT_EQ(f[5], "0.000");
  }
  const auto echo = load_config(paths_.config().string());
  EXPECT_EQ(to_json(echo), to_json(tiny_config(root_ / "run")));

  auto loaded = load_checkpoint(paths_.checkpoint());
  EXPECT_EQ(loaded.model->weights_tag(), WeightsTag::kEma);
  EXPECT_EQ(loaded.meta.at("steps").get<std::size_t>(), 4u);
}

TEST_F(Commands, RerunFromEchoIsByteIdentical) {
  std::ostringstream progress;
  auto cfg = load_config(paths_.config().string());
  cfg.output.dir = (root_ / "rerun").string();
  const RunPaths again = cmd_train(cfg, progress);
  EXPECT_EQ(slurp(again.train_log()), slurp(paths_.train_log()));
  auto a = load_checkpoint(again.checkpoint()), b = load_checkpoint(paths_.checkpoint());
  EXPECT_EQ(a.model->state().snapshot(), b.model->state().snapshot());
}

TEST_F(Commands, CheckpointRoundTripAndCorruption) {
  auto loaded = load_checkpoint(paths_.checkpoint());
  const fs::path copy = root_ / "copy.bin";
  save_checkpoint(copy, *loaded.model, loaded.meta);
  EXPECT_EQ(slurp(copy), slurp(paths_.checkpoint()));

  std::string bytes = slurp(paths_.checkpoint());
  const fs::path trunc = root_ / "trunc.bin";
  std::ofstream(trunc, std::ios::binary) << bytes.substr(0, bytes.size() - 9);
  EXPECT_THROW(load_checkpoint(trunc), DataError);
  bytes[0] = 'X';
  const fs::path bad = root_ / "bad.bin";
  std::ofstream(bad, std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(bad), DataError);
}

TEST_F(Commands, SweepGridRowsAndSinrColumn) {
  auto cfg = tiny_config(root_ / "run");
  cfg.sweep.snr_db = {-10, 0, 10, 20, 30};
  const fs::path csv = root_ / "sweep.csv";
  const auto rows = cmd_sweep(cfg, paths_.checkpoint(), csv);
  EXPECT_EQ(rows.size(), 5u);
  const auto text = lines(csv);
  ASSERT_EQ(text.size(), 6u);
  EXPECT_EQ(text[0], kSweepHeader);
  for (const auto& r : rows) {
    EXPECT_TRUE(std::isfinite(r.psnr_mean) && std::isfinite(r.ssim_mean) && std::isfinite(r.sinr_db));
    EXPECT_EQ(r.samples, 4u);
    EXPECT_NEAR(r.sinr_db, r.snr_db, 1e-9);
  }

  cfg.sweep.snr_db = {0};
  cfg.sweep.interference = {{0.8, 0.2}};
  cfg.sweep.seeds = {0, 1};
  const auto mixed = cmd_sweep(cfg, paths_.checkpoint(), root_ / "mixed.csv");
  ASSERT_EQ(mixed.size(), 2u);
  EXPECT_NEAR(mixed[0].sinr_db, -2.1, 0.05);
  EXPECT_EQ(split(lines(root_ / "mixed.csv")[1])[6], "-2.1085");
}

TEST_F(Commands, SweepValidationWritesNothing) {
  auto cfg = tiny_config(root_ / "run");
  const fs::path csv = root_ / "empty.csv";
  cfg.sweep.snr_db.clear();
  EXPECT_THROW(cmd_sweep(cfg, paths_.checkpoint(), csv), ConfigError);
  EXPECT_FALSE(fs::exists(csv));
  cfg = tiny_config(root_ / "run");
  cfg.sweep.cbr = {0.45};
  EXPECT_THROW(cmd_sweep(cfg, paths_.checkpoint(), csv), ConfigError);
  EXPECT_FALSE(fs::exists(csv));
  cfg.sweep.cbr = {0.2};
  cfg.sweep.snr_db = {10};
  EXPECT_EQ(cmd_sweep(cfg, paths_.checkpoint(), csv).size(), 1u);
}

TEST_F(Commands, SweepIsDeterministic) {
  auto cfg = tiny_config(root_ / "run");
  cmd_sweep(cfg, paths_.checkpoint(), root_ / "a.csv");
  cmd_sweep(cfg, paths_.checkpoint(), root_ / "b.csv");
  EXPECT_EQ(slurp(root_ / "a.csv"), slurp(root_ / "b.csv"));
}

TEST_F(Commands, VisualizeEmitsPairsAndSidecar) {
  const auto cfg = tiny_config(root_ / "run");
  VisualizeOptions opt;
  opt.count = 8;
  const fs::path out = root_ / "vis";
  EXPECT_EQ(cmd_visualize(cfg, paths_.checkpoint(), out, opt), 8u);
  const auto csv = lines(out / "samples.csv");
  EXPECT_EQ(csv.size(), 9u);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(out)) images += e.path().extension() == ".pgm" ? 1 : 0;
  EXPECT_EQ(images, 16u);
  const std::string pgm = slurp(out / "sample_000_original.pgm");
  EXPECT_EQ(pgm.substr(0, 13), "P5\n32 32\n255\n");
  EXPECT_EQ(pgm.size(), 13u + 1024u);
  const fs::path out2 = root_ / "vis2";
  cmd_visualize(cfg, paths_.checkpoint(), out2, opt);
  EXPECT_EQ(slurp(out / "samples.csv"), slurp(out2 / "samples.csv"));
  opt.count = 17;
  EXPECT_THROW(cmd_visualize(cfg, paths_.checkpoint(), out, opt), ConfigError);
}

TEST_F(Commands, OracleCsv) {
  OracleOptions opt;
  opt.n_list = {100, 1000};
  opt.seeds = 2;
  opt.eval_draws = 200;
  std::ostringstream progress;
  cmd_oracle(opt, root_ / "oracle.csv", progress);
  const auto csv = lines(root_ / "oracle.csv");
  ASSERT_EQ(csv.size(), 5u);
  EXPECT_EQ(csv[0], "n,seed,mse,heldout_loss,bayes_floor,well_posed");
  EXPECT_EQ(split(csv[2])[0], "1000");
}

TEST_F(Commands, CliExitCodes) {
  const std::string cfg_path = (root_ / "run" / "config.resolved.json").string();
  const std::string ck = paths_.checkpoint().string();
  EXPECT_EQ(run_cli("train --preset smoke --set trainer.bogus=1"), 2);
  EXPECT_EQ(run_cli("train --config " + root_.string() + "/missing.json"), 2);
  EXPECT_EQ(run_cli("sweep --config " + cfg_path + " --checkpoint " + root_.string() + "/none.bin"), 3);
  EXPECT_EQ(run_cli("sweep --config " + cfg_path + " --checkpoint " + ck + " --set 'sweep.snr_db=[]' --csv " +
                    root_.string() + "/cli_empty.csv"),
            2);
  EXPECT_FALSE(fs::exists(root_ / "cli_empty.csv"));
  EXPECT_EQ(run_cli("sweep --config " + cfg_path + " --checkpoint " + ck + " --csv " + root_.string() + "/cli.csv"), 0);
  EXPECT_EQ(lines(root_ / "cli.csv").size(), 3u);
  EXPECT_EQ(run_cli("oracle --n 50 --n 500 --seeds 1 --eval-draws 100 --csv " + root_.string() + "/o.csv"), 0);
  EXPECT_EQ(run_cli("bogus"), 2);
}

TEST(CommandsData, MissingMnistIsDataError) {
  ExperimentConfig cfg = preset("mnist-full");
  cfg.dataset.root = (fs::temp_directory_path() / "semdiff_no_data_here").string();
  EXPECT_THROW(load_splits(cfg), DataError);
  cfg.dataset.source = "auto";
  cfg.dataset.train_limit = 10;
  cfg.dataset.test_limit = 5;
  const auto s = load_splits(cfg);
  EXPECT_EQ(s.train.source, DataSource::kSynthetic);
  EXPECT_EQ(s.test.size(), 5u);
}
