#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semdiff/commands.hpp"
#include "semdiff/errors.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::string preset_name;
  std::vector<std::string> sets;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON experiment config");
  cmd->add_option("-p,--preset", o.preset_name, "Start from a named preset");
  cmd->add_option("-s,--set", o.sets, "Override a config key (section.key=value)");
  cmd->add_option("-o,--out", o.out_dir, "Output directory (overrides output.dir)");
}

semdiff::ExperimentConfig resolve(const CommonOptions& o) {
  semdiff::ExperimentConfig cfg = o.preset_name.empty() ? semdiff::ExperimentConfig{} : semdiff::preset(o.preset_name);
  if (!o.config_path.empty()) cfg = semdiff::load_config(o.config_path, cfg);
  std::vector<std::string> sets = o.sets;
  if (!o.out_dir.empty()) sets.push_back("output.dir=\"" + o.out_dir + "\"");
  if (!sets.empty()) cfg = semdiff::apply_overrides(cfg, sets);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion-decoded semantic communication experiments"};
  app.require_subcommand(1);

  CommonOptions train_opts, sweep_opts, vis_opts;
  auto* train = app.add_subcommand("train", "Train a pipeline and write log, config echo and checkpoint");
  add_common(train, train_opts);

  auto* sweep = app.add_subcommand("sweep", "Evaluate a checkpoint over an SNR x CBR x interference grid");
  add_common(sweep, sweep_opts);
  std::string sweep_ckpt, sweep_csv = "sweep.csv";
  sweep->add_option("--checkpoint", sweep_ckpt, "Checkpoint file")->required();
  sweep->add_option("--csv", sweep_csv, "Output CSV path");

  auto* vis = app.add_subcommand("visualize", "Write original/reconstruction image pairs");
  add_common(vis, vis_opts);
  std::string vis_ckpt;
  semdiff::VisualizeOptions vis_cfg;
  vis->add_option("--checkpoint", vis_ckpt, "Checkpoint file")->required();
  vis->add_option("-n,--count", vis_cfg.count, "Number of samples");
  vis->add_option("--snr-db", vis_cfg.snr_db, "Test SNR in dB");
  vis->add_option("--cbr", vis_cfg.cbr, "Test CBR (default: trained)");
  vis->add_option("--seed", vis_cfg.seed, "Selection and channel seed");

  auto* oracle = app.add_subcommand("oracle", "Run the consistency experiment on the Gaussian toy");
  semdiff::OracleOptions oracle_cfg;
  std::string oracle_csv = "oracle.csv";
  oracle->add_option("--n", oracle_cfg.n_list, "Training sample counts (increasing)");
  oracle->add_option("--seeds", oracle_cfg.seeds, "Number of seeds");
  oracle->add_option("--eval-draws", oracle_cfg.eval_draws, "Held-out draws per seed");
  oracle->add_option("--csv", oracle_csv, "Output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      semdiff::cmd_train(resolve(train_opts), std::cout);
    } else if (*sweep) {
      const auto rows = semdiff::cmd_sweep(resolve(sweep_opts), sweep_ckpt, sweep_csv);
      std::cout << rows.size() << " rows written to " << sweep_csv << '\n';
    } else if (*vis) {
      const auto cfg = resolve(vis_opts);
      const auto n = semdiff::cmd_visualize(cfg, vis_ckpt, cfg.output.dir, vis_cfg);
      std::cout << n << " pairs written to " << cfg.output.dir << '\n';
    } else if (*oracle) {
      semdiff::cmd_oracle(oracle_cfg, oracle_csv, std::cout);
    }
  } catch (const semdiff::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const semdiff::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const semdiff::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const semdiff::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
