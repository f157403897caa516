// smrnet command-line tool: dataset generation, training, evaluation, and the
// ablation matrix.
//
// Exit codes: 0 success, 2 usage/config error, 3 runtime/numeric/IO error,
// 4 checkpoint corruption.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "smrnet/checkpoint.hpp"
#include "smrnet/report.hpp"
#include "smrnet/synthgel.hpp"
#include "smrnet/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitCorrupt = 4;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct GenerateArgs {
  std::string type;
  int count = 0;
  uint64_t seed = 1;
  std::string out_dir;
  int size = 96;
};

int run_generate(const GenerateArgs& a) {
  if (a.type != "A" && a.type != "B") {
    std::cerr << "error: --type must be A or B\n";
    return kExitUsage;
  }
  if (a.count < 1) {
    std::cerr << "error: --count must be >= 1\n";
    return kExitUsage;
  }
  smrnet::GelRenderParams params;
  params.image_size = a.size;
  auto manifest = smrnet::generate_dataset(a.type[0], a.count, a.seed, a.out_dir, params);
  std::cout << manifest.path << "\n";
  std::cout << "digest " << smrnet::hex64(manifest.digest) << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config_file;
  std::string data;
  std::string out_ckpt;
  std::string log_file;
  int epochs_override = -1;
  long long seed_override = -1;
};

int run_train(const TrainArgs& a) {
  smrnet::RunConfig cfg = a.config_file.empty()
                              ? smrnet::RunConfig{}
                              : smrnet::RunConfig::from_file(a.config_file);
  if (!a.data.empty()) cfg.data_dirs = split_list(a.data);
  if (a.epochs_override > 0) cfg.train.epochs = a.epochs_override;
  if (a.seed_override >= 0) cfg.seed = static_cast<uint64_t>(a.seed_override);
  if (cfg.data_dirs.empty()) {
    std::cerr << "error: no dataset directories (use --data)\n";
    return kExitUsage;
  }

  std::vector<smrnet::LoadedDataset> data;
  for (const auto& dir : cfg.data_dirs) data.push_back(smrnet::load_dataset(dir));

  std::ofstream log_stream;
  std::ostringstream log_buffer;
  if (!a.log_file.empty()) {
    log_stream.open(a.log_file, std::ios::trunc);
    if (!log_stream) throw smrnet::IoError("train: cannot open log " + a.log_file);
  }

  smrnet::Model model(cfg.model);
  auto outcome = smrnet::train_model(cfg, data, model, &log_buffer);

  std::cout << log_buffer.str();
  if (log_stream) log_stream << log_buffer.str();

  if (!a.out_ckpt.empty()) {
    smrnet::save_checkpoint(a.out_ckpt, cfg, model);
    std::cout << "checkpoint " << a.out_ckpt << "\n";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "final_loss %.12g\n", outcome.final_loss);
  std::cout << buf;
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::string report_file;
  bool oracle = false;
  bool empty = false;
};

int run_eval(const EvalArgs& a) {
  if (a.oracle && a.empty) {
    std::cerr << "error: --oracle and --empty are mutually exclusive\n";
    return kExitUsage;
  }
  if (a.ckpt.empty() && !a.oracle && !a.empty) {
    std::cerr << "error: --ckpt required unless --oracle or --empty\n";
    return kExitUsage;
  }
  auto ds = smrnet::load_dataset(a.data);
  const auto indices = ds.eval_indices();

  smrnet::RunConfig cfg;
  smrnet::EvalOutcome outcome;
  if (a.oracle || a.empty) {
    outcome = smrnet::evaluate_dataset(
        nullptr, ds, indices, a.oracle ? smrnet::Predictor::oracle : smrnet::Predictor::empty);
  } else {
    auto loaded = smrnet::load_checkpoint(a.ckpt);
    cfg = loaded.cfg;
    outcome = smrnet::evaluate_dataset(&loaded.model, ds, indices);
  }

  const std::string json =
      smrnet::report_to_json(outcome.report, cfg, ds.manifest_digest, a.ckpt);
  if (!a.report_file.empty()) {
    std::ofstream f(a.report_file, std::ios::trunc);
    if (!f) throw smrnet::IoError("eval: cannot open report " + a.report_file);
    f << json;
  }
  std::cout << smrnet::report_csv_header() << "\n"
            << smrnet::report_csv_row(outcome.report) << "\n";
  return kExitOk;
}

struct AblateArgs {
  std::string config_file;
  std::string data;
  std::string seeds = "1";
  std::string report_file;
};

int run_ablate(const AblateArgs& a) {
  smrnet::RunConfig cfg = a.config_file.empty()
                              ? smrnet::RunConfig{}
                              : smrnet::RunConfig::from_file(a.config_file);
  if (!a.data.empty()) cfg.data_dirs = split_list(a.data);
  if (cfg.data_dirs.empty()) {
    std::cerr << "error: no dataset directories (use --data)\n";
    return kExitUsage;
  }
  std::vector<uint64_t> seeds;
  for (const auto& s : split_list(a.seeds)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) {
    std::cerr << "error: --seeds must list at least one seed\n";
    return kExitUsage;
  }

  std::vector<smrnet::LoadedDataset> data;
  for (const auto& dir : cfg.data_dirs) data.push_back(smrnet::load_dataset(dir));

  auto rows = smrnet::run_ablation(cfg, data, seeds, &std::cerr);
  const std::string table = smrnet::format_ablation_table(rows);
  std::cout << table;
  if (!a.report_file.empty()) {
    std::ofstream f(a.report_file, std::ios::trunc);
    if (!f) throw smrnet::IoError("ablate: cannot open report " + a.report_file);
    f << table;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"smrnet: multi-scale attention detector on synthetic gel-sensor data"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* cmd_gen = app.add_subcommand("generate", "Generate a synthetic snap dataset");
  cmd_gen->add_option("--type", gen.type, "Snap type (A or B)")->required();
  cmd_gen->add_option("--count", gen.count, "Number of images")->required();
  cmd_gen->add_option("--seed", gen.seed, "Generator seed");
  cmd_gen->add_option("--out", gen.out_dir, "Output directory")->required();
  cmd_gen->add_option("--size", gen.size, "Image size in pixels (divisible by 32)");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train a model");
  cmd_train->add_option("--config", tr.config_file, "Run configuration file");
  cmd_train->add_option("--data", tr.data, "Dataset dir (or DIR1,DIR2)")->required();
  cmd_train->add_option("--out", tr.out_ckpt, "Checkpoint output path");
  cmd_train->add_option("--log", tr.log_file, "CSV log file");
  cmd_train->add_option("--epochs", tr.epochs_override, "Override epoch count");
  cmd_train->add_option("--seed", tr.seed_override, "Override seed");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  cmd_eval->add_option("--ckpt", ev.ckpt, "Checkpoint path");
  cmd_eval->add_option("--data", ev.data, "Dataset dir")->required();
  cmd_eval->add_option("--report", ev.report_file, "JSON report path");
  cmd_eval->add_flag("--oracle", ev.oracle, "Echo ground truth as predictions");
  cmd_eval->add_flag("--empty", ev.empty, "Predict nothing");

  AblateArgs ab;
  auto* cmd_ablate = app.add_subcommand("ablate", "Train and evaluate the 4-variant ablation matrix");
  cmd_ablate->add_option("--config", ab.config_file, "Run configuration file");
  cmd_ablate->add_option("--data", ab.data, "Dataset dirs DIRA,DIRB")->required();
  cmd_ablate->add_option("--seeds", ab.seeds, "Comma-separated seeds");
  cmd_ablate->add_option("--report", ab.report_file, "Table output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*cmd_gen) return run_generate(gen);
    if (*cmd_train) return run_train(tr);
    if (*cmd_eval) return run_eval(ev);
    if (*cmd_ablate) return run_ablate(ab);
  } catch (const smrnet::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCorrupt;
  } catch (const smrnet::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const smrnet::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const smrnet::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
