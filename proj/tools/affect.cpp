// Command-line front end: curation, synthetic data, training, evaluation,
// threshold tuning and report comparison over the affect library.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "affect/checkpoint.hpp"
#include "affect/dataset.hpp"
#include "affect/errors.hpp"
#include "affect/metrics.hpp"
#include "affect/thresholds.hpp"
#include "affect/trainer.hpp"

namespace fs = std::filesystem;
using namespace affect;

namespace {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("short write to " + path);
}

/// Loads a saved dataset and applies the standard curation filter.
std::vector<Sample> load_curated_samples(const std::string& dir) {
  std::vector<Sample> all = load_dataset(dir);
  std::vector<Sample> kept;
  kept.reserve(all.size());
  for (Sample& sample : all) {
    if (drop_reason(sample.record, VaRange{}) == DropReason::kNone) {
      kept.push_back(std::move(sample));
    }
  }
  if (kept.size() < all.size()) {
    std::cout << "curation dropped " << all.size() - kept.size() << " of "
              << all.size() << " samples from " << dir << "\n";
  }
  if (kept.empty()) throw DataError("no usable samples in " + dir);
  return kept;
}

void cmd_curate(const std::string& annotations, const std::string& out,
                double va_min, double va_max) {
  VaRange range{va_min, va_max};
  range.validate();
  std::vector<AnnotationRecord> records = load_annotations(annotations);
  CurationResult result = curate(records, range);
  fs::create_directories(out);

  const std::string csv_path = (fs::path(out) / "annotations.csv").string();
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw DataError("cannot write " + csv_path);
  write_annotations(csv, result.kept);
  if (!csv) throw DataError("short write to " + csv_path);
  write_text_file((fs::path(out) / "curation.json").string(),
                  result.report.to_json());

  const CurationReport& r = result.report;
  std::cout << "kept " << r.kept << " of " << r.total_in << " records (va "
            << r.invalid_va << ", expr " << r.invalid_expr << ", au "
            << r.invalid_au << " dropped)\n";
}

void cmd_synth(std::size_t n, std::uint64_t seed, const std::string& out,
               std::size_t image_size) {
  std::vector<Sample> samples = generate_synthetic(n, seed, image_size);
  save_dataset(out, samples);
  std::cout << "wrote " << samples.size() << " samples (" << image_size << "x"
            << image_size << ") to " << out << "\n";
}

void cmd_train(const std::string& config_path, const std::string& mode,
               const std::string& out) {
  std::string text;
  try {
    text = read_text_file(config_path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  TrainConfig cfg;
  try {
    cfg = TrainConfig::from_json(text);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  if (!mode.empty()) cfg.mode = train_mode_from_string(mode);
  cfg.validate();

  Trainer trainer(cfg);
  std::cout << "train: " << trainer.train_curation().kept << " samples, val: "
            << trainer.val_curation().kept << " samples, mode "
            << to_string(cfg.mode) << "\n";

  TrainResult result = trainer.run();
  for (const EpochLog& log : result.logs) {
    std::printf(
        "stage %d epoch %3zu  loss %.4f (va %.4f expr %.4f au %.4f att %.4f)"
        "  val P %.4f  %.2fs\n",
        log.stage, log.epoch, log.loss_total, log.loss_va, log.loss_expr,
        log.loss_au, log.loss_att, log.val.p, log.seconds);
  }

  trainer.model().load_state(result.best_state);
  fs::create_directories(out);
  save_checkpoint((fs::path(out) / "checkpoint.bin").string(),
                  trainer.model());
  write_text_file((fs::path(out) / "trainlog.json").string(),
                  result.logs_to_json());
  write_text_file((fs::path(out) / "report.json").string(),
                  result.best_report.to_json());
  write_text_file((fs::path(out) / "config.json").string(), cfg.to_json());

  std::cout << "best epoch " << result.best_epoch << "\n"
            << result.best_report.to_table() << "saved checkpoint and logs to "
            << out << "\n";
}

void cmd_eval(const std::string& checkpoint, const std::string& data,
              const std::string& thresholds_path, const std::string& out,
              std::size_t batch_size) {
  Model model = load_checkpoint(checkpoint);
  std::vector<Sample> samples = load_curated_samples(data);
  ThresholdSet thresholds;
  if (!thresholds_path.empty()) {
    thresholds = ThresholdSet::from_json(read_text_file(thresholds_path));
  }
  MetricReport report = evaluate(model, samples, thresholds, batch_size);
  std::cout << report.to_table();
  if (out.empty()) {
    std::cout << report.to_json() << "\n";
  } else {
    write_text_file(out, report.to_json());
    std::cout << "wrote " << out << "\n";
  }
}

void cmd_optimize(const std::string& checkpoint, const std::string& data,
                  const std::string& out, std::size_t batch_size) {
  Model model = load_checkpoint(checkpoint);
  std::vector<Sample> samples = load_curated_samples(data);
  std::vector<double> probs;
  std::vector<int> truth;
  collect_au_probs(model, samples, batch_size, probs, truth);
  std::vector<double> grid = default_threshold_grid();
  ThresholdResult result = optimize_thresholds(probs, truth, grid);
  write_text_file(out, result.thresholds.to_json());
  std::printf("AU macro F1 %.4f -> %.4f; thresholds written to %s\n",
              result.f1_before, result.f1_after, out.c_str());
}

void cmd_report(const std::vector<std::string>& paths) {
  std::printf("%-28s %7s %7s %7s %8s %7s %8s\n", "Run", "CCC_V", "CCC_A",
              "CCC_VA", "F1_Expr", "F1_AU", "P");
  for (const std::string& path : paths) {
    MetricReport report = MetricReport::from_json(read_text_file(path));
    std::string name = fs::path(path).stem().string();
    if (name.size() > 28) name.resize(28);
    std::printf("%-28s %7.3f %7.3f %7.3f %8.3f %7.3f %8.3f\n", name.c_str(),
                report.ccc_v, report.ccc_a, report.ccc_va, report.f1_expr,
                report.f1_au, report.p);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facial affect multitask toolkit"};
  app.require_subcommand(1);

  auto* curate_cmd =
      app.add_subcommand("curate", "filter an annotation CSV to valid rows");
  std::string curate_annotations, curate_out;
  double va_min = -1.0, va_max = 1.0;
  curate_cmd->add_option("--annotations", curate_annotations, "input CSV")
      ->required();
  curate_cmd->add_option("--out", curate_out, "output directory")->required();
  curate_cmd->add_option("--va-min", va_min, "lowest accepted valence/arousal");
  curate_cmd->add_option("--va-max", va_max,
                         "highest accepted valence/arousal");
  curate_cmd->callback(
      [&] { cmd_curate(curate_annotations, curate_out, va_min, va_max); });

  auto* synth_cmd =
      app.add_subcommand("synth", "generate a labeled synthetic dataset");
  std::size_t synth_n = 0, synth_size = 32;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  synth_cmd->add_option("--n", synth_n, "number of samples")->required();
  synth_cmd->add_option("--seed", synth_seed, "generator seed")->required();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--image-size", synth_size, "square image side");
  synth_cmd->callback(
      [&] { cmd_synth(synth_n, synth_seed, synth_out, synth_size); });

  auto* train_cmd = app.add_subcommand("train", "two-stage training run");
  std::string train_config, train_mode, train_out = "train_out";
  train_cmd->add_option("--config", train_config, "TrainConfig JSON file")
      ->required();
  train_cmd->add_option("--mode", train_mode,
                        "override: multitask, va, expr or au");
  train_cmd->add_option("--out", train_out, "output directory");
  train_cmd->callback([&] { cmd_train(train_config, train_mode, train_out); });

  auto* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint on a dataset");
  std::string eval_checkpoint, eval_data, eval_thresholds, eval_out;
  std::size_t eval_batch = 16;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--thresholds", eval_thresholds,
                       "per-unit threshold JSON");
  eval_cmd->add_option("--out", eval_out, "metric report JSON path");
  eval_cmd->add_option("--batch-size", eval_batch, "evaluation batch size");
  eval_cmd->callback([&] {
    cmd_eval(eval_checkpoint, eval_data, eval_thresholds, eval_out,
             eval_batch);
  });

  auto* opt_cmd = app.add_subcommand(
      "optimize-thresholds", "tune per-unit activation cutoffs");
  std::string opt_checkpoint, opt_data, opt_out;
  std::size_t opt_batch = 16;
  opt_cmd->add_option("--checkpoint", opt_checkpoint, "checkpoint file")
      ->required();
  opt_cmd->add_option("--data", opt_data, "dataset directory")->required();
  opt_cmd->add_option("--out", opt_out, "threshold JSON path")->required();
  opt_cmd->add_option("--batch-size", opt_batch, "evaluation batch size");
  opt_cmd->callback(
      [&] { cmd_optimize(opt_checkpoint, opt_data, opt_out, opt_batch); });

  auto* report_cmd =
      app.add_subcommand("report", "compare metric report JSON files");
  std::vector<std::string> report_files;
  report_cmd->add_option("--metrics", report_files, "report JSON files")
      ->required();
  report_cmd->callback([&] { cmd_report(report_files); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
