// SPDX-License-Identifier: Apache-2.0
// mcl: pretraining, course-soup sweeps, merging, probing and data helpers.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "mcl/checkpoint.hpp"
#include "mcl/errors.hpp"
#include "mcl/pretrain.hpp"
#include "mcl/probe.hpp"
#include "mcl/run_config.hpp"
#include "mcl/soups.hpp"
#include "mcl/toy_corpus.hpp"
#include "mcl/trainer.hpp"

namespace fs = std::filesystem;
using namespace mcl;

namespace {

std::string sibling_vocab(const std::string& checkpoint) {
  return (fs::path(checkpoint).parent_path() / "vocab.txt").string();
}

int cmd_pretrain(const std::string& config_path) {
  const RunConfig config = load_run_config(config_path);
  config.validate();
  const auto result = run_pretraining(config);
  const auto& last = result.metrics.back();
  std::cout << "wrote " << (fs::path(config.output_dir) / "final.mcl").string() << " after " << result.metrics.size()
            << " steps, total_loss " << last.total_loss << "\n";
  return 0;
}

int cmd_make_manifest(const std::string& base_config, const std::string& out_dir, std::uint64_t seed,
                      const std::string& manifest_path) {
  make_sweep_manifest(base_config, out_dir, seed).save(manifest_path);
  std::cout << "wrote " << manifest_path << "\n";
  return 0;
}

int cmd_sweep(const std::string& manifest_path) {
  SweepManifest manifest = SweepManifest::load(manifest_path);
  run_sweep(manifest);
  manifest.save(manifest_path);
  std::cout << "trained " << manifest.runs.size() << " runs\n";
  return 0;
}

int cmd_soup(const std::string& manifest_path, const std::string& mode, const std::string& weights_path,
             const std::string& probe_data, std::string vocab_path, std::string out_path, std::string report_path) {
  SweepManifest manifest = SweepManifest::load(manifest_path);
  std::vector<ModelCheckpoint> checkpoints;
  for (const auto& run : manifest.runs) checkpoints.push_back(load_checkpoint(run.checkpoint));
  SoupWeights weights;
  if (mode == "uniform") {
    weights = SoupWeights::uniform(checkpoints.size());
  } else if (!weights_path.empty()) {
    weights = SoupWeights::load(weights_path);
  } else {
    std::string warning;
    if (!probe_data.empty()) {
      if (vocab_path.empty()) vocab_path = sibling_vocab(manifest.runs.front().checkpoint);
      weights = score_runs(manifest, Vocab::load(vocab_path), load_labeled(probe_data), {}, &warning);
      manifest.save(manifest_path);
    } else {
      std::vector<std::optional<double>> scores;
      for (const auto& r : manifest.runs) scores.push_back(r.score);
      weights = SoupWeights::from_scores(scores, &warning);
    }
    if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
  }
  const fs::path base = manifest.output_dir.empty() ? fs::path(".") : fs::path(manifest.output_dir);
  if (out_path.empty()) out_path = (base / ("soup-" + mode + ".mcl")).string();
  if (report_path.empty()) report_path = (base / ("soup-" + mode + ".csv")).string();
  save_checkpoint(out_path, merge_checkpoints(checkpoints, weights));
  std::ofstream(report_path, std::ios::trunc) << soup_report_csv(manifest, weights);
  std::cout << "wrote " << out_path << " (" << checkpoints.size() << " checkpoints)\n";
  return 0;
}

int cmd_probe(const std::string& checkpoint, const std::string& data, std::string vocab_path, bool fine_tune,
              std::uint64_t seed) {
  if (vocab_path.empty()) vocab_path = sibling_vocab(checkpoint);
  const Model model = restore(load_checkpoint(checkpoint));
  ProbeOptions options;
  options.fine_tune = fine_tune;
  options.seed = seed;
  const auto r = probe_train_eval(model, Vocab::load(vocab_path), load_labeled(data), options);
  std::cout << "train_accuracy " << r.train_accuracy << " (" << r.train_size << ")\n"
            << "test_accuracy " << r.test_accuracy << " (" << r.test_size << ")\n";
  return 0;
}

int cmd_export_metrics(const std::string& run_dir, const std::string& out) {
  const fs::path src = fs::path(run_dir) / "metrics.csv";
  std::ifstream in(src);
  if (!in) throw InputError("no metrics.csv in '" + run_dir + "'");
  std::string header;
  std::getline(in, header);
  if (header != metrics_csv_header()) throw FormatError("'" + src.string() + "' has an unexpected header");
  std::ofstream dst(out, std::ios::trunc);
  if (!dst) throw InputError("cannot write '" + out + "'");
  dst << header << "\n" << in.rdbuf();
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_make_corpus(const std::string& out, std::size_t sentences, std::uint64_t seed) {
  std::ofstream dst(out, std::ios::trunc);
  if (!dst) throw InputError("cannot write '" + out + "'");
  for (const auto& s : generate_toy_corpus(sentences, seed)) dst << s << "\n";
  return 0;
}

int cmd_make_probe_data(const std::string& out, const std::string& kind, std::size_t n, std::uint64_t seed,
                        const std::string& token) {
  save_labeled(out, kind == "random" ? make_random_label_dataset(n, seed) : make_presence_dataset(n, seed, token));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MCL pretraining toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  auto* pretrain = app.add_subcommand("pretrain", "Train a generator/discriminator pair");
  pretrain->add_option("--config", config_path, "Run config file")->required();

  std::string manifest_path, base_config, out_dir;
  std::uint64_t seed = 1;
  auto* make_manifest = app.add_subcommand("make-manifest", "Write a 14-run course-soup sweep manifest");
  make_manifest->add_option("--base-config", base_config, "Run config shared by every run")->required();
  make_manifest->add_option("--out-dir", out_dir, "Directory for run outputs")->required();
  make_manifest->add_option("--manifest", manifest_path, "Manifest to write")->required();
  make_manifest->add_option("--seed", seed, "Seed for every run");

  auto* sweep = app.add_subcommand("sweep", "Train every run of a sweep manifest");
  sweep->add_option("--manifest", manifest_path, "Sweep manifest (JSON)")->required();

  std::string mode, weights_path, probe_data, vocab_path, out_path, report_path;
  auto* soup = app.add_subcommand("soup", "Average the checkpoints of a sweep");
  soup->add_option("--manifest", manifest_path, "Sweep manifest (JSON)")->required();
  soup->add_option("--mode", mode, "uniform or weighted")->required()->check(CLI::IsMember({"uniform", "weighted"}));
  soup->add_option("--weights", weights_path, "Explicit weights file (weighted mode)");
  soup->add_option("--probe-data", probe_data, "Score runs on this probe dataset (weighted mode)");
  soup->add_option("--vocab", vocab_path, "Vocabulary for probing");
  soup->add_option("--out", out_path, "Merged checkpoint path");
  soup->add_option("--report", report_path, "Soup report CSV path");

  std::string checkpoint, data;
  bool fine_tune = false;
  auto* probe = app.add_subcommand("probe", "Train and evaluate a [CLS] classifier");
  probe->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  probe->add_option("--data", data, "Labeled data, '<0|1><TAB><sentence>' per line")->required();
  probe->add_option("--vocab", vocab_path, "Vocabulary (default: vocab.txt next to the checkpoint)");
  probe->add_flag("--fine-tune", fine_tune, "Update the discriminator too");
  probe->add_option("--seed", seed, "Split and initialization seed");

  std::string run_dir, out;
  auto* export_metrics = app.add_subcommand("export-metrics", "Copy a run's metrics stream");
  export_metrics->add_option("--run", run_dir, "Run output directory")->required();
  export_metrics->add_option("--out", out, "Destination CSV")->required();

  std::size_t count = 1000;
  auto* make_corpus = app.add_subcommand("make-corpus", "Generate the template-grammar toy corpus");
  make_corpus->add_option("--out", out, "Destination text file")->required();
  make_corpus->add_option("--sentences", count, "Number of sentences");
  make_corpus->add_option("--seed", seed, "Grammar seed");

  std::string kind = "presence", token = kProbeToken;
  auto* make_probe = app.add_subcommand("make-probe-data", "Generate a labeled probe dataset");
  make_probe->add_option("--out", out, "Destination file")->required();
  make_probe->add_option("--kind", kind, "presence or random")->check(CLI::IsMember({"presence", "random"}));
  make_probe->add_option("--size", count, "Number of examples");
  make_probe->add_option("--seed", seed, "Seed");
  make_probe->add_option("--token", token, "Token whose presence is the label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*pretrain) return cmd_pretrain(config_path);
    if (*make_manifest) return cmd_make_manifest(base_config, out_dir, seed, manifest_path);
    if (*sweep) return cmd_sweep(manifest_path);
    if (*soup) return cmd_soup(manifest_path, mode, weights_path, probe_data, vocab_path, out_path, report_path);
    if (*probe) return cmd_probe(checkpoint, data, vocab_path, fine_tune, seed);
    if (*export_metrics) return cmd_export_metrics(run_dir, out);
    if (*make_corpus) return cmd_make_corpus(out, count, seed);
    if (*make_probe) return cmd_make_probe_data(out, kind, count, seed, token);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
