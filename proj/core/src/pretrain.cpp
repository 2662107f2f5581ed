// SPDX-License-Identifier: Apache-2.0
#include "mcl/pretrain.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mcl/checkpoint.hpp"
#include "mcl/courses.hpp"
#include "mcl/errors.hpp"
#include "mcl/rng.hpp"

MCL_BEGIN_NAMESPACE

std::vector<TokenSequence> encode_corpus(const std::vector<std::string>& lines, const Vocab& vocab,
                                         const EncoderConfig& encoder, const CorruptionRates& rates,
                                         bool prepend_cls) {
  const std::size_t prefix = prepend_cls ? 1 : 0;
  std::size_t limit = encoder.max_seq_len - prefix;
  while (limit > 0 && prefix + limit + corruption_count(rates.insert, limit) > encoder.max_seq_len) --limit;
  std::vector<TokenSequence> out;
  for (const auto& line : lines) {
    std::vector<TokenId> ids = vocab.encode(line);
    if (ids.size() > limit) ids.resize(limit);
    if (ids.size() < 2) continue;
    if (prepend_cls) ids.insert(ids.begin(), kClsId);
    out.push_back(TokenSequence::from_ids(std::move(ids)));
  }
  return out;
}

std::vector<TokenSequence> sample_batch(const std::vector<TokenSequence>& corpus, std::size_t batch_size,
                                        std::uint64_t seed, std::size_t step) {
  Rng rng = Rng::derive(seed, step, 0);
  std::vector<TokenSequence> batch;
  for (std::size_t i : rng.sample_without_replacement(corpus.size(), std::min(batch_size, corpus.size()))) {
    batch.push_back(corpus[i]);
  }
  return batch;
}

PretrainResult pretrain(const RunConfig& config, const std::vector<std::string>& lines, const StepCallback& on_step) {
  config.validate();
  Vocab vocab = build_vocab(lines, config.encoder.vocab_size);
  const auto corpus = encode_corpus(lines, vocab, config.encoder, config.train.rates, config.prepend_cls);
  if (corpus.empty()) throw InputError("corpus has no sentence with at least two tokens");
  PretrainResult result{Model::initialize(config.encoder, config.train.seed), std::move(vocab), {}};
  Trainer trainer(result.model, config.train);
  result.metrics.reserve(config.train.total_steps);
  for (std::size_t step = 0; step < config.train.total_steps; ++step) {
    const auto batch = sample_batch(corpus, config.train.batch_size, config.train.seed, step);
    result.metrics.push_back(trainer.train_step(batch));
    if (on_step) on_step(result.metrics.back(), result.model);
  }
  return result;
}

PretrainResult run_pretraining(const RunConfig& config) {
  config.validate();
  namespace fs = std::filesystem;
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.cfg", std::ios::trunc);
    cfg << config.to_text();
  }
  std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
  if (!csv) throw InputError("cannot write metrics into '" + config.output_dir + "'");
  csv << metrics_csv_header() << '\n';
  auto on_step = [&](const MetricsRecord& m, const Model& model) {
    csv << metrics_csv_row(m) << '\n';
    const std::size_t done = m.step + 1;
    if (config.checkpoint_every && done % config.checkpoint_every == 0 && done != config.train.total_steps) {
      save_checkpoint((dir / ("step-" + std::to_string(done) + ".mcl")).string(), snapshot(model));
    }
    if (config.log_every && done % config.log_every == 0) {
      std::cerr << "step " << done << "/" << config.train.total_steps << " total_loss " << m.total_loss
                << " mlm " << m.loss(LossKind::kMlm) << " rtd " << m.loss(LossKind::kRtd) << '\n';
    }
  };
  PretrainResult result = pretrain(config, read_lines(config.corpus_path), on_step);
  result.vocab.save((dir / "vocab.txt").string());
  save_checkpoint((dir / "final.mcl").string(), snapshot(result.model));
  return result;
}

MCL_END_NAMESPACE
