// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pretraining driver: corpus -> vocabulary -> token sequences -> trainer
// steps, with optional output files.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mcl/encoder.hpp"
#include "mcl/real.hpp"
#include "mcl/run_config.hpp"
#include "mcl/trainer.hpp"
#include "mcl/vocab.hpp"

MCL_BEGIN_NAMESPACE

/// Encodes sentences, optionally behind a [CLS], truncating each so its
/// inserted view still fits in max_seq_len. Sentences with fewer than two
/// tokens are dropped.
std::vector<TokenSequence> encode_corpus(const std::vector<std::string>& lines, const Vocab& vocab,
                                         const EncoderConfig& encoder, const CorruptionRates& rates,
                                         bool prepend_cls = true);

/// The batch of step `step`: batch_size distinct sequences (fewer if the
/// corpus is smaller), drawn from a stream keyed by (seed, step).
std::vector<TokenSequence> sample_batch(const std::vector<TokenSequence>& corpus, std::size_t batch_size,
                                        std::uint64_t seed, std::size_t step);

struct PretrainResult {
  Model model;
  Vocab vocab;
  std::vector<MetricsRecord> metrics;
};

using StepCallback = std::function<void(const MetricsRecord&, const Model&)>;

/// Trains from `lines` in memory. The vocabulary holds at most
/// encoder.vocab_size entries.
PretrainResult pretrain(const RunConfig& config, const std::vector<std::string>& lines,
                        const StepCallback& on_step = {});

/// Reads config.corpus_path and writes into config.output_dir: config.cfg,
/// vocab.txt, metrics.csv, step-<N>.mcl every checkpoint_every steps and
/// final.mcl.
PretrainResult run_pretraining(const RunConfig& config);

MCL_END_NAMESPACE
