// SPDX-License-Identifier: Apache-2.0
#pragma once

// Downstream probe: a logistic-regression layer on the discriminator's
// representation of a prepended [CLS] token.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mcl/encoder.hpp"
#include "mcl/real.hpp"
#include "mcl/toy_corpus.hpp"
#include "mcl/vocab.hpp"

MCL_BEGIN_NAMESPACE

struct ProbeOptions {
  /// Also update the discriminator (otherwise it stays frozen).
  bool fine_tune = false;
  double test_fraction = 0.4;
  std::uint64_t seed = 1;
  // Frozen mode: full-batch gradient descent on standardized features.
  std::size_t iterations = 1000;
  double step_size = 0.5;
  double l2 = 1e-3;
  // Fine-tune mode.
  std::size_t epochs = 3;
  std::size_t batch_size = 16;
  double fine_tune_lr = 1e-4;
};

struct ProbeResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

/// [CLS] followed by the encoded sentence, truncated to max_len.
TokenSequence probe_input(const Vocab& vocab, const std::string& text, std::size_t max_len);

/// Discriminator output at position 0 of every input, row-major [n x hidden].
std::vector<double> cls_features(const Model& model, const std::vector<TokenSequence>& inputs);

/// Trains on a seeded split and reports held-out accuracy. Throws InputError
/// when the dataset has a single class.
ProbeResult probe_train_eval(const Model& model, const Vocab& vocab, const std::vector<LabeledSentence>& data,
                             const ProbeOptions& options = {});

MCL_END_NAMESPACE
