// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-supervision courses: corruption planning (mask, swap, insert), the
// corrupted views, generator sampling into those views and the five course
// losses (MLM, SLM on the generator; RTD, STD, ITD on the discriminator).

#include <cstddef>
#include <span>
#include <vector>

#include "mcl/encoder.hpp"
#include "mcl/real.hpp"
#include "mcl/rng.hpp"
#include "mcl/tensor.hpp"
#include "mcl/tokens.hpp"

MCL_BEGIN_NAMESPACE

struct CorruptionRates {
  double mask = 0.15;
  double swap = 0.15;
  double insert = 0.15;

  /// Throws ConfigError unless every rate lies in [0, 0.5].
  void validate() const;
};

/// round(rate * n) with halves rounded away from zero.
std::size_t corruption_count(double rate, std::size_t n_real);

struct CorruptionPlan {
  std::vector<std::size_t> mask_positions;  // sorted
  std::vector<std::size_t> swap_positions;  // sorted
  /// The token landing at swap_positions[k] comes from
  /// swap_positions[swap_permutation[k]].
  std::vector<std::size_t> swap_permutation;
  /// Positions of inserted [MASK] slots in the extended sequence, sorted.
  std::vector<std::size_t> insert_positions;
  std::size_t original_length = 0;
  std::size_t extended_length = 0;

  friend bool operator==(const CorruptionPlan&, const CorruptionPlan&) = default;
};

/// Samples mask, swap and insert position sets for one sequence. A leading
/// [CLS] is left alone; at least two other real tokens are needed.
CorruptionPlan plan_corruption(const TokenSequence& x, const CorruptionRates& rates, Rng& rng);

TokenSequence apply_mask(const TokenSequence& x, const CorruptionPlan& plan);
TokenSequence apply_swap(const TokenSequence& x, const CorruptionPlan& plan);
/// Throws InputError when the extended sequence would exceed max_seq_len.
TokenSequence apply_insert(const TokenSequence& x, const CorruptionPlan& plan, std::size_t max_seq_len);
/// Inverse of apply_insert: drops the inserted slots.
TokenSequence remove_inserted(const TokenSequence& extended, const CorruptionPlan& plan);

/// Replaces view[positions[i]] with a token drawn from softmax(logits row i)
/// at temperature 1. `logits` is detached data; no gradient flows through
/// the sampled ids.
TokenSequence splice_generator_samples(const TokenSequence& view, const Tensor& logits,
                                       std::span<const std::size_t> positions, Rng& rng);

/// Draws one index from softmax(row). Exposed for testing.
std::size_t sample_from_logits(std::span<const Real> row, Rng& rng);

/// 1 where view[i] == original[i] (token equality), for every position.
std::vector<std::uint8_t> equality_labels(const TokenSequence& view, const TokenSequence& original);
/// 1 unless the position is an inserted slot.
std::vector<std::uint8_t> insertion_labels(const CorruptionPlan& plan, std::size_t length);
/// Non-padding positions of a sequence.
std::vector<std::size_t> real_positions(const TokenSequence& seq);

// --- Batched losses --------------------------------------------------------
//
// Hidden states come from Model::encode on a packed batch. Position lists are
// per sequence and index into that sequence. All losses average over every
// contributing position in the batch and are exactly zero when there is none.

/// Cross-entropy of the tied LM head at the given positions.
Tensor lm_loss_at(const Model& model, const Tensor& hidden, const Packing& packing,
                  std::span<const std::vector<std::size_t>> positions,
                  std::span<const std::vector<TokenId>> targets);

/// Binary cross-entropy of one detection head at the given positions.
Tensor detection_loss_at(const Model& model, const Tensor& hidden, const Packing& packing, DetectionHead head,
                         std::span<const std::vector<std::size_t>> positions,
                         std::span<const std::vector<std::uint8_t>> labels);

Tensor loss_mlm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                std::span<const CorruptionPlan> plans, std::span<const TokenSequence> originals);
Tensor loss_slm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                std::span<const CorruptionPlan> plans, std::span<const TokenSequence> originals);
Tensor loss_rtd(const Model& model, const Tensor& d_hidden, const Packing& packing,
                std::span<const TokenSequence> x_rtd, std::span<const TokenSequence> originals);
Tensor loss_std(const Model& model, const Tensor& d_hidden, const Packing& packing,
                std::span<const TokenSequence> x_std, std::span<const TokenSequence> originals);
Tensor loss_itd(const Model& model, const Tensor& d_hidden, const Packing& packing,
                std::span<const TokenSequence> x_itd, std::span<const CorruptionPlan> plans);

MCL_END_NAMESPACE
