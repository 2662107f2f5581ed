// SPDX-License-Identifier: Apache-2.0
#pragma once

// Self-correction courses. The discriminator's detached decisions on a
// course view are sorted into a confusion notebook:
//
//                      label original   label replaced
//   predict original        pos1             pos2
//   predict replaced        pos3             pos4
//
// pos4 drives re-generation (the generator retries those slots with every
// other corruption undone); pos2 and pos3 drive re-discrimination on the view
// with pos4 restored to the original tokens.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mcl/encoder.hpp"
#include "mcl/real.hpp"
#include "mcl/tensor.hpp"
#include "mcl/tokens.hpp"

MCL_BEGIN_NAMESPACE

enum class Course { kRtd, kStd, kItd };

const char* to_string(Course course);

/// Probability-of-original at or above this is a prediction of "original".
inline constexpr Real kDecisionThreshold = Real(0.5);

struct ConfusionNotebook {
  Course course = Course::kRtd;
  std::vector<std::size_t> pos1, pos2, pos3, pos4;  // each sorted

  std::array<std::size_t, 4> counts() const { return {pos1.size(), pos2.size(), pos3.size(), pos4.size()}; }
  std::size_t evaluated() const { return pos1.size() + pos2.size() + pos3.size() + pos4.size(); }

  friend bool operator==(const ConfusionNotebook&, const ConfusionNotebook&) = default;
};

/// Sorts every non-padding position of `view` into a confusion cell.
/// `original_probs[i]` is the detached sigmoid output for position i.
/// Throws ContractError for ITD views, for length mismatches and when a
/// replaced label falls outside `corrupted`.
ConfusionNotebook classify_confusion(const TokenSequence& x, const TokenSequence& view,
                                     std::span<const Real> original_probs, std::span<const std::size_t> corrupted,
                                     Course course);

struct RegenerationSample {
  TokenSequence input;                // x with [MASK] exactly at pos4
  std::vector<std::size_t> positions;  // pos4
  std::vector<TokenId> targets;        // x at pos4
};

struct RediscriminationSample {
  TokenSequence input;                  // view with pos4 restored to x
  std::vector<std::size_t> positions;   // pos2 and pos3, sorted
  std::vector<std::uint8_t> labels;     // 1 (original) at pos3, 0 at pos2
};

/// Empty when pos4 is empty. `plan_positions` is the course's corruption set
/// (mask positions for RTD, swap positions for STD) and must contain pos4.
std::optional<RegenerationSample> build_regeneration(const TokenSequence& x,
                                                     std::span<const std::size_t> plan_positions,
                                                     const ConfusionNotebook& notebook);

/// Empty when pos2 and pos3 are both empty.
std::optional<RediscriminationSample> build_rediscrimination(const TokenSequence& x, const TokenSequence& view,
                                                             const ConfusionNotebook& notebook);

/// Generator cross-entropy at pos4 of each regeneration input.
Tensor loss_re_mlm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                   std::span<const RegenerationSample> samples);
Tensor loss_re_slm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                   std::span<const RegenerationSample> samples);
/// Discriminator BCE at pos2 and pos3, with the RTD (resp. STD) head.
Tensor loss_re_rtd(const Model& model, const Tensor& d_hidden, const Packing& packing,
                   std::span<const RediscriminationSample> samples);
Tensor loss_re_std(const Model& model, const Tensor& d_hidden, const Packing& packing,
                   std::span<const RediscriminationSample> samples);

MCL_END_NAMESPACE
