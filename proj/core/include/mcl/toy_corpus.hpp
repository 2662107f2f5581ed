// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded template grammar for a small English-like corpus, and the labeled
// probe datasets built from it.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mcl/real.hpp"

MCL_BEGIN_NAMESPACE

/// Token the presence probe asks about.
inline constexpr const char* kProbeToken = "lantern";

std::string generate_toy_sentence(std::uint64_t seed, std::uint64_t index);
std::vector<std::string> generate_toy_corpus(std::size_t sentences, std::uint64_t seed);

struct LabeledSentence {
  std::string text;
  int label = 0;

  friend bool operator==(const LabeledSentence&, const LabeledSentence&) = default;
};

/// Balanced dataset; label 1 iff the sentence contains `token`.
std::vector<LabeledSentence> make_presence_dataset(std::size_t n, std::uint64_t seed,
                                                   const std::string& token = kProbeToken);
/// Labels drawn independently of the text, balanced.
std::vector<LabeledSentence> make_random_label_dataset(std::size_t n, std::uint64_t seed);

/// "label<TAB>sentence" per line.
void save_labeled(const std::string& path, const std::vector<LabeledSentence>& data);
std::vector<LabeledSentence> load_labeled(const std::string& path);

MCL_END_NAMESPACE
