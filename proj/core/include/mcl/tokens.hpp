// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mcl/real.hpp"

MCL_BEGIN_NAMESPACE

using TokenId = std::int32_t;

// Reserved vocabulary entries.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kMaskId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr std::size_t kReservedTokens = 4;

/// Token ids plus an attention mask (1 = real token, 0 = padding). Padding,
/// when present, is a suffix.
struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attention_mask;

  static TokenSequence from_ids(std::vector<TokenId> ids);
  /// Pads `ids` with PAD up to `length`.
  static TokenSequence padded(std::vector<TokenId> ids, std::size_t length);

  std::size_t size() const { return ids.size(); }
  /// Number of non-padding positions.
  std::size_t real_length() const;
  bool is_real(std::size_t position) const { return attention_mask[position] != 0; }

  /// Throws InputError unless ids are within the vocabulary, the mask is
  /// the same length and padding is a suffix.
  void validate(std::size_t vocab_size) const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

MCL_END_NAMESPACE
