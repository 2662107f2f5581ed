// SPDX-License-Identifier: Apache-2.0
#include "mcl/tokens.hpp"

#include <algorithm>
#include <string>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

TokenSequence TokenSequence::from_ids(std::vector<TokenId> ids) {
  TokenSequence seq;
  seq.attention_mask.assign(ids.size(), 1);
  seq.ids = std::move(ids);
  return seq;
}

TokenSequence TokenSequence::padded(std::vector<TokenId> ids, std::size_t length) {
  if (ids.size() > length) throw InputError("sequence of length " + std::to_string(ids.size()) + " exceeds padding target");
  TokenSequence seq;
  seq.attention_mask.assign(length, 0);
  std::fill(seq.attention_mask.begin(), seq.attention_mask.begin() + static_cast<std::ptrdiff_t>(ids.size()), 1);
  seq.ids = std::move(ids);
  seq.ids.resize(length, kPadId);
  return seq;
}

std::size_t TokenSequence::real_length() const {
  std::size_t n = 0;
  for (auto m : attention_mask) n += m ? 1 : 0;
  return n;
}

void TokenSequence::validate(std::size_t vocab_size) const {
  if (attention_mask.size() != ids.size()) throw InputError("attention mask length differs from sequence length");
  bool seen_padding = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab_size) {
      throw InputError("token id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                       " outside vocabulary of size " + std::to_string(vocab_size));
    }
    if (!attention_mask[i]) {
      seen_padding = true;
    } else if (seen_padding) {
      throw InputError("real token after padding at position " + std::to_string(i));
    }
  }
}

MCL_END_NAMESPACE
