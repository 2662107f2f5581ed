// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "mcl/encoder.hpp"
#include "mcl/rng.hpp"
#include "mcl/tokens.hpp"

namespace fixtures {

inline mcl::EncoderConfig tiny_config() {
  mcl::EncoderConfig c;
  c.vocab_size = 24;
  c.hidden_size = 8;
  c.generator_layers = 1;
  c.discriminator_layers = 1;
  c.attention_heads = 2;
  c.ffn_inner_size = 16;
  c.relative_buckets = 8;
  c.max_relative_position = 16;
  c.max_seq_len = 20;
  c.dropout_rate = 0;
  c.init_stddev = 0.2f;
  return c;
}

/// [CLS] followed by n random non-reserved ids.
inline mcl::TokenSequence random_sequence(mcl::Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<mcl::TokenId> ids{mcl::kClsId};
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back(static_cast<mcl::TokenId>(mcl::kReservedTokens + rng.below(vocab - mcl::kReservedTokens)));
  }
  return mcl::TokenSequence::from_ids(ids);
}

inline std::vector<mcl::TokenSequence> random_batch(std::uint64_t seed, std::size_t count, std::size_t min_len,
                                                    std::size_t max_len, std::size_t vocab) {
  mcl::Rng rng(seed);
  std::vector<mcl::TokenSequence> batch;
  for (std::size_t b = 0; b < count; ++b) {
    batch.push_back(random_sequence(rng, min_len + rng.below(max_len - min_len + 1), vocab));
  }
  return batch;
}

}  // namespace fixtures
