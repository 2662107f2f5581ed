// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mcl/encoder.hpp"
#include "mcl/errors.hpp"

using namespace mcl;

namespace {

std::vector<Real> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

TokenSequence ids_of_length(std::size_t n) {
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(kReservedTokens + i % 7));
  return TokenSequence::from_ids(ids);
}

}  // namespace

TEST(Encoder, SameSeedSameParametersAndOutputs) {
  const auto cfg = fixtures::tiny_config();
  const Model a = Model::initialize(cfg, 3);
  const Model b = Model::initialize(cfg, 3);
  const Model c = Model::initialize(cfg, 4);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(values_of(pa[i].second), values_of(pb[i].second));
  }
  const TokenSequence x = ids_of_length(9);
  EXPECT_EQ(values_of(a.encode_discriminator(x)), values_of(b.encode_discriminator(x)));
  EXPECT_NE(values_of(a.encode_discriminator(x)), values_of(c.encode_discriminator(x)));
}

TEST(Encoder, OutputShapes) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 1);
  for (std::size_t n : {std::size_t{1}, std::size_t{7}, cfg.max_seq_len}) {
    const TokenSequence x = ids_of_length(n);
    EXPECT_EQ(m.encode_generator(x).shape(), (Shape{n, cfg.hidden_size}));
    EXPECT_EQ(m.encode_discriminator(x).shape(), (Shape{n, cfg.hidden_size}));
  }
}

TEST(Encoder, OverlengthInputRejected) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 1);
  EXPECT_THROW(m.encode_generator(ids_of_length(cfg.max_seq_len + 1)), InputError);
}

TEST(Encoder, BatchedEncodingMatchesSingle) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 2);
  const auto batch = fixtures::random_batch(5, 3, 2, 10, cfg.vocab_size);
  const Encoded enc = m.encode(Stack::kDiscriminator, batch, ForwardContext::inference());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Tensor single = m.encode_discriminator(batch[b]);
    for (std::size_t p = 0; p < batch[b].size(); ++p) {
      for (std::size_t h = 0; h < cfg.hidden_size; ++h) {
        EXPECT_NEAR(enc.hidden.values()[enc.packing.row(b, p) * cfg.hidden_size + h],
                    single.values()[p * cfg.hidden_size + h], 1e-5);
      }
    }
  }
}

TEST(RelativeBuckets, SmallOffsetsExactAndLargeSaturate) {
  const std::size_t buckets = 32, max_distance = 128;
  // Within each half the first half of the buckets are exact offsets.
  EXPECT_EQ(relative_position_bucket(0, buckets, max_distance), 0u);
  for (int d = 1; d < 8; ++d) {
    EXPECT_EQ(relative_position_bucket(d, buckets, max_distance), static_cast<std::size_t>(d) + 16);
    EXPECT_EQ(relative_position_bucket(-d, buckets, max_distance), static_cast<std::size_t>(d));
  }
  const std::size_t last_pos = relative_position_bucket(1000, buckets, max_distance);
  const std::size_t last_neg = relative_position_bucket(-1000, buckets, max_distance);
  EXPECT_EQ(last_pos, 31u);
  EXPECT_EQ(last_neg, 15u);
  EXPECT_EQ(relative_position_bucket(129, buckets, max_distance), last_pos);
  EXPECT_EQ(relative_position_bucket(-129, buckets, max_distance), last_neg);
  std::size_t previous = 16;
  for (int d = 1; d < 300; ++d) {
    const std::size_t b = relative_position_bucket(d, buckets, max_distance);
    EXPECT_GE(b, previous);
    EXPECT_LT(b, buckets);
    previous = b;
  }
}

TEST(RelativeBias, DependsOnlyOnOffset) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 6);
  const std::size_t n = 12;
  for (Stack s : {Stack::kGenerator, Stack::kDiscriminator}) {
    for (std::size_t head = 0; head < cfg.attention_heads; ++head) {
      const auto bias = m.attention_bias_matrix(s, n, head);
      ASSERT_EQ(bias.size(), n * n);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t j = 0; j + 1 < n; ++j) EXPECT_EQ(bias[i * n + j], bias[(i + 1) * n + j + 1]);
      }
      const auto table = m.stack(s).relative_bias.values();
      const std::size_t bucket = relative_position_bucket(3, cfg.relative_buckets, cfg.max_relative_position);
      EXPECT_EQ(bias[0 * n + 3], table[bucket * cfg.attention_heads + head]);
    }
  }
}

TEST(LmHead, DotProductOracle) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 8);
  Rng rng(9);
  std::vector<Real> h(5 * cfg.hidden_size);
  for (Real& v : h) v = static_cast<Real>(rng.normal());
  Tensor lm_bias = m.lm_bias();
  for (std::size_t t = 0; t < cfg.vocab_size; ++t) lm_bias.mutable_values()[t] = static_cast<Real>(0.01 * t);
  const Tensor hidden = Tensor::from_values({5, cfg.hidden_size}, h);
  const std::vector<std::size_t> rows{4, 0, 2};
  const Tensor logits = m.lm_logits(hidden, rows);
  ASSERT_EQ(logits.shape(), (Shape{3, cfg.vocab_size}));
  const auto e = m.embedding().values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
      double expected = 0.01 * t;
      for (std::size_t k = 0; k < cfg.hidden_size; ++k) {
        expected += double(e[t * cfg.hidden_size + k]) * h[rows[i] * cfg.hidden_size + k];
      }
      EXPECT_NEAR(logits.values()[i * cfg.vocab_size + t], expected, 1e-5);
    }
  }
  const Tensor probs = softmax_rows(logits);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double total = 0;
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) total += probs.values()[i * cfg.vocab_size + t];
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(LmHead, TiedToEmbedding) {
  const auto cfg = fixtures::tiny_config();
  // Gradient of the LM loss reaches the shared embedding table.
  Model model = Model::initialize(cfg, 8);
  const Tensor hidden = Tensor::from_values({1, cfg.hidden_size}, std::vector<Real>(cfg.hidden_size, Real(1)));
  const std::vector<std::size_t> rows{0};
  const std::vector<std::int32_t> target{5};
  backward(softmax_cross_entropy(model.lm_logits(hidden, rows), target));
  ASSERT_TRUE(model.embedding().has_grad());
  double norm = 0;
  for (Real g : model.embedding().grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
  for (const auto& [name, t] : model.named_parameters()) {
    if (name != "embedding") EXPECT_NE(t.shape(), model.embedding().shape()) << name;
  }
}

TEST(DetectionHeads, LogitOracle) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 10);
  Rng rng(11);
  std::vector<Real> h(4 * cfg.hidden_size);
  for (Real& v : h) v = static_cast<Real>(rng.normal());
  const Tensor hidden = Tensor::from_values({4, cfg.hidden_size}, h);
  for (DetectionHead head : {DetectionHead::kRtd, DetectionHead::kStd, DetectionHead::kItd}) {
    Tensor bias = m.head(head).bias;
    bias.mutable_values()[0] = Real(0.25);
    const auto w = m.head(head).weight.values();
    const Tensor z = m.detection_logits(hidden, head);
    ASSERT_EQ(z.numel(), 4u);
    for (std::size_t r = 0; r < 4; ++r) {
      double expected = 0.25;
      for (std::size_t k = 0; k < cfg.hidden_size; ++k) expected += double(w[k]) * h[r * cfg.hidden_size + k];
      EXPECT_NEAR(z.values()[r], expected, 1e-6);
    }
  }
}

TEST(DetectionHeads, ZeroHeadGivesHalf) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 12);
  Tensor w = m.head(DetectionHead::kRtd).weight;
  for (Real& v : w.mutable_values()) v = 0;
  const Tensor z = m.detection_logits(m.encode_discriminator(ids_of_length(6)), DetectionHead::kRtd);
  for (Real v : z.values()) EXPECT_EQ(sigmoid(v), Real(0.5));
}

TEST(DetectionHeads, IndependentParameters) {
  const auto cfg = fixtures::tiny_config();
  const Model m = Model::initialize(cfg, 13);
  const Tensor hidden = m.encode_discriminator(ids_of_length(6));
  const auto before_std = values_of(m.detection_logits(hidden, DetectionHead::kStd));
  const auto before_itd = values_of(m.detection_logits(hidden, DetectionHead::kItd));
  Tensor w = m.head(DetectionHead::kRtd).weight;
  for (Real& v : w.mutable_values()) v += Real(1);
  EXPECT_EQ(values_of(m.detection_logits(hidden, DetectionHead::kStd)), before_std);
  EXPECT_EQ(values_of(m.detection_logits(hidden, DetectionHead::kItd)), before_itd);
  EXPECT_NE(m.head(DetectionHead::kRtd).weight.node(), m.head(DetectionHead::kStd).weight.node());
}

TEST(EncoderConfig, CanonicalRoundTrip) {
  const auto cfg = fixtures::tiny_config();
  const auto back = EncoderConfig::from_canonical(cfg.canonical());
  EXPECT_EQ(back.canonical(), cfg.canonical());
  EXPECT_EQ(back.digest(), cfg.digest());
  auto other = cfg;
  other.hidden_size = 16;
  EXPECT_NE(other.digest(), cfg.digest());
}

TEST(EncoderConfig, RejectsIndivisibleHeads) {
  auto cfg = fixtures::tiny_config();
  cfg.attention_heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
