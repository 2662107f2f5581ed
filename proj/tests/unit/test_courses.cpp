// SPDX-License-Identifier: Apache-2.0
// Built against both the float and the double core; oracle tolerances
// tighten on the double build.
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "fixtures.hpp"
#include "mcl/courses.hpp"
#include "mcl/errors.hpp"
#include "oracles.hpp"

using namespace mcl;

namespace {

constexpr bool kDouble = std::is_same_v<Real, double>;
constexpr double kLmTolerance = kDouble ? 1e-10 : 1e-6;
constexpr double kBceTolerance = kDouble ? 1e-12 : 1e-6;

TokenSequence plain(std::vector<TokenId> ids) { return TokenSequence::from_ids(std::move(ids)); }

TokenSequence counting(std::size_t n, bool cls) {
  std::vector<TokenId> ids;
  if (cls) ids.push_back(kClsId);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(static_cast<TokenId>(10 + i));
  return plain(ids);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

std::vector<double> as_double(std::span<const Real> v) { return {v.begin(), v.end()}; }

}  // namespace

TEST(CorruptionCount, RoundsHalfAwayFromZero) {
  EXPECT_EQ(corruption_count(0.15, 20), 3u);
  EXPECT_EQ(corruption_count(0.15, 10), 2u);  // 1.5
  EXPECT_EQ(corruption_count(0.15, 3), 0u);   // 0.45
  EXPECT_EQ(corruption_count(0.0, 100), 0u);
}

TEST(PlanCorruption, CountsForTwentyTokens) {
  Rng rng(1);
  const TokenSequence x = counting(20, false);
  const CorruptionPlan plan = plan_corruption(x, {}, rng);
  EXPECT_EQ(plan.mask_positions.size(), 3u);
  EXPECT_EQ(plan.swap_positions.size(), 3u);
  EXPECT_EQ(plan.insert_positions.size(), 3u);
  EXPECT_EQ(plan.extended_length, 23u);
  EXPECT_TRUE(std::is_sorted(plan.mask_positions.begin(), plan.mask_positions.end()));
  EXPECT_TRUE(std::is_sorted(plan.swap_positions.begin(), plan.swap_positions.end()));
}

TEST(PlanCorruption, ZeroRatesLeaveSequenceUnchanged) {
  Rng rng(2);
  const TokenSequence x = counting(12, true);
  const CorruptionPlan plan = plan_corruption(x, {0.0, 0.0, 0.0}, rng);
  EXPECT_EQ(apply_mask(x, plan), x);
  EXPECT_EQ(apply_swap(x, plan), x);
  EXPECT_EQ(apply_insert(x, plan, 64), x);
}

TEST(PlanCorruption, LeadingClsNeverTouched) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const TokenSequence x = counting(6, true);
    const CorruptionPlan plan = plan_corruption(x, {0.5, 0.5, 0.5}, rng);
    EXPECT_EQ(apply_mask(x, plan).ids[0], kClsId);
    EXPECT_EQ(apply_swap(x, plan).ids[0], kClsId);
    EXPECT_EQ(apply_insert(x, plan, 64).ids[0], kClsId);
  }
}

TEST(PlanCorruption, PaddingNeverCorrupted) {
  const TokenSequence x = TokenSequence::padded({kClsId, 10, 11, 12, 13, 14}, 10);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const CorruptionPlan plan = plan_corruption(x, {0.5, 0.5, 0.5}, rng);
    for (std::size_t p : plan.mask_positions) EXPECT_LT(p, 6u);
    for (std::size_t p : plan.swap_positions) EXPECT_LT(p, 6u);
  }
}

TEST(PlanCorruption, TooShortRejected) {
  Rng rng(3);
  EXPECT_THROW(plan_corruption(plain({kClsId, 10}), {}, rng), InputError);
  EXPECT_THROW(plan_corruption(counting(4, false), {0.6, 0.1, 0.1}, rng), ConfigError);
}

TEST(PlanCorruption, MatchesGoldenFile) {
  std::ostringstream out;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const CorruptionPlan plan = plan_corruption(counting(9 + 3 * seed, seed % 2 == 0), {}, rng);
    out << "seed " << seed << "\n";
    out << "mask " << join(plan.mask_positions) << "\n";
    out << "swap " << join(plan.swap_positions) << "\n";
    out << "perm " << join(plan.swap_permutation) << "\n";
    out << "insert " << join(plan.insert_positions) << "\n";
  }
  const std::string path = std::string(MCL_TEST_DATA_DIR) + "/golden/corruption_plans.txt";
  if (std::getenv("MCL_UPDATE_GOLDEN")) {
    std::ofstream(path) << out.str();
  }
  std::ifstream in(path);
  ASSERT_TRUE(in) << "missing " << path << " (set MCL_UPDATE_GOLDEN=1 to create it)";
  std::stringstream expected;
  expected << in.rdbuf();
  EXPECT_EQ(out.str(), expected.str());
}

TEST(ApplyCorruption, MaskExample) {
  const TokenSequence x = plain({kClsId, 10, 11, 12, 13});
  CorruptionPlan plan;
  plan.mask_positions = {1, 3};
  EXPECT_EQ(apply_mask(x, plan).ids, (std::vector<TokenId>{kClsId, kMaskId, 11, kMaskId, 13}));
}

TEST(ApplyCorruption, SwapExample) {
  const TokenSequence x = plain({kClsId, 10, 11, 12, 13});
  CorruptionPlan plan;
  plan.swap_positions = {1, 2, 4};
  plan.swap_permutation = {2, 0, 1};
  // position 1 <- 4, position 2 <- 1, position 4 <- 2
  EXPECT_EQ(apply_swap(x, plan).ids, (std::vector<TokenId>{kClsId, 13, 10, 12, 11}));
}

TEST(ApplyCorruption, InsertExampleAndInverse) {
  const TokenSequence x = plain({kClsId, 10, 11, 12});
  CorruptionPlan plan;
  plan.insert_positions = {1, 4};  // positions in the extended sequence
  const TokenSequence ext = apply_insert(x, plan, 16);
  EXPECT_EQ(ext.ids, (std::vector<TokenId>{kClsId, kMaskId, 10, 11, kMaskId, 12}));
  EXPECT_EQ(remove_inserted(ext, plan), x);
  EXPECT_THROW(apply_insert(x, plan, 5), InputError);
}

TEST(ApplyCorruption, SwapPreservesMultisetAndInsertInverts) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    Rng rng(seed);
    const TokenSequence x = fixtures::random_sequence(rng, 4 + rng.below(20), 40);
    const CorruptionPlan plan = plan_corruption(x, {0.15, 0.5, 0.3}, rng);
    const TokenSequence swapped = apply_swap(x, plan);
    auto a = x.ids, b = swapped.ids;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::binary_search(plan.swap_positions.begin(), plan.swap_positions.end(), i)) {
        EXPECT_EQ(swapped.ids[i], x.ids[i]);
      }
    }
    const TokenSequence ext = apply_insert(x, plan, 128);
    EXPECT_EQ(ext.size(), plan.extended_length);
    EXPECT_EQ(remove_inserted(ext, plan), x);
    for (std::size_t p : plan.insert_positions) EXPECT_EQ(ext.ids[p], kMaskId);
  }
}

TEST(Sampling, FrequenciesMatchSoftmax) {
  const std::vector<double> probs{0.1, 0.2, 0.3, 0.4};
  std::vector<Real> logits;
  for (double p : probs) logits.push_back(static_cast<Real>(std::log(p)));
  Rng rng(4);
  std::vector<std::size_t> counts(4, 0);
  const std::size_t draws = 100000;
  for (std::size_t i = 0; i < draws; ++i) ++counts[sample_from_logits(logits, rng)];
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(double(counts[t]) / draws, probs[t], 0.01);
}

TEST(Sampling, OneHotAlwaysPicksTheMode) {
  const std::vector<Real> logits{-1e4f, -1e4f, 0, -1e4f};
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_from_logits(logits, rng), 2u);
}

TEST(Sampling, SpliceReplacesOnlyGivenPositions) {
  const TokenSequence view = plain({kClsId, kMaskId, 11, kMaskId});
  std::vector<Real> logits(2 * 6, Real(-1e4));
  logits[0 * 6 + 5] = 0;
  logits[1 * 6 + 4] = 0;
  Rng rng(6);
  const std::vector<std::size_t> positions{1, 3};
  const TokenSequence out = splice_generator_samples(view, Tensor::from_values({2, 6}, logits), positions, rng);
  EXPECT_EQ(out.ids, (std::vector<TokenId>{kClsId, 5, 11, 4}));
}

TEST(Labels, EqualityAndInsertion) {
  EXPECT_EQ(equality_labels(plain({2, 5, 6, 7}), plain({2, 5, 9, 7})), (std::vector<std::uint8_t>{1, 1, 0, 1}));
  CorruptionPlan plan;
  plan.insert_positions = {0, 3};
  EXPECT_EQ(insertion_labels(plan, 5), (std::vector<std::uint8_t>{0, 1, 1, 0, 1}));
}

TEST(Labels, InsertionFractionForTwentyTokens) {
  Rng rng(7);
  const TokenSequence x = counting(20, false);
  const CorruptionPlan plan = plan_corruption(x, {}, rng);
  const auto labels = insertion_labels(plan, plan.extended_length);
  const auto inserted = std::count(labels.begin(), labels.end(), 0);
  EXPECT_EQ(inserted, 3);
  EXPECT_EQ(labels.size(), 23u);
  EXPECT_DOUBLE_EQ(double(inserted) / double(labels.size()), 3.0 / 23.0);
}

// --- Loss oracles on small random hidden states -----------------------------

namespace {

struct LossFixture {
  EncoderConfig cfg;
  Model model;
  std::vector<TokenSequence> batch;
  Packing packing;
  Tensor hidden;

  static LossFixture make(std::uint64_t seed) {
    EncoderConfig cfg = fixtures::tiny_config();
    cfg.vocab_size = 10;
    cfg.max_seq_len = 8;
    Model model = Model::initialize(cfg, seed);
    // Nonzero LM bias and head biases so they enter the oracle.
    Tensor bias = model.lm_bias();
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) bias.mutable_values()[t] = Real(0.1) * Real(t % 3);
    auto batch = fixtures::random_batch(seed, 3, 4, 7, cfg.vocab_size);
    Packing packing = pack(batch);
    Rng rng(seed + 100);
    std::vector<Real> h(packing.rows * cfg.hidden_size);
    for (Real& v : h) v = static_cast<Real>(rng.normal());
    return {cfg, std::move(model), batch, packing, Tensor::from_values({packing.rows, cfg.hidden_size}, h)};
  }

  std::vector<double> hidden_row(std::size_t b, std::size_t p) const {
    const auto all = hidden.values();
    const std::size_t r = packing.row(b, p);
    return as_double(all.subspan(r * cfg.hidden_size, cfg.hidden_size));
  }

  std::vector<double> lm_row(std::size_t b, std::size_t p) const {
    const auto h = hidden_row(b, p);
    const auto e = model.embedding().values();
    std::vector<double> row;
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
      row.push_back(oracle::dot(as_double(e.subspan(t * cfg.hidden_size, cfg.hidden_size)), h) +
                    model.lm_bias().values()[t]);
    }
    return row;
  }

  double head_logit(DetectionHead head, std::size_t b, std::size_t p) const {
    return oracle::dot(as_double(model.head(head).weight.values()), hidden_row(b, p)) +
           model.head(head).bias.values()[0];
  }
};

}  // namespace

TEST(LossOracles, MaskedAndSwappedLanguageModeling) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    LossFixture f = LossFixture::make(seed);
    Rng rng(seed);
    std::vector<CorruptionPlan> plans;
    for (const auto& x : f.batch) plans.push_back(plan_corruption(x, {0.3, 0.3, 0.0}, rng));
    for (auto member : {&CorruptionPlan::mask_positions, &CorruptionPlan::swap_positions}) {
      std::vector<double> terms;
      for (std::size_t b = 0; b < plans.size(); ++b) {
        for (std::size_t p : plans[b].*member) {
          terms.push_back(oracle::cross_entropy(f.lm_row(b, p), static_cast<std::size_t>(f.batch[b].ids[p])));
        }
      }
      const Tensor loss = member == &CorruptionPlan::mask_positions
                              ? loss_mlm(f.model, f.hidden, f.packing, plans, f.batch)
                              : loss_slm(f.model, f.hidden, f.packing, plans, f.batch);
      EXPECT_NEAR(loss.item(), oracle::mean(terms), kLmTolerance);
    }
  }
}

TEST(LossOracles, ReplacedAndSwappedTokenDetection) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    LossFixture f = LossFixture::make(seed);
    Rng rng(seed);
    std::vector<TokenSequence> views;
    for (const auto& x : f.batch) {
      TokenSequence v = x;
      v.ids[1 + rng.below(x.size() - 1)] = static_cast<TokenId>(kReservedTokens + rng.below(6));
      views.push_back(v);
    }
    for (DetectionHead head : {DetectionHead::kRtd, DetectionHead::kStd}) {
      std::vector<double> terms;
      for (std::size_t b = 0; b < views.size(); ++b) {
        for (std::size_t p = 0; p < views[b].size(); ++p) {
          terms.push_back(oracle::bce(f.head_logit(head, b, p), views[b].ids[p] == f.batch[b].ids[p] ? 1 : 0));
        }
      }
      const Tensor loss = head == DetectionHead::kRtd ? loss_rtd(f.model, f.hidden, f.packing, views, f.batch)
                                                      : loss_std(f.model, f.hidden, f.packing, views, f.batch);
      EXPECT_NEAR(loss.item(), oracle::mean(terms), kBceTolerance);
    }
  }
}

TEST(LossOracles, InsertedTokenDetection) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    LossFixture f = LossFixture::make(seed);
    // Treat the fixture sequences as already-extended views.
    std::vector<CorruptionPlan> plans(f.batch.size());
    for (std::size_t b = 0; b < f.batch.size(); ++b) plans[b].insert_positions = {1, f.batch[b].size() - 1};
    std::vector<double> terms;
    for (std::size_t b = 0; b < f.batch.size(); ++b) {
      const auto labels = insertion_labels(plans[b], f.batch[b].size());
      for (std::size_t p = 0; p < f.batch[b].size(); ++p) {
        terms.push_back(oracle::bce(f.head_logit(DetectionHead::kItd, b, p), labels[p]));
      }
    }
    EXPECT_NEAR(loss_itd(f.model, f.hidden, f.packing, f.batch, plans).item(), oracle::mean(terms), kBceTolerance);
  }
}

TEST(LossOracles, EmptyPositionSetsGiveZero) {
  LossFixture f = LossFixture::make(1);
  std::vector<CorruptionPlan> plans(f.batch.size());
  EXPECT_EQ(loss_mlm(f.model, f.hidden, f.packing, plans, f.batch).item(), Real(0));
  EXPECT_EQ(loss_slm(f.model, f.hidden, f.packing, plans, f.batch).item(), Real(0));
}
