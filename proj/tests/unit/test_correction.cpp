// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <type_traits>

#include "fixtures.hpp"
#include "mcl/correction.hpp"
#include "mcl/courses.hpp"
#include "mcl/errors.hpp"
#include "oracles.hpp"

using namespace mcl;

namespace {

constexpr bool kDouble = std::is_same_v<Real, double>;
constexpr double kTolerance = kDouble ? 1e-12 : 1e-6;

// Tokens a, b, c, d and a distractor x.
constexpr TokenId a = 10, b = 11, c = 12, d = 13, x = 14;

TokenSequence seq(std::vector<TokenId> ids) { return TokenSequence::from_ids(std::move(ids)); }

using Positions = std::vector<std::size_t>;

}  // namespace

TEST(Confusion, PerfectJudgementFillsFirstCell) {
  const std::vector<Real> probs{0.9f, 0.9f, 0.9f};
  const auto nb = classify_confusion(seq({a, b, c}), seq({a, b, c}), probs, Positions{}, Course::kRtd);
  EXPECT_EQ(nb.pos1, (Positions{0, 1, 2}));
  EXPECT_TRUE(nb.pos2.empty() && nb.pos3.empty() && nb.pos4.empty());
}

TEST(Confusion, MissedReplacementIsSecondCell) {
  const std::vector<Real> probs{0.9f, 0.7f, 0.9f};
  const auto nb = classify_confusion(seq({a, b, c}), seq({a, x, c}), probs, Positions{1}, Course::kRtd);
  EXPECT_EQ(nb.pos2, (Positions{1}));
}

TEST(Confusion, AllFourCells) {
  const std::vector<Real> probs{0.2f, 0.3f, 0.9f, 0.6f};
  const auto nb = classify_confusion(seq({a, b, c, d}), seq({a, x, c, x}), probs, Positions{1, 3}, Course::kStd);
  EXPECT_EQ(nb.pos1, (Positions{2}));
  EXPECT_EQ(nb.pos2, (Positions{3}));
  EXPECT_EQ(nb.pos3, (Positions{0}));
  EXPECT_EQ(nb.pos4, (Positions{1}));
  EXPECT_EQ(nb.course, Course::kStd);
}

TEST(Confusion, ThresholdIsInclusive) {
  const std::vector<Real> probs{0.5f, 0.5f};
  const auto nb = classify_confusion(seq({a, b}), seq({a, x}), probs, Positions{1}, Course::kRtd);
  EXPECT_EQ(nb.pos1, (Positions{0}));
  EXPECT_EQ(nb.pos2, (Positions{1}));
}

TEST(Confusion, PaddingSkipped) {
  const auto x0 = TokenSequence::padded({a, b}, 4);
  const std::vector<Real> probs{0.9f, 0.1f, 0.1f, 0.1f};
  const auto nb = classify_confusion(x0, x0, probs, Positions{}, Course::kRtd);
  EXPECT_EQ(nb.evaluated(), 2u);
  EXPECT_EQ(nb.pos3, (Positions{1}));
}

TEST(Confusion, ContractViolations) {
  const std::vector<Real> probs{0.9f, 0.9f, 0.9f};
  EXPECT_THROW(classify_confusion(seq({a, b, c}), seq({a, b, c}), probs, Positions{}, Course::kItd), ContractError);
  EXPECT_THROW(classify_confusion(seq({a, b}), seq({a, b, c}), probs, Positions{}, Course::kRtd), ContractError);
  // A replaced label outside the corrupted set.
  EXPECT_THROW(classify_confusion(seq({a, b, c}), seq({a, x, c}), probs, Positions{2}, Course::kRtd), ContractError);
}

TEST(Confusion, RandomPartitionsTileEvaluatedPositions) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const TokenSequence x0 = fixtures::random_sequence(rng, 3 + rng.below(15), 12);
    const CorruptionPlan plan = plan_corruption(x0, {0.3, 0.0, 0.0}, rng);
    TokenSequence view = x0;
    for (std::size_t p : plan.mask_positions) view.ids[p] = static_cast<TokenId>(kReservedTokens + rng.below(8));
    std::vector<Real> probs(view.size());
    for (Real& p : probs) p = static_cast<Real>(rng.uniform());
    const auto nb = classify_confusion(x0, view, probs, plan.mask_positions, Course::kRtd);
    std::vector<std::size_t> all;
    for (const auto* cell : {&nb.pos1, &nb.pos2, &nb.pos3, &nb.pos4}) all.insert(all.end(), cell->begin(), cell->end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, real_positions(view));
    for (const auto* cell : {&nb.pos2, &nb.pos4}) {
      for (std::size_t p : *cell) {
        EXPECT_TRUE(std::binary_search(plan.mask_positions.begin(), plan.mask_positions.end(), p));
      }
    }
  }
}

TEST(Confusion, RaisingProbabilityOnlyMovesTowardOriginal) {
  Rng rng(2);
  const TokenSequence x0 = seq({a, b, c, d});
  const TokenSequence view = seq({a, x, c, x});
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Real> probs(4);
    for (Real& p : probs) p = static_cast<Real>(rng.uniform());
    const auto before = classify_confusion(x0, view, probs, Positions{1, 3}, Course::kRtd);
    const std::size_t i = rng.below(4);
    probs[i] = std::min<Real>(1, probs[i] + static_cast<Real>(rng.uniform()));
    const auto after = classify_confusion(x0, view, probs, Positions{1, 3}, Course::kRtd);
    auto in = [](const Positions& v, std::size_t p) { return std::binary_search(v.begin(), v.end(), p); };
    if (in(before.pos1, i) || in(before.pos2, i)) EXPECT_TRUE(in(after.pos1, i) || in(after.pos2, i));
    if (in(after.pos3, i) || in(after.pos4, i)) EXPECT_TRUE(in(before.pos3, i) || in(before.pos4, i));
    // The label never changes.
    EXPECT_EQ(in(before.pos1, i) || in(before.pos3, i), in(after.pos1, i) || in(after.pos3, i));
  }
}

TEST(Regeneration, MasksExactlyTheFourthCell) {
  ConfusionNotebook nb;
  nb.pos1 = {0, 2};
  nb.pos2 = {1};
  nb.pos4 = {3};
  const auto r = build_regeneration(seq({a, b, c, d}), Positions{1, 3}, nb);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(r->input.ids, (std::vector<TokenId>{a, b, c, kMaskId}));
  EXPECT_EQ(r->positions, (Positions{3}));
  EXPECT_EQ(r->targets, (std::vector<TokenId>{d}));
}

TEST(Regeneration, EmptyFourthCellGivesNothing) {
  ConfusionNotebook nb;
  nb.pos1 = {0, 1, 2};
  EXPECT_FALSE(build_regeneration(seq({a, b, c}), Positions{1}, nb).has_value());
}

TEST(Regeneration, GeneratorFailedEverywhereEqualsMaskedView) {
  const TokenSequence x0 = seq({a, b, c, d, a});
  CorruptionPlan plan;
  plan.mask_positions = {1, 3};
  ConfusionNotebook nb;
  nb.pos1 = {0, 2, 4};
  nb.pos4 = {1, 3};
  const auto r = build_regeneration(x0, plan.mask_positions, nb);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(r->input, apply_mask(x0, plan));
}

TEST(Regeneration, RejectsUncorruptedFourthCellAndInsertedViews) {
  ConfusionNotebook nb;
  nb.pos4 = {2};
  EXPECT_THROW(build_regeneration(seq({a, b, c}), Positions{1}, nb), ContractError);
  nb.course = Course::kItd;
  EXPECT_THROW(build_regeneration(seq({a, b, c}), Positions{2}, nb), ContractError);
}

TEST(Rediscrimination, DistractorRestoredAndMissedTokenReevaluated) {
  // Position 3 holds an obvious distractor (caught, pos4) and position 1 a
  // plausible replacement that was missed (pos2); position 0 was wrongly
  // flagged (pos3).
  const TokenSequence x0 = seq({a, b, c, d});
  const TokenSequence view = seq({a, x, c, x});
  const std::vector<Real> probs{0.3f, 0.8f, 0.9f, 0.1f};
  const auto nb = classify_confusion(x0, view, probs, Positions{1, 3}, Course::kRtd);
  const auto r = build_rediscrimination(x0, view, nb);
  ASSERT_TRUE(r.has_value());
  EXPECT_EQ(r->input.ids, (std::vector<TokenId>{a, x, c, d}));
  EXPECT_EQ(r->positions, (Positions{0, 1}));
  EXPECT_EQ(r->labels, (std::vector<std::uint8_t>{1, 0}));
  // The input differs from the view exactly at pos4.
  for (std::size_t i = 0; i < view.size(); ++i) {
    EXPECT_EQ(r->input.ids[i] != view.ids[i], std::binary_search(nb.pos4.begin(), nb.pos4.end(), i));
  }
}

TEST(Rediscrimination, EmptyWhenNoMistakes) {
  ConfusionNotebook nb;
  nb.pos1 = {0, 2};
  nb.pos4 = {1};
  EXPECT_FALSE(build_rediscrimination(seq({a, b, c}), seq({a, x, c}), nb).has_value());
}

TEST(Rediscrimination, RestoringCaughtTokensLeavesOnlyMissedOnes) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const TokenSequence x0 = fixtures::random_sequence(rng, 4 + rng.below(10), 12);
    const CorruptionPlan plan = plan_corruption(x0, {0.4, 0.0, 0.0}, rng);
    TokenSequence view = x0;
    for (std::size_t p : plan.mask_positions) view.ids[p] = kMaskId;
    std::vector<Real> probs(view.size());
    for (Real& p : probs) p = static_cast<Real>(rng.uniform());
    const auto nb = classify_confusion(x0, view, probs, plan.mask_positions, Course::kRtd);
    const auto r = build_rediscrimination(x0, view, nb);
    if (!r) continue;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      const bool missed = std::binary_search(nb.pos2.begin(), nb.pos2.end(), i);
      EXPECT_EQ(r->input.ids[i] != x0.ids[i], missed);
    }
    if (nb.pos2.empty()) EXPECT_EQ(r->input, x0);
  }
}

// --- Loss oracles ----------------------------------------------------------

namespace {

struct LossSetup {
  EncoderConfig cfg = fixtures::tiny_config();
  Model model = Model::initialize(cfg, 4);
  std::vector<TokenSequence> batch = {seq({kClsId, a, b, c, d}), seq({kClsId, d, c, b})};
  Packing packing = pack(batch);
  Tensor hidden;

  LossSetup() {
    Rng rng(5);
    std::vector<Real> h(packing.rows * cfg.hidden_size);
    for (Real& v : h) v = static_cast<Real>(rng.normal());
    hidden = Tensor::from_values({packing.rows, cfg.hidden_size}, h);
    Tensor bias = model.head(DetectionHead::kStd).bias;
    bias.mutable_values()[0] = Real(-0.3);
  }

  std::vector<double> row(std::size_t bi, std::size_t p) const {
    const auto v = hidden.values().subspan(packing.row(bi, p) * cfg.hidden_size, cfg.hidden_size);
    return {v.begin(), v.end()};
  }
};

}  // namespace

TEST(CorrectionLosses, RegenerationMatchesEnumeration) {
  LossSetup s;
  std::vector<RegenerationSample> samples(2);
  samples[0].positions = {2, 4};
  samples[0].targets = {b, d};
  samples[1].positions = {1};
  samples[1].targets = {d};
  std::vector<double> terms;
  const auto e = s.model.embedding().values();
  for (std::size_t bi = 0; bi < 2; ++bi) {
    for (std::size_t k = 0; k < samples[bi].positions.size(); ++k) {
      std::vector<double> logits;
      for (std::size_t t = 0; t < s.cfg.vocab_size; ++t) {
        const auto et = e.subspan(t * s.cfg.hidden_size, s.cfg.hidden_size);
        logits.push_back(oracle::dot({et.begin(), et.end()}, s.row(bi, samples[bi].positions[k])));
      }
      terms.push_back(oracle::cross_entropy(logits, static_cast<std::size_t>(samples[bi].targets[k])));
    }
  }
  EXPECT_NEAR(loss_re_mlm(s.model, s.hidden, s.packing, samples).item(), oracle::mean(terms), kTolerance);
  EXPECT_NEAR(loss_re_slm(s.model, s.hidden, s.packing, samples).item(), oracle::mean(terms), kTolerance);
}

TEST(CorrectionLosses, RediscriminationMatchesScalarOracle) {
  LossSetup s;
  std::vector<RediscriminationSample> samples(2);
  samples[0].positions = {0, 3};
  samples[0].labels = {1, 0};
  samples[1].positions = {2};
  samples[1].labels = {0};
  for (DetectionHead head : {DetectionHead::kRtd, DetectionHead::kStd}) {
    const auto w = s.model.head(head).weight.values();
    const double bias = s.model.head(head).bias.values()[0];
    std::vector<double> terms;
    for (std::size_t bi = 0; bi < 2; ++bi) {
      for (std::size_t k = 0; k < samples[bi].positions.size(); ++k) {
        const double z = oracle::dot({w.begin(), w.end()}, s.row(bi, samples[bi].positions[k])) + bias;
        terms.push_back(oracle::bce(z, samples[bi].labels[k]));
      }
    }
    const Tensor loss = head == DetectionHead::kRtd ? loss_re_rtd(s.model, s.hidden, s.packing, samples)
                                                    : loss_re_std(s.model, s.hidden, s.packing, samples);
    EXPECT_NEAR(loss.item(), oracle::mean(terms), kTolerance) << to_string(head);
  }
}

TEST(CorrectionLosses, EmptySamplesGiveZero) {
  LossSetup s;
  const std::vector<RegenerationSample> regen(2);
  const std::vector<RediscriminationSample> redisc(2);
  EXPECT_EQ(loss_re_mlm(s.model, s.hidden, s.packing, regen).item(), Real(0));
  EXPECT_EQ(loss_re_rtd(s.model, s.hidden, s.packing, redisc).item(), Real(0));
}
