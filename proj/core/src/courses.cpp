// SPDX-License-Identifier: Apache-2.0
#include "mcl/courses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

void CorruptionRates::validate() const {
  auto check = [](double rate, const char* name) {
    if (!(rate >= 0.0 && rate <= 0.5)) {
      throw ConfigError(std::string("corruption rate '") + name + "' = " + std::to_string(rate) +
                        " outside [0, 0.5]");
    }
  };
  check(mask, "mask");
  check(swap, "swap");
  check(insert, "insert");
}

std::size_t corruption_count(double rate, std::size_t n_real) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n_real)));
}

CorruptionPlan plan_corruption(const TokenSequence& x, const CorruptionRates& rates, Rng& rng) {
  rates.validate();
  const std::size_t n_real = x.real_length();
  // A leading [CLS] is never corrupted and no slot is inserted before it.
  const std::size_t first = (n_real > 0 && x.ids[0] == kClsId) ? 1 : 0;
  const std::size_t n = n_real - first;
  if (n < 2) throw InputError("corruption needs at least two real tokens, got " + std::to_string(n));
  CorruptionPlan plan;
  plan.original_length = x.size();
  auto shifted = [first](std::vector<std::size_t> v) {
    for (auto& p : v) p += first;
    return v;
  };
  // Padding is a suffix, so eligible positions are [first, n_real).
  plan.mask_positions = shifted(rng.sample_without_replacement(n, corruption_count(rates.mask, n)));
  plan.swap_positions = shifted(rng.sample_without_replacement(n, corruption_count(rates.swap, n)));
  plan.swap_permutation = rng.permutation(plan.swap_positions.size());
  // One slot per chosen gap; gaps are the n + 1 boundaries around eligible tokens.
  const auto gaps = shifted(rng.sample_without_replacement(n + 1, corruption_count(rates.insert, n)));
  plan.insert_positions.reserve(gaps.size());
  for (std::size_t j = 0; j < gaps.size(); ++j) plan.insert_positions.push_back(gaps[j] + j);
  plan.extended_length = x.size() + gaps.size();
  return plan;
}

TokenSequence apply_mask(const TokenSequence& x, const CorruptionPlan& plan) {
  TokenSequence out = x;
  for (std::size_t p : plan.mask_positions) {
    if (p >= x.size()) throw IndexError("mask position outside sequence");
    out.ids[p] = kMaskId;
  }
  return out;
}

TokenSequence apply_swap(const TokenSequence& x, const CorruptionPlan& plan) {
  if (plan.swap_permutation.size() != plan.swap_positions.size()) {
    throw ContractError("swap permutation does not match the swap position set");
  }
  TokenSequence out = x;
  for (std::size_t k = 0; k < plan.swap_positions.size(); ++k) {
    const std::size_t dst = plan.swap_positions[k];
    const std::size_t src = plan.swap_positions.at(plan.swap_permutation[k]);
    if (dst >= x.size() || src >= x.size()) throw IndexError("swap position outside sequence");
    out.ids[dst] = x.ids[src];
  }
  return out;
}

TokenSequence apply_insert(const TokenSequence& x, const CorruptionPlan& plan, std::size_t max_seq_len) {
  const std::size_t extended = x.size() + plan.insert_positions.size();
  if (extended > max_seq_len) {
    throw InputError("inserting " + std::to_string(plan.insert_positions.size()) + " slots extends the sequence to " +
                     std::to_string(extended) + " > max_seq_len " + std::to_string(max_seq_len));
  }
  TokenSequence out;
  out.ids.reserve(extended);
  out.attention_mask.reserve(extended);
  std::size_t next_insert = 0, src = 0;
  for (std::size_t pos = 0; pos < extended; ++pos) {
    if (next_insert < plan.insert_positions.size() && plan.insert_positions[next_insert] == pos) {
      out.ids.push_back(kMaskId);
      out.attention_mask.push_back(1);
      ++next_insert;
    } else {
      out.ids.push_back(x.ids[src]);
      out.attention_mask.push_back(x.attention_mask[src]);
      ++src;
    }
  }
  return out;
}

TokenSequence remove_inserted(const TokenSequence& extended, const CorruptionPlan& plan) {
  TokenSequence out;
  std::size_t next_insert = 0;
  for (std::size_t pos = 0; pos < extended.size(); ++pos) {
    if (next_insert < plan.insert_positions.size() && plan.insert_positions[next_insert] == pos) {
      ++next_insert;
      continue;
    }
    out.ids.push_back(extended.ids[pos]);
    out.attention_mask.push_back(extended.attention_mask[pos]);
  }
  return out;
}

std::size_t sample_from_logits(std::span<const Real> row, Rng& rng) {
  if (row.empty()) throw ContractError("cannot sample from an empty distribution");
  const double mx = *std::max_element(row.begin(), row.end());
  double total = 0;
  for (Real z : row) total += std::exp(static_cast<double>(z) - mx);
  const double target = rng.uniform() * total;
  double cumulative = 0;
  for (std::size_t t = 0; t < row.size(); ++t) {
    cumulative += std::exp(static_cast<double>(row[t]) - mx);
    if (target < cumulative) return t;
  }
  // Rounding can leave target == total; the last token with mass wins.
  for (std::size_t t = row.size(); t-- > 0;) {
    if (std::exp(static_cast<double>(row[t]) - mx) > 0) return t;
  }
  return row.size() - 1;
}

TokenSequence splice_generator_samples(const TokenSequence& view, const Tensor& logits,
                                       std::span<const std::size_t> positions, Rng& rng) {
  if (logits.rows() != positions.size() && !positions.empty()) {
    throw DimensionError("splice: " + std::to_string(positions.size()) + " positions for logits " +
                         shape_to_string(logits.shape()));
  }
  TokenSequence out = view;
  const std::size_t vocab = positions.empty() ? 0 : logits.cols();
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= view.size()) throw IndexError("splice position outside sequence");
    auto row = logits.values().subspan(i * vocab, vocab);
    out.ids[positions[i]] = static_cast<TokenId>(sample_from_logits(row, rng));
  }
  return out;
}

std::vector<std::uint8_t> equality_labels(const TokenSequence& view, const TokenSequence& original) {
  if (view.size() != original.size()) throw ContractError("label derivation needs equal-length sequences");
  std::vector<std::uint8_t> labels(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) labels[i] = view.ids[i] == original.ids[i] ? 1 : 0;
  return labels;
}

std::vector<std::uint8_t> insertion_labels(const CorruptionPlan& plan, std::size_t length) {
  std::vector<std::uint8_t> labels(length, 1);
  for (std::size_t p : plan.insert_positions) {
    if (p >= length) throw IndexError("insert position outside sequence");
    labels[p] = 0;
  }
  return labels;
}

std::vector<std::size_t> real_positions(const TokenSequence& seq) {
  std::vector<std::size_t> out;
  out.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq.is_real(i)) out.push_back(i);
  }
  return out;
}

// --- Losses ----------------------------------------------------------------

Tensor lm_loss_at(const Model& model, const Tensor& hidden, const Packing& packing,
                  std::span<const std::vector<std::size_t>> positions,
                  std::span<const std::vector<TokenId>> targets) {
  if (positions.size() != packing.offsets.size() || targets.size() != positions.size()) {
    throw DimensionError("lm_loss_at: per-sequence inputs do not match the batch");
  }
  std::vector<std::size_t> rows;
  std::vector<TokenId> flat_targets;
  for (std::size_t b = 0; b < positions.size(); ++b) {
    if (positions[b].size() != targets[b].size()) throw DimensionError("lm_loss_at: positions/targets differ");
    for (std::size_t i = 0; i < positions[b].size(); ++i) {
      if (positions[b][i] >= packing.lengths[b]) throw IndexError("lm_loss_at: position outside sequence");
      rows.push_back(packing.row(b, positions[b][i]));
      flat_targets.push_back(targets[b][i]);
    }
  }
  if (rows.empty()) return Tensor::scalar(Real{0});
  return softmax_cross_entropy(model.lm_logits(hidden, rows), flat_targets);
}

Tensor detection_loss_at(const Model& model, const Tensor& hidden, const Packing& packing, DetectionHead head,
                         std::span<const std::vector<std::size_t>> positions,
                         std::span<const std::vector<std::uint8_t>> labels) {
  if (positions.size() != packing.offsets.size() || labels.size() != positions.size()) {
    throw DimensionError("detection_loss_at: per-sequence inputs do not match the batch");
  }
  std::vector<std::size_t> rows;
  std::vector<std::uint8_t> flat_labels;
  for (std::size_t b = 0; b < positions.size(); ++b) {
    if (positions[b].size() != labels[b].size()) throw DimensionError("detection_loss_at: positions/labels differ");
    for (std::size_t i = 0; i < positions[b].size(); ++i) {
      if (positions[b][i] >= packing.lengths[b]) throw IndexError("detection_loss_at: position outside sequence");
      rows.push_back(packing.row(b, positions[b][i]));
      flat_labels.push_back(labels[b][i]);
    }
  }
  if (rows.empty()) return Tensor::scalar(Real{0});
  Tensor logits = model.detection_logits(gather_rows(hidden, rows), head);
  std::vector<std::size_t> all(rows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return sigmoid_bce(logits, flat_labels, all);
}

namespace {

Tensor lm_course_loss(const Model& model, const Tensor& g_hidden, const Packing& packing,
                      std::span<const CorruptionPlan> plans, std::span<const TokenSequence> originals,
                      std::vector<std::size_t> CorruptionPlan::*member) {
  if (plans.size() != originals.size()) throw DimensionError("plans and originals differ in count");
  std::vector<std::vector<std::size_t>> positions(plans.size());
  std::vector<std::vector<TokenId>> targets(plans.size());
  for (std::size_t b = 0; b < plans.size(); ++b) {
    positions[b] = plans[b].*member;
    for (std::size_t p : positions[b]) targets[b].push_back(originals[b].ids.at(p));
  }
  return lm_loss_at(model, g_hidden, packing, positions, targets);
}

Tensor equality_detection_loss(const Model& model, const Tensor& d_hidden, const Packing& packing,
                               DetectionHead head, std::span<const TokenSequence> views,
                               std::span<const TokenSequence> originals) {
  if (views.size() != originals.size()) throw DimensionError("views and originals differ in count");
  std::vector<std::vector<std::size_t>> positions(views.size());
  std::vector<std::vector<std::uint8_t>> labels(views.size());
  for (std::size_t b = 0; b < views.size(); ++b) {
    const auto all_labels = equality_labels(views[b], originals[b]);
    positions[b] = real_positions(views[b]);
    for (std::size_t p : positions[b]) labels[b].push_back(all_labels[p]);
  }
  return detection_loss_at(model, d_hidden, packing, head, positions, labels);
}

}  // namespace

Tensor loss_mlm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                std::span<const CorruptionPlan> plans, std::span<const TokenSequence> originals) {
  return lm_course_loss(model, g_hidden, packing, plans, originals, &CorruptionPlan::mask_positions);
}

Tensor loss_slm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                std::span<const CorruptionPlan> plans, std::span<const TokenSequence> originals) {
  return lm_course_loss(model, g_hidden, packing, plans, originals, &CorruptionPlan::swap_positions);
}

Tensor loss_rtd(const Model& model, const Tensor& d_hidden, const Packing& packing,
                std::span<const TokenSequence> x_rtd, std::span<const TokenSequence> originals) {
  return equality_detection_loss(model, d_hidden, packing, DetectionHead::kRtd, x_rtd, originals);
}

Tensor loss_std(const Model& model, const Tensor& d_hidden, const Packing& packing,
                std::span<const TokenSequence> x_std, std::span<const TokenSequence> originals) {
  return equality_detection_loss(model, d_hidden, packing, DetectionHead::kStd, x_std, originals);
}

Tensor loss_itd(const Model& model, const Tensor& d_hidden, const Packing& packing,
                std::span<const TokenSequence> x_itd, std::span<const CorruptionPlan> plans) {
  if (x_itd.size() != plans.size()) throw DimensionError("views and plans differ in count");
  std::vector<std::vector<std::size_t>> positions(x_itd.size());
  std::vector<std::vector<std::uint8_t>> labels(x_itd.size());
  for (std::size_t b = 0; b < x_itd.size(); ++b) {
    const auto all_labels = insertion_labels(plans[b], x_itd[b].size());
    positions[b] = real_positions(x_itd[b]);
    for (std::size_t p : positions[b]) labels[b].push_back(all_labels[p]);
  }
  return detection_loss_at(model, d_hidden, packing, DetectionHead::kItd, positions, labels);
}

MCL_END_NAMESPACE
