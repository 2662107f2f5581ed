// SPDX-License-Identifier: Apache-2.0
#include "mcl/correction.hpp"

#include <algorithm>
#include <string>

#include "mcl/courses.hpp"
#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

const char* to_string(Course course) {
  switch (course) {
    case Course::kRtd:
      return "rtd";
    case Course::kStd:
      return "std";
    case Course::kItd:
      return "itd";
  }
  return "?";
}

ConfusionNotebook classify_confusion(const TokenSequence& x, const TokenSequence& view,
                                     std::span<const Real> original_probs, std::span<const std::size_t> corrupted,
                                     Course course) {
  if (course == Course::kItd) {
    throw ContractError("inserted-token views have no original token to correct against");
  }
  if (x.size() != view.size() || original_probs.size() != view.size()) {
    throw ContractError("classify_confusion: original length " + std::to_string(x.size()) + ", view length " +
                        std::to_string(view.size()) + ", " + std::to_string(original_probs.size()) + " probabilities");
  }
  ConfusionNotebook nb;
  nb.course = course;
  for (std::size_t i = 0; i < view.size(); ++i) {
    if (!view.is_real(i)) continue;
    const bool label_original = view.ids[i] == x.ids[i];
    const bool predict_original = original_probs[i] >= kDecisionThreshold;
    if (!label_original && !std::binary_search(corrupted.begin(), corrupted.end(), i)) {
      throw ContractError("replaced token at position " + std::to_string(i) + " outside the corrupted set");
    }
    if (predict_original) {
      (label_original ? nb.pos1 : nb.pos2).push_back(i);
    } else {
      (label_original ? nb.pos3 : nb.pos4).push_back(i);
    }
  }
  return nb;
}

std::optional<RegenerationSample> build_regeneration(const TokenSequence& x,
                                                     std::span<const std::size_t> plan_positions,
                                                     const ConfusionNotebook& notebook) {
  if (notebook.course == Course::kItd) throw ContractError("no regeneration for inserted-token views");
  if (notebook.pos4.empty()) return std::nullopt;
  RegenerationSample sample;
  sample.input = x;
  for (std::size_t p : notebook.pos4) {
    if (!std::binary_search(plan_positions.begin(), plan_positions.end(), p)) {
      throw ContractError("pos4 entry " + std::to_string(p) + " was never corrupted");
    }
    sample.input.ids[p] = kMaskId;
    sample.positions.push_back(p);
    sample.targets.push_back(x.ids[p]);
  }
  return sample;
}

std::optional<RediscriminationSample> build_rediscrimination(const TokenSequence& x, const TokenSequence& view,
                                                             const ConfusionNotebook& notebook) {
  if (notebook.course == Course::kItd) throw ContractError("no rediscrimination for inserted-token views");
  if (x.size() != view.size()) throw ContractError("build_rediscrimination: length mismatch");
  if (notebook.pos2.empty() && notebook.pos3.empty()) return std::nullopt;
  RediscriminationSample sample;
  sample.input = view;
  for (std::size_t p : notebook.pos4) sample.input.ids[p] = x.ids[p];
  std::merge(notebook.pos2.begin(), notebook.pos2.end(), notebook.pos3.begin(), notebook.pos3.end(),
             std::back_inserter(sample.positions));
  sample.labels.reserve(sample.positions.size());
  for (std::size_t p : sample.positions) {
    sample.labels.push_back(std::binary_search(notebook.pos3.begin(), notebook.pos3.end(), p) ? 1 : 0);
  }
  return sample;
}

namespace {

Tensor regeneration_loss(const Model& model, const Tensor& g_hidden, const Packing& packing,
                         std::span<const RegenerationSample> samples) {
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::vector<TokenId>> targets;
  for (const auto& s : samples) {
    positions.push_back(s.positions);
    targets.push_back(s.targets);
  }
  return lm_loss_at(model, g_hidden, packing, positions, targets);
}

Tensor rediscrimination_loss(const Model& model, const Tensor& d_hidden, const Packing& packing,
                             std::span<const RediscriminationSample> samples, DetectionHead head) {
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::vector<std::uint8_t>> labels;
  for (const auto& s : samples) {
    positions.push_back(s.positions);
    labels.push_back(s.labels);
  }
  return detection_loss_at(model, d_hidden, packing, head, positions, labels);
}

}  // namespace

Tensor loss_re_mlm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                   std::span<const RegenerationSample> samples) {
  return regeneration_loss(model, g_hidden, packing, samples);
}

Tensor loss_re_slm(const Model& model, const Tensor& g_hidden, const Packing& packing,
                   std::span<const RegenerationSample> samples) {
  return regeneration_loss(model, g_hidden, packing, samples);
}

Tensor loss_re_rtd(const Model& model, const Tensor& d_hidden, const Packing& packing,
                   std::span<const RediscriminationSample> samples) {
  return rediscrimination_loss(model, d_hidden, packing, samples, DetectionHead::kRtd);
}

Tensor loss_re_std(const Model& model, const Tensor& d_hidden, const Packing& packing,
                   std::span<const RediscriminationSample> samples) {
  return rediscrimination_loss(model, d_hidden, packing, samples, DetectionHead::kStd);
}

MCL_END_NAMESPACE
