// SPDX-License-Identifier: Apache-2.0
#pragma once

// Joint optimization of the nine course losses. Generator losses enter with
// unit weight, discriminator losses are multiplied by lambda, one AdamW
// optimizer covers every parameter, and each step runs all enabled courses
// on the same batch.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcl/correction.hpp"
#include "mcl/courses.hpp"
#include "mcl/encoder.hpp"
#include "mcl/real.hpp"
#include "mcl/tensor.hpp"

MCL_BEGIN_NAMESPACE

enum class LossKind : std::size_t {
  kMlm = 0,
  kRtd,
  kSlm,
  kStd,
  kItd,
  kReMlm,
  kReRtd,
  kReSlm,
  kReStd,
};
inline constexpr std::size_t kLossCount = 9;
inline constexpr std::array<LossKind, kLossCount> kAllLosses = {
    LossKind::kMlm, LossKind::kRtd,   LossKind::kSlm,   LossKind::kStd,  LossKind::kItd,
    LossKind::kReMlm, LossKind::kReRtd, LossKind::kReSlm, LossKind::kReStd};

const char* to_string(LossKind kind);
/// True for losses computed on the discriminator (scaled by lambda).
bool is_discriminator_loss(LossKind kind);

/// Which courses run. MLM and RTD are always on.
struct CourseSwitches {
  bool std_course = true;
  bool itd_course = true;
  bool re_mlm = true;
  bool re_rtd = true;
  bool re_slm = true;
  bool re_std = true;

  bool enabled(LossKind kind) const;
  bool any_correction() const { return re_mlm || re_rtd || re_slm || re_std; }
};

struct TrainConfig {
  double lambda_disc = 50.0;
  double learning_rate = 5e-4;
  std::size_t warmup_steps = 400;
  std::size_t total_steps = 5000;
  std::size_t batch_size = 32;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_epsilon = 1e-6;
  double grad_clip_norm = 2.0;
  double weight_decay = 0.01;
  std::uint64_t seed = 1;
  CourseSwitches courses;
  /// Correction losses contribute from this step on.
  std::size_t correction_start_step = 0;
  CorruptionRates rates;
  /// Per-loss multipliers (before lambda), indexed by LossKind.
  std::array<double, kLossCount> loss_weights = {1, 1, 1, 1, 1, 1, 1, 1, 1};

  /// Throws ConfigError on invalid settings.
  void validate() const;
};

/// Per-loss tensors of one step; disabled courses hold an exact zero.
using LossSet = std::array<Tensor, kLossCount>;

/// (sum of weighted generator losses) + lambda * (sum of weighted
/// discriminator losses). Throws NonFiniteLossError naming the first
/// non-finite component.
Tensor total_loss(const LossSet& losses, double lambda, const std::array<double, kLossCount>& weights);

/// peak * min(t / warmup, (total - t) / (total - warmup)), clamped to [0, peak].
double learning_rate_at(std::size_t t, double peak, std::size_t warmup, std::size_t total);

/// Scales gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
double clip_grad_norm(std::span<const NamedTensor> params, double max_norm);

/// Global L2 norm of all present gradients.
double grad_norm(std::span<const NamedTensor> params);

/// Adam with decoupled weight decay. Parameters without a gradient in a step
/// are left untouched (no decay, no moment update).
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-6;
    double weight_decay = 0.01;
  };

  AdamW(std::vector<NamedTensor> params, Options options);

  /// One update with 1-based step index t and learning rate lr.
  void step(std::size_t t, double lr);

  std::span<const NamedTensor> params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<bool> decay_;
  std::vector<std::vector<Real>> first_moment_;
  std::vector<std::vector<Real>> second_moment_;
  Options options_;
};

/// Whether decoupled weight decay applies to a parameter name (matrices and
/// the embedding table; not biases, gains or the relative bias tables).
bool decays(const std::string& name);

struct MetricsRecord {
  std::size_t step = 0;
  std::array<double, kLossCount> losses{};
  double total_loss = 0;
  std::optional<double> replace_rate;
  std::optional<double> replace_accuracy;
  std::array<std::size_t, 4> rtd_cells{};
  std::array<std::size_t, 4> std_cells{};
  double learning_rate = 0;
  double grad_norm = 0;
  // Label statistics of the discriminator streams.
  std::size_t itd_nonoriginal_labels = 0;
  std::size_t itd_total_labels = 0;
  /// Sequences whose ITD label fraction fell below |i| / (n + |i|).
  std::size_t itd_floor_violations = 0;
  std::size_t disc_nonoriginal_labels = 0;
  std::size_t disc_total_labels = 0;
  std::size_t skipped_sequences = 0;

  double loss(LossKind kind) const { return losses[static_cast<std::size_t>(kind)]; }
};

/// Replace rate and accuracy of the RTD view. replace_rate counts mask
/// positions whose sampled token differs from the original; accuracy is the
/// fraction of those predicted "replaced" (probability-of-original < 0.5).
/// Both are empty when undefined (no mask positions / no replaced tokens).
struct ReplaceMetrics {
  std::optional<double> replace_rate;
  std::optional<double> replace_accuracy;
};
ReplaceMetrics compute_replace_metrics(std::span<const TokenSequence> originals,
                                       std::span<const CorruptionPlan> plans,
                                       std::span<const TokenSequence> x_rtd,
                                       std::span<const std::vector<Real>> original_probs);

/// Discrete outcomes of a step: corruption plans, generator samples and
/// confusion notebooks. Replaying a step with frozen choices makes the
/// objective a smooth function of the parameters.
struct StepChoices {
  std::vector<CorruptionPlan> plans;
  std::vector<TokenSequence> x_rtd, x_std, x_itd;
  std::vector<ConfusionNotebook> rtd_notebooks, std_notebooks;
};

struct StepForward {
  LossSet losses;
  StepChoices choices;
  std::vector<std::vector<Real>> rtd_probs;  // detached, per sequence
  MetricsRecord metrics;                     // label statistics and cell counts
};

/// Runs every enabled course on `batch`. When `frozen` is given its plans,
/// samples and notebooks are reused instead of drawn.
StepForward forward_step(const Model& model, std::span<const TokenSequence> batch, const TrainConfig& config,
                         std::size_t step, const StepChoices* frozen = nullptr);

/// Owns the optimizer state for one model.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config);

  /// One forward/backward/update on `batch`. On a non-finite loss the step
  /// throws NonFiniteLossError before any parameter changes.
  MetricsRecord train_step(std::span<const TokenSequence> batch);

  std::size_t steps_done() const { return step_; }
  const TrainConfig& config() const { return config_; }
  Model& model() { return model_; }

 private:
  Model& model_;
  TrainConfig config_;
  AdamW optimizer_;
  std::size_t step_ = 0;
};

/// Fixed CSV schema of the metrics stream.
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRecord& record);

MCL_END_NAMESPACE
