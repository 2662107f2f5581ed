// SPDX-License-Identifier: Apache-2.0
#include "mcl/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kMlm:
      return "mlm";
    case LossKind::kRtd:
      return "rtd";
    case LossKind::kSlm:
      return "slm";
    case LossKind::kStd:
      return "std";
    case LossKind::kItd:
      return "itd";
    case LossKind::kReMlm:
      return "re_mlm";
    case LossKind::kReRtd:
      return "re_rtd";
    case LossKind::kReSlm:
      return "re_slm";
    case LossKind::kReStd:
      return "re_std";
  }
  return "?";
}

bool is_discriminator_loss(LossKind kind) {
  switch (kind) {
    case LossKind::kRtd:
    case LossKind::kStd:
    case LossKind::kItd:
    case LossKind::kReRtd:
    case LossKind::kReStd:
      return true;
    default:
      return false;
  }
}

bool CourseSwitches::enabled(LossKind kind) const {
  switch (kind) {
    case LossKind::kMlm:
    case LossKind::kRtd:
      return true;
    case LossKind::kSlm:
    case LossKind::kStd:
      return std_course;
    case LossKind::kItd:
      return itd_course;
    case LossKind::kReMlm:
      return re_mlm;
    case LossKind::kReRtd:
      return re_rtd;
    case LossKind::kReSlm:
      return re_slm;
    case LossKind::kReStd:
      return re_std;
  }
  return false;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (!(lambda_disc > 0)) fail("lambda must be positive");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (total_steps == 0) fail("total_steps must be positive");
  if (warmup_steps >= total_steps) fail("warmup_steps must be smaller than total_steps");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) fail("Adam betas must lie in [0, 1)");
  if (!(adam_epsilon > 0)) fail("adam_epsilon must be positive");
  if (!(grad_clip_norm > 0)) fail("grad_clip_norm must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if ((courses.re_slm || courses.re_std) && !courses.std_course) {
    fail("re_slm/re_std need the swapped-token course enabled");
  }
  for (double w : loss_weights) {
    if (!(w >= 0) || !std::isfinite(w)) fail("loss weights must be finite and non-negative");
  }
  rates.validate();
}

Tensor total_loss(const LossSet& losses, double lambda, const std::array<double, kLossCount>& weights) {
  Tensor generator_sum = Tensor::scalar(Real{0});
  Tensor discriminator_sum = Tensor::scalar(Real{0});
  for (LossKind kind : kAllLosses) {
    const auto i = static_cast<std::size_t>(kind);
    const Tensor& component = losses[i];
    if (!component.defined()) throw ContractError(std::string("loss '") + to_string(kind) + "' missing");
    if (!std::isfinite(static_cast<double>(component.item()))) {
      throw NonFiniteLossError(std::string("loss '") + to_string(kind) + "' is not finite");
    }
    const Tensor weighted = weights[i] == 1.0 ? component : scale(component, static_cast<Real>(weights[i]));
    if (is_discriminator_loss(kind)) {
      discriminator_sum = add(discriminator_sum, weighted);
    } else {
      generator_sum = add(generator_sum, weighted);
    }
  }
  return add(generator_sum, scale(discriminator_sum, static_cast<Real>(lambda)));
}

double learning_rate_at(std::size_t t, double peak, std::size_t warmup, std::size_t total) {
  const double td = static_cast<double>(t);
  const double up = warmup == 0 ? 1.0 : td / static_cast<double>(warmup);
  const double down = total > warmup ? (static_cast<double>(total) - td) / static_cast<double>(total - warmup) : 0.0;
  return peak * std::clamp(std::min(up, down), 0.0, 1.0);
}

double grad_norm(std::span<const NamedTensor> params) {
  double sq = 0;
  for (const auto& [name, t] : params) {
    for (Real g : t.grad()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<const NamedTensor> params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm && norm > 0) {
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      Tensor handle = t;
      for (Real& g : handle.mutable_grad()) g = static_cast<Real>(g * factor);
    }
  }
  return norm;
}

bool decays(const std::string& name) { return name == "embedding" || name.ends_with(".weight"); }

AdamW::AdamW(std::vector<NamedTensor> params, Options options)
    : params_(std::move(params)),
      first_moment_(params_.size()),
      second_moment_(params_.size()),
      options_(options) {
  decay_.reserve(params_.size());
  for (const auto& [name, t] : params_) decay_.push_back(decays(name));
}

void AdamW::step(std::size_t t, double lr) {
  if (t == 0) throw ContractError("AdamW::step uses 1-based step indices");
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (!p.has_grad()) continue;
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    if (m.empty()) {
      m.assign(p.numel(), Real{0});
      v.assign(p.numel(), Real{0});
    }
    const auto grad = p.grad();
    auto values = p.mutable_values();
    const double decay = decay_[i] ? options_.weight_decay : 0.0;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double update = (mj / correction1) / (std::sqrt(vj / correction2) + options_.epsilon);
      const double old = values[j];
      values[j] = static_cast<Real>(old - lr * update - lr * decay * old);
    }
  }
}

ReplaceMetrics compute_replace_metrics(std::span<const TokenSequence> originals,
                                       std::span<const CorruptionPlan> plans,
                                       std::span<const TokenSequence> x_rtd,
                                       std::span<const std::vector<Real>> original_probs) {
  std::size_t masked = 0, replaced = 0, caught = 0;
  for (std::size_t b = 0; b < originals.size(); ++b) {
    for (std::size_t p : plans[b].mask_positions) {
      ++masked;
      if (x_rtd[b].ids[p] != originals[b].ids[p]) {
        ++replaced;
        if (original_probs[b][p] < kDecisionThreshold) ++caught;
      }
    }
  }
  ReplaceMetrics m;
  if (masked > 0) m.replace_rate = static_cast<double>(replaced) / static_cast<double>(masked);
  if (replaced > 0) m.replace_accuracy = static_cast<double>(caught) / static_cast<double>(replaced);
  return m;
}

namespace {

std::vector<std::size_t> rows_for(const Packing& packing, std::size_t b, std::span<const std::size_t> positions) {
  std::vector<std::size_t> rows;
  rows.reserve(positions.size());
  for (std::size_t p : positions) rows.push_back(packing.row(b, p));
  return rows;
}

// Replaces `positions_of(b)` in each base view with generator samples.
template <typename PositionsOf>
std::vector<TokenSequence> sample_views(const Model& model, const Encoded& enc, std::span<const TokenSequence> bases,
                                        PositionsOf positions_of, Rng& rng) {
  const Tensor hidden = enc.hidden.detach();
  std::vector<TokenSequence> out;
  out.reserve(bases.size());
  for (std::size_t b = 0; b < bases.size(); ++b) {
    const std::vector<std::size_t>& positions = positions_of(b);
    const Tensor logits = model.lm_logits(hidden, rows_for(enc.packing, b, positions));
    out.push_back(splice_generator_samples(bases[b], logits, positions, rng));
  }
  return out;
}

std::vector<std::vector<Real>> original_probabilities(const Model& model, const Encoded& enc, DetectionHead head) {
  const Tensor logits = model.detection_logits(enc.hidden.detach(), head);
  std::vector<std::vector<Real>> probs(enc.packing.lengths.size());
  for (std::size_t b = 0; b < probs.size(); ++b) {
    probs[b].resize(enc.packing.lengths[b]);
    for (std::size_t p = 0; p < probs[b].size(); ++p) probs[b][p] = sigmoid(logits.values()[enc.packing.row(b, p)]);
  }
  return probs;
}

void count_labels(std::span<const TokenSequence> views, std::span<const TokenSequence> originals,
                  MetricsRecord& m) {
  for (std::size_t b = 0; b < views.size(); ++b) {
    const auto labels = equality_labels(views[b], originals[b]);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      if (!views[b].is_real(p)) continue;
      ++m.disc_total_labels;
      if (!labels[p]) ++m.disc_nonoriginal_labels;
    }
  }
}

struct CorrectionInputs {
  std::vector<RegenerationSample> regen;
  std::vector<RediscriminationSample> redisc;
};

CorrectionInputs build_correction(std::span<const TokenSequence> batch, std::span<const TokenSequence> views,
                                  std::span<const ConfusionNotebook> notebooks,
                                  std::span<const CorruptionPlan> plans, bool swap_course, bool want_regen,
                                  bool want_redisc) {
  CorrectionInputs in;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& corrupted = swap_course ? plans[b].swap_positions : plans[b].mask_positions;
    if (want_regen) {
      if (auto s = build_regeneration(batch[b], corrupted, notebooks[b])) in.regen.push_back(std::move(*s));
    }
    if (want_redisc) {
      if (auto s = build_rediscrimination(batch[b], views[b], notebooks[b])) in.redisc.push_back(std::move(*s));
    }
  }
  return in;
}

template <typename Sample>
std::vector<TokenSequence> inputs_of(const std::vector<Sample>& samples) {
  std::vector<TokenSequence> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.input);
  return out;
}

}  // namespace

StepForward forward_step(const Model& model, std::span<const TokenSequence> batch, const TrainConfig& config,
                         std::size_t step, const StepChoices* frozen) {
  StepForward out;
  const CourseSwitches& sw = config.courses;
  const bool correction_active = step >= config.correction_start_step;
  Rng plan_rng = Rng::derive(config.seed, step, 1);
  Rng sample_rng = Rng::derive(config.seed, step, 2);
  Rng dropout_rng = Rng::derive(config.seed, step, 3);
  const ForwardContext ctx{true, &dropout_rng};
  const std::size_t batch_size = batch.size();
  StepChoices& ch = out.choices;
  MetricsRecord& metrics = out.metrics;
  for (auto& loss : out.losses) loss = Tensor::scalar(Real{0});
  auto loss_slot = [&](LossKind kind) -> Tensor& { return out.losses[static_cast<std::size_t>(kind)]; };

  if (frozen) {
    ch.plans = frozen->plans;
  } else {
    for (const auto& x : batch) ch.plans.push_back(plan_corruption(x, config.rates, plan_rng));
  }
  if (ch.plans.size() != batch_size) throw ContractError("frozen choices do not match the batch");
  const auto& plans = ch.plans;

  // Replaced token detection: mask -> G -> sample -> D.
  std::vector<TokenSequence> masked;
  for (std::size_t b = 0; b < batch_size; ++b) masked.push_back(apply_mask(batch[b], plans[b]));
  const Encoded g_mask = model.encode(Stack::kGenerator, masked, ctx);
  loss_slot(LossKind::kMlm) = loss_mlm(model, g_mask.hidden, g_mask.packing, plans, batch);
  ch.x_rtd = frozen ? frozen->x_rtd
                    : sample_views(model, g_mask, batch, [&](std::size_t b) -> const auto& {
                        return plans[b].mask_positions;
                      }, sample_rng);
  const Encoded d_rtd = model.encode(Stack::kDiscriminator, ch.x_rtd, ctx);
  loss_slot(LossKind::kRtd) = loss_rtd(model, d_rtd.hidden, d_rtd.packing, ch.x_rtd, batch);
  out.rtd_probs = original_probabilities(model, d_rtd, DetectionHead::kRtd);
  if (frozen) {
    ch.rtd_notebooks = frozen->rtd_notebooks;
  } else {
    for (std::size_t b = 0; b < batch_size; ++b) {
      ch.rtd_notebooks.push_back(
          classify_confusion(batch[b], ch.x_rtd[b], out.rtd_probs[b], plans[b].mask_positions, Course::kRtd));
    }
  }
  for (const auto& nb : ch.rtd_notebooks) {
    const auto c = nb.counts();
    for (std::size_t k = 0; k < 4; ++k) metrics.rtd_cells[k] += c[k];
  }
  count_labels(ch.x_rtd, batch, metrics);

  // Swapped token detection: swap -> G -> sample at swap positions -> D.
  if (sw.std_course) {
    std::vector<TokenSequence> swapped;
    for (std::size_t b = 0; b < batch_size; ++b) swapped.push_back(apply_swap(batch[b], plans[b]));
    const Encoded g_swap = model.encode(Stack::kGenerator, swapped, ctx);
    loss_slot(LossKind::kSlm) = loss_slm(model, g_swap.hidden, g_swap.packing, plans, batch);
    ch.x_std = frozen ? frozen->x_std
                      : sample_views(model, g_swap, batch, [&](std::size_t b) -> const auto& {
                          return plans[b].swap_positions;
                        }, sample_rng);
    const Encoded d_std = model.encode(Stack::kDiscriminator, ch.x_std, ctx);
    loss_slot(LossKind::kStd) = loss_std(model, d_std.hidden, d_std.packing, ch.x_std, batch);
    if (frozen) {
      ch.std_notebooks = frozen->std_notebooks;
    } else {
      const auto probs = original_probabilities(model, d_std, DetectionHead::kStd);
      for (std::size_t b = 0; b < batch_size; ++b) {
        ch.std_notebooks.push_back(
            classify_confusion(batch[b], ch.x_std[b], probs[b], plans[b].swap_positions, Course::kStd));
      }
    }
    for (const auto& nb : ch.std_notebooks) {
      const auto c = nb.counts();
      for (std::size_t k = 0; k < 4; ++k) metrics.std_cells[k] += c[k];
    }
    count_labels(ch.x_std, batch, metrics);
  }

  // Inserted token detection: insert [MASK] slots -> G fills them -> D.
  if (sw.itd_course) {
    std::vector<TokenSequence> inserted;
    std::vector<CorruptionPlan> itd_plans;
    for (std::size_t b = 0; b < batch_size; ++b) {
      try {
        inserted.push_back(apply_insert(batch[b], plans[b], model.config().max_seq_len));
        itd_plans.push_back(plans[b]);
      } catch (const InputError&) {
        ++metrics.skipped_sequences;
      }
    }
    if (!inserted.empty()) {
      const Encoded g_ins = model.encode(Stack::kGenerator, inserted, ctx);
      ch.x_itd = frozen ? frozen->x_itd
                        : sample_views(model, g_ins, inserted, [&](std::size_t b) -> const auto& {
                            return itd_plans[b].insert_positions;
                          }, sample_rng);
      const Encoded d_itd = model.encode(Stack::kDiscriminator, ch.x_itd, ctx);
      loss_slot(LossKind::kItd) = loss_itd(model, d_itd.hidden, d_itd.packing, ch.x_itd, itd_plans);
      for (std::size_t b = 0; b < ch.x_itd.size(); ++b) {
        const auto labels = insertion_labels(itd_plans[b], ch.x_itd[b].size());
        std::size_t nonoriginal = 0, total = 0;
        for (std::size_t p = 0; p < labels.size(); ++p) {
          if (!ch.x_itd[b].is_real(p)) continue;
          ++total;
          if (!labels[p]) ++nonoriginal;
        }
        const std::size_t inserted_count = itd_plans[b].insert_positions.size();
        const std::size_t floor_total = batch[b].real_length() + inserted_count;
        // nonoriginal / total >= inserted / (n + inserted), cross-multiplied.
        if (nonoriginal * floor_total < inserted_count * total) ++metrics.itd_floor_violations;
        metrics.itd_nonoriginal_labels += nonoriginal;
        metrics.itd_total_labels += total;
      }
      metrics.disc_nonoriginal_labels += metrics.itd_nonoriginal_labels;
      metrics.disc_total_labels += metrics.itd_total_labels;
    }
  }

  // Self-correction courses, rebuilt from this step's notebooks.
  if (correction_active && (sw.re_mlm || sw.re_rtd)) {
    const auto in = build_correction(batch, ch.x_rtd, ch.rtd_notebooks, plans, false, sw.re_mlm, sw.re_rtd);
    if (!in.regen.empty()) {
      const auto inputs = inputs_of(in.regen);
      const Encoded g = model.encode(Stack::kGenerator, inputs, ctx);
      loss_slot(LossKind::kReMlm) = loss_re_mlm(model, g.hidden, g.packing, in.regen);
    }
    if (!in.redisc.empty()) {
      const auto inputs = inputs_of(in.redisc);
      const Encoded d = model.encode(Stack::kDiscriminator, inputs, ctx);
      loss_slot(LossKind::kReRtd) = loss_re_rtd(model, d.hidden, d.packing, in.redisc);
    }
  }
  if (correction_active && sw.std_course && (sw.re_slm || sw.re_std)) {
    const auto in = build_correction(batch, ch.x_std, ch.std_notebooks, plans, true, sw.re_slm, sw.re_std);
    if (!in.regen.empty()) {
      const auto inputs = inputs_of(in.regen);
      const Encoded g = model.encode(Stack::kGenerator, inputs, ctx);
      loss_slot(LossKind::kReSlm) = loss_re_slm(model, g.hidden, g.packing, in.regen);
    }
    if (!in.redisc.empty()) {
      const auto inputs = inputs_of(in.redisc);
      const Encoded d = model.encode(Stack::kDiscriminator, inputs, ctx);
      loss_slot(LossKind::kReStd) = loss_re_std(model, d.hidden, d.packing, in.redisc);
    }
  }

  const auto replace = compute_replace_metrics(batch, plans, ch.x_rtd, out.rtd_probs);
  metrics.replace_rate = replace.replace_rate;
  metrics.replace_accuracy = replace.replace_accuracy;
  return out;
}

Trainer::Trainer(Model& model, TrainConfig config)
    : model_(model),
      config_(std::move(config)),
      optimizer_(model.named_parameters(), AdamW::Options{config_.adam_beta1, config_.adam_beta2,
                                                          config_.adam_epsilon, config_.weight_decay}) {
  config_.validate();
}

MetricsRecord Trainer::train_step(std::span<const TokenSequence> batch) {
  StepForward forward = forward_step(model_, batch, config_, step_);
  const Tensor total = total_loss(forward.losses, config_.lambda_disc, config_.loss_weights);
  if (!std::isfinite(static_cast<double>(total.item()))) throw NonFiniteLossError("total loss is not finite");
  model_.zero_grad();
  backward(total);
  const auto params = model_.named_parameters();
  const double norm = clip_grad_norm(params, config_.grad_clip_norm);
  const double lr = learning_rate_at(step_ + 1, config_.learning_rate, config_.warmup_steps, config_.total_steps);
  optimizer_.step(step_ + 1, lr);

  MetricsRecord m = std::move(forward.metrics);
  m.step = step_;
  for (std::size_t i = 0; i < kLossCount; ++i) m.losses[i] = forward.losses[i].item();
  m.total_loss = total.item();
  m.learning_rate = lr;
  m.grad_norm = norm;
  ++step_;
  return m;
}

namespace {

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, end) : std::string("nan");
}

}  // namespace

std::string metrics_csv_header() {
  std::string h = "step";
  for (LossKind kind : kAllLosses) h += std::string(",loss_") + to_string(kind);
  h += ",replace_rate,replace_accuracy,pos1,pos2,pos3,pos4,lr";
  return h;
}

std::string metrics_csv_row(const MetricsRecord& r) {
  std::string row = std::to_string(r.step);
  for (double loss : r.losses) row += "," + format_number(loss);
  row += "," + (r.replace_rate ? format_number(*r.replace_rate) : std::string());
  row += "," + (r.replace_accuracy ? format_number(*r.replace_accuracy) : std::string());
  for (std::size_t c : r.rtd_cells) row += "," + std::to_string(c);
  row += "," + format_number(r.learning_rate);
  return row;
}

MCL_END_NAMESPACE
