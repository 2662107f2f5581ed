// SPDX-License-Identifier: Apache-2.0
#pragma once

// Generator and discriminator transformer stacks sharing one token embedding
// table. Both stacks are post-LN encoders with T5-style bucketed relative
// position bias (one table per stack, shared across its layers). The
// generator's LM head is tied to the embedding table; the discriminator has
// three independent binary detection heads.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mcl/real.hpp"
#include "mcl/rng.hpp"
#include "mcl/tensor.hpp"
#include "mcl/tokens.hpp"

MCL_BEGIN_NAMESPACE

struct EncoderConfig {
  std::size_t vocab_size = 8192;
  std::size_t hidden_size = 128;
  std::size_t generator_layers = 2;
  std::size_t discriminator_layers = 4;
  std::size_t attention_heads = 4;
  std::size_t ffn_inner_size = 512;
  std::size_t relative_buckets = 32;
  std::size_t max_relative_position = 128;
  std::size_t max_seq_len = 128;
  Real dropout_rate = Real(0.1);
  Real init_stddev = Real(0.02);

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  /// Stable text form of the architecture (shape-defining fields only).
  std::string canonical() const;
  /// FNV-1a 64 of canonical(); stored in checkpoints.
  std::uint64_t digest() const;
  /// Inverse of canonical(); unspecified fields keep their defaults.
  static EncoderConfig from_canonical(const std::string& text);

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Bidirectional T5 bucket for a key at offset `distance` (key minus query)
/// from its query. Half of the buckets encode negative offsets; within each
/// half, small offsets are exact and larger ones log-spaced up to
/// `max_distance`, beyond which the bucket saturates.
std::size_t relative_position_bucket(std::ptrdiff_t distance, std::size_t num_buckets, std::size_t max_distance);

enum class Stack { kGenerator, kDiscriminator };
enum class DetectionHead { kRtd, kStd, kItd };

const char* to_string(DetectionHead head);

struct LayerParams {
  Tensor query_weight, query_bias;
  Tensor key_weight, key_bias;
  Tensor value_weight, value_bias;
  Tensor output_weight, output_bias;
  Tensor attention_norm_gain, attention_norm_bias;
  Tensor ffn_in_weight, ffn_in_bias;
  Tensor ffn_out_weight, ffn_out_bias;
  Tensor ffn_norm_gain, ffn_norm_bias;
};

struct StackParams {
  Tensor embedding_norm_gain, embedding_norm_bias;
  Tensor relative_bias;  // [buckets x heads]
  std::vector<LayerParams> layers;
};

struct HeadParams {
  Tensor weight;  // [hidden x 1]
  Tensor bias;    // [1]
};

/// Controls dropout for one forward pass.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with a nonzero dropout rate

  static ForwardContext inference() { return {}; }
};

/// Row layout of a packed batch: position p of sequence b is row offsets[b] + p.
struct Packing {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
  std::size_t rows = 0;

  std::size_t row(std::size_t sequence, std::size_t position) const { return offsets[sequence] + position; }
};

Packing pack(std::span<const TokenSequence> batch);

struct Encoded {
  Tensor hidden;  // [rows x hidden]
  Packing packing;
};

using NamedTensor = std::pair<std::string, Tensor>;

class Model {
 public:
  /// Random initialization: N(0, init_stddev) weights, zero biases, unit
  /// layer-norm gains.
  static Model initialize(const EncoderConfig& config, std::uint64_t seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Deep copy with fresh parameter tensors and no gradients.
  Model clone() const;

  const EncoderConfig& config() const { return config_; }

  /// Contextual representations for every position of every sequence.
  Encoded encode(Stack stack, std::span<const TokenSequence> batch, const ForwardContext& ctx) const;
  Tensor encode_generator(const TokenSequence& tokens, const ForwardContext& ctx = {}) const;
  Tensor encode_discriminator(const TokenSequence& tokens, const ForwardContext& ctx = {}) const;

  /// logit[i][t] = <embedding[t], hidden[rows[i]]> + lm_bias[t].
  Tensor lm_logits(const Tensor& hidden, std::span<const std::size_t> rows) const;

  /// w . h + b per row of hidden, shape [rows].
  Tensor detection_logits(const Tensor& hidden, DetectionHead head) const;

  /// Attention bias matrix [len x len] of one head, as added before softmax.
  std::vector<Real> attention_bias_matrix(Stack stack, std::size_t length, std::size_t head) const;

  /// Every trainable tensor in canonical order.
  std::vector<NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  const Tensor& embedding() const { return embedding_; }
  const Tensor& lm_bias() const { return lm_bias_; }
  const StackParams& stack(Stack s) const { return s == Stack::kGenerator ? generator_ : discriminator_; }
  const HeadParams& head(DetectionHead h) const;

 private:
  Model() = default;

  AttentionLayout layout_for(std::span<const TokenSequence> batch, const Packing& packing) const;

  EncoderConfig config_;
  Tensor embedding_;  // [vocab x hidden], shared by both stacks and the LM head
  Tensor lm_bias_;    // [vocab]
  StackParams generator_;
  StackParams discriminator_;
  HeadParams rtd_head_, std_head_, itd_head_;
  std::vector<std::int32_t> bucket_by_distance_;
};

MCL_END_NAMESPACE
