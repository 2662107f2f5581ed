// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration: a flat "key = value" text file. Lines starting with '#'
// are comments. Unknown keys are errors. Keys:
//
//   encoder   vocab_size hidden_size generator_layers discriminator_layers
//             attention_heads ffn_inner_size relative_buckets
//             max_relative_position max_seq_len dropout_rate init_stddev
//   training  lambda learning_rate warmup_steps total_steps batch_size
//             adam_beta1 adam_beta2 adam_epsilon grad_clip_norm weight_decay
//             seed correction_start_step
//   courses   mask_rate swap_rate insert_rate std_course itd_course
//             re_mlm re_rtd re_slm re_std weight_<loss> (loss = mlm, rtd,
//             slm, std, itd, re_mlm, re_rtd, re_slm, re_std)
//   data      corpus prepend_cls
//   output    output_dir checkpoint_every log_every

#include <cstddef>
#include <string>

#include "mcl/encoder.hpp"
#include "mcl/real.hpp"
#include "mcl/trainer.hpp"

MCL_BEGIN_NAMESPACE

struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  std::string corpus_path;
  /// Pretraining sequences start with [CLS], as probe inputs do.
  bool prepend_cls = true;
  std::string output_dir = "run";
  /// Intermediate checkpoint period in steps; 0 writes only the final one.
  std::size_t checkpoint_every = 0;
  /// Progress line period on stderr; 0 is silent.
  std::size_t log_every = 0;

  /// Throws ConfigError. Call before allocating anything.
  void validate() const;
  /// Round-trips through parse_run_config.
  std::string to_text() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

MCL_END_NAMESPACE
