// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

#include "mcl/real.hpp"

MCL_BEGIN_NAMESPACE

/// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Token id or class index outside its valid range.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A caller broke a documented precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unusable input data (corpus, sequences, datasets).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt or truncated file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint was written for a different encoder configuration.
class DigestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoints cannot be averaged together.
class MergeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A loss component evaluated to NaN or infinity.
class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

MCL_END_NAMESPACE
