// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary checkpoint format, all integers little-endian:
//
//   "MCL1"                      4 bytes
//   config digest               u64
//   config text                 u32 length + bytes
//   parameter count             u32
//   per parameter               u32 name length + name, u32 rank,
//                               u64 per dimension, u64 byte offset
//   parameter data              float32 blobs, offsets relative to the
//                               first byte after the header
//
// Only parameters are stored; optimizer state is not.

#include <cstddef>
#include <string>
#include <vector>

#include "mcl/encoder.hpp"
#include "mcl/real.hpp"
#include "mcl/tensor.hpp"

MCL_BEGIN_NAMESPACE

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct ModelCheckpoint {
  EncoderConfig config;
  std::vector<NamedArray> params;  // canonical order

  std::size_t parameter_count() const;
  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

ModelCheckpoint snapshot(const Model& model);
/// Builds a model carrying the checkpoint's parameters. Throws FormatError
/// when names or shapes do not match the configuration.
Model restore(const ModelCheckpoint& checkpoint);

void save_checkpoint(const std::string& path, const ModelCheckpoint& checkpoint);
/// Throws FormatError on a bad magic, truncation or inconsistent table, and
/// DigestError when the stored digest does not match the stored config.
ModelCheckpoint load_checkpoint(const std::string& path);
/// Also throws DigestError unless the checkpoint was written for `expected`.
ModelCheckpoint load_checkpoint(const std::string& path, const EncoderConfig& expected);

/// Bytes before the first parameter blob.
std::size_t checkpoint_header_size(const ModelCheckpoint& checkpoint);

MCL_END_NAMESPACE
