// SPDX-License-Identifier: Apache-2.0
#pragma once

// Course soups: one model per proper non-empty subset of the four
// self-correction losses, merged by uniform or weighted parameter averaging.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcl/checkpoint.hpp"
#include "mcl/probe.hpp"
#include "mcl/real.hpp"
#include "mcl/trainer.hpp"

MCL_BEGIN_NAMESPACE

/// Membership flags in the order re_mlm, re_rtd, re_slm, re_std.
struct CorrectionSubset {
  std::array<bool, 4> members{};

  std::size_t size() const;
  /// e.g. "re_mlm+re_std".
  std::string name() const;
  /// Inverse of name(). Throws InputError.
  static CorrectionSubset parse(const std::string& name);
  /// Sets the four correction switches; self-supervision courses stay on.
  void apply(CourseSwitches& courses) const;

  friend bool operator==(const CorrectionSubset&, const CorrectionSubset&) = default;
};

/// The 14 proper non-empty subsets: singles, then pairs, then triples,
/// each group in lexicographic order of member indices.
std::vector<CorrectionSubset> enumerate_subsets();

struct SweepRun {
  CorrectionSubset subset;
  std::uint64_t seed = 1;
  std::string checkpoint;
  std::optional<double> score;
};

/// JSON document:
///   {"base_config": "...", "output_dir": "...",
///    "runs": [{"subset": "re_mlm+re_rtd", "seed": 1,
///              "checkpoint": "...", "score": 0.93}, ...]}
/// "score" is optional.
struct SweepManifest {
  std::string base_config;
  std::string output_dir;
  std::vector<SweepRun> runs;

  /// Throws InputError on duplicate subsets or an empty run list.
  void validate() const;
  std::string to_json() const;
  static SweepManifest from_json(const std::string& text);
  static SweepManifest load(const std::string& path);
  void save(const std::string& path) const;
};

/// All 14 subsets, checkpoints under output_dir/<subset name>/final.mcl.
SweepManifest make_sweep_manifest(const std::string& base_config, const std::string& output_dir, std::uint64_t seed);

/// Trains every run of the manifest from its base config.
void run_sweep(SweepManifest& manifest);

struct SoupWeights {
  std::vector<double> values;

  /// Throws InputError unless every weight is >= 0 and the sum is 1 +- 1e-9.
  void validate() const;
  static SoupWeights uniform(std::size_t k);
  /// Proportional to the scores. Falls back to uniform, with a message in
  /// `warning`, when a score is missing or all scores are zero.
  static SoupWeights from_scores(std::span<const std::optional<double>> scores, std::string* warning = nullptr);
  /// Whitespace-separated numbers.
  static SoupWeights load(const std::string& path);
};

/// Weighted mean of every parameter. Sums run in canonical parameter order
/// and checkpoint order with a double accumulator. Throws MergeError naming
/// the first mismatched parameter.
ModelCheckpoint merge_checkpoints(std::span<const ModelCheckpoint> checkpoints, const SoupWeights& weights);

/// Probes every run's checkpoint, stores the accuracy as its score and
/// returns the score-proportional weights.
SoupWeights score_runs(SweepManifest& manifest, const Vocab& vocab, const std::vector<LabeledSentence>& data,
                       const ProbeOptions& options, std::string* warning = nullptr);

/// "subset,seed,checkpoint,score,weight" rows.
std::string soup_report_csv(const SweepManifest& manifest, const SoupWeights& weights);

MCL_END_NAMESPACE
