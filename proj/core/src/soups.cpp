// SPDX-License-Identifier: Apache-2.0
#include "mcl/soups.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mcl/errors.hpp"
#include "mcl/pretrain.hpp"

MCL_BEGIN_NAMESPACE

namespace {

constexpr const char* kMemberNames[4] = {"re_mlm", "re_rtd", "re_slm", "re_std"};

}  // namespace

std::size_t CorrectionSubset::size() const {
  std::size_t n = 0;
  for (bool m : members) n += m;
  return n;
}

std::string CorrectionSubset::name() const {
  std::string out;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!members[i]) continue;
    if (!out.empty()) out += "+";
    out += kMemberNames[i];
  }
  return out.empty() ? "none" : out;
}

CorrectionSubset CorrectionSubset::parse(const std::string& name) {
  CorrectionSubset s;
  if (name == "none") return s;
  std::istringstream in(name);
  std::string part;
  while (std::getline(in, part, '+')) {
    bool found = false;
    for (std::size_t i = 0; i < 4; ++i) {
      if (part == kMemberNames[i]) {
        if (s.members[i]) throw InputError("subset '" + name + "' repeats " + part);
        s.members[i] = true;
        found = true;
      }
    }
    if (!found) throw InputError("unknown correction loss '" + part + "' in subset '" + name + "'");
  }
  return s;
}

void CorrectionSubset::apply(CourseSwitches& courses) const {
  courses.std_course = true;
  courses.itd_course = true;
  courses.re_mlm = members[0];
  courses.re_rtd = members[1];
  courses.re_slm = members[2];
  courses.re_std = members[3];
}

std::vector<CorrectionSubset> enumerate_subsets() {
  std::vector<CorrectionSubset> out;
  for (std::size_t size = 1; size <= 3; ++size) {
    for (unsigned mask = 1; mask < 15; ++mask) {
      CorrectionSubset s;
      for (std::size_t i = 0; i < 4; ++i) s.members[i] = (mask >> (3 - i)) & 1u;
      if (s.size() == size) out.push_back(s);
    }
  }
  // Within a size, descending masks with bit 3 = re_mlm give lexicographic
  // member order.
  for (std::size_t lo = 0; lo < out.size();) {
    std::size_t hi = lo;
    while (hi < out.size() && out[hi].size() == out[lo].size()) ++hi;
    std::reverse(out.begin() + static_cast<std::ptrdiff_t>(lo), out.begin() + static_cast<std::ptrdiff_t>(hi));
    lo = hi;
  }
  return out;
}

void SweepManifest::validate() const {
  if (runs.empty()) throw InputError("sweep manifest has no runs");
  std::set<std::string> seen;
  for (const auto& r : runs) {
    if (!seen.insert(r.subset.name()).second) throw InputError("sweep manifest repeats subset " + r.subset.name());
  }
}

std::string SweepManifest::to_json() const {
  nlohmann::ordered_json j;
  j["base_config"] = base_config;
  j["output_dir"] = output_dir;
  j["runs"] = nlohmann::ordered_json::array();
  for (const auto& r : runs) {
    nlohmann::ordered_json run;
    run["subset"] = r.subset.name();
    run["seed"] = r.seed;
    run["checkpoint"] = r.checkpoint;
    if (r.score) run["score"] = *r.score;
    j["runs"].push_back(run);
  }
  return j.dump(2) + "\n";
}

SweepManifest SweepManifest::from_json(const std::string& text) {
  SweepManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.base_config = j.value("base_config", "");
    m.output_dir = j.value("output_dir", "");
    for (const auto& r : j.at("runs")) {
      SweepRun run;
      run.subset = CorrectionSubset::parse(r.at("subset").get<std::string>());
      run.seed = r.value("seed", std::uint64_t{1});
      run.checkpoint = r.value("checkpoint", "");
      if (r.contains("score") && !r.at("score").is_null()) run.score = r.at("score").get<double>();
      m.runs.push_back(std::move(run));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed sweep manifest: ") + e.what());
  }
  m.validate();
  return m;
}

SweepManifest SweepManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void SweepManifest::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write manifest '" + path + "'");
  out << to_json();
}

SweepManifest make_sweep_manifest(const std::string& base_config, const std::string& output_dir, std::uint64_t seed) {
  SweepManifest m{base_config, output_dir, {}};
  for (const auto& s : enumerate_subsets()) {
    m.runs.push_back({s, seed, (std::filesystem::path(output_dir) / s.name() / "final.mcl").string(), std::nullopt});
  }
  return m;
}

void run_sweep(SweepManifest& manifest) {
  manifest.validate();
  const RunConfig base = load_run_config(manifest.base_config);
  for (auto& run : manifest.runs) {
    RunConfig config = base;
    run.subset.apply(config.train.courses);
    config.train.seed = run.seed;
    if (run.checkpoint.empty()) {
      run.checkpoint = (std::filesystem::path(manifest.output_dir) / run.subset.name() / "final.mcl").string();
    }
    config.output_dir = std::filesystem::path(run.checkpoint).parent_path().string();
    run_pretraining(config);
  }
}

void SoupWeights::validate() const {
  if (values.empty()) throw InputError("soup weights are empty");
  double total = 0;
  for (double w : values) {
    if (!(w >= 0) || !std::isfinite(w)) throw InputError("soup weights must be finite and non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("soup weights sum to " + std::to_string(total) + ", not 1");
}

SoupWeights SoupWeights::uniform(std::size_t k) {
  if (k == 0) throw InputError("no checkpoints to average");
  return {std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

SoupWeights SoupWeights::from_scores(std::span<const std::optional<double>> scores, std::string* warning) {
  double total = 0;
  bool missing = false;
  for (const auto& s : scores) {
    if (!s) {
      missing = true;
      continue;
    }
    if (!(*s >= 0) || !std::isfinite(*s)) throw InputError("scores must be finite and non-negative");
    total += *s;
  }
  if (missing || total <= 0) {
    if (warning) *warning = missing ? "some runs have no score; using uniform weights" : "all scores are zero; using uniform weights";
    return uniform(scores.size());
  }
  SoupWeights w;
  for (const auto& s : scores) w.values.push_back(*s / total);
  return w;
}

SoupWeights SoupWeights::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open weights '" + path + "'");
  SoupWeights w;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      w.values.push_back(std::stod(token, &used));
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw FormatError("weights file '" + path + "' holds a non-number '" + token + "'");
    }
  }
  w.validate();
  return w;
}

ModelCheckpoint merge_checkpoints(std::span<const ModelCheckpoint> checkpoints, const SoupWeights& weights) {
  if (checkpoints.empty()) throw MergeError("no checkpoints to merge");
  if (weights.values.size() != checkpoints.size()) {
    throw MergeError(std::to_string(checkpoints.size()) + " checkpoints but " + std::to_string(weights.values.size()) +
                     " weights");
  }
  weights.validate();
  const ModelCheckpoint& first = checkpoints.front();
  for (std::size_t k = 1; k < checkpoints.size(); ++k) {
    const ModelCheckpoint& other = checkpoints[k];
    for (std::size_t i = 0; i < std::max(first.params.size(), other.params.size()); ++i) {
      if (i >= first.params.size() || i >= other.params.size()) {
        const auto& extra = i < first.params.size() ? first.params[i] : other.params[i];
        throw MergeError("parameter '" + extra.name + "' is missing from checkpoint " + std::to_string(k));
      }
      if (first.params[i].name != other.params[i].name || first.params[i].shape != other.params[i].shape) {
        throw MergeError("parameter '" + first.params[i].name + "' " + shape_to_string(first.params[i].shape) +
                         " does not match '" + other.params[i].name + "' " + shape_to_string(other.params[i].shape) +
                         " in checkpoint " + std::to_string(k));
      }
    }
    if (other.config.digest() != first.config.digest()) throw MergeError("checkpoint " + std::to_string(k) + " has a different encoder config");
  }
  ModelCheckpoint out;
  out.config = first.config;
  std::vector<double> acc;
  for (std::size_t i = 0; i < first.params.size(); ++i) {
    const NamedArray& p = first.params[i];
    acc.assign(p.values.size(), 0.0);
    for (std::size_t k = 0; k < checkpoints.size(); ++k) {
      const double w = weights.values[k];
      const auto& src = checkpoints[k].params[i].values;
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w * static_cast<double>(src[j]);
    }
    NamedArray merged{p.name, p.shape, std::vector<float>(acc.size())};
    for (std::size_t j = 0; j < acc.size(); ++j) merged.values[j] = static_cast<float>(acc[j]);
    out.params.push_back(std::move(merged));
  }
  return out;
}

SoupWeights score_runs(SweepManifest& manifest, const Vocab& vocab, const std::vector<LabeledSentence>& data,
                       const ProbeOptions& options, std::string* warning) {
  std::vector<std::optional<double>> scores;
  for (auto& run : manifest.runs) {
    const Model model = restore(load_checkpoint(run.checkpoint));
    run.score = probe_train_eval(model, vocab, data, options).test_accuracy;
    scores.push_back(run.score);
  }
  return SoupWeights::from_scores(scores, warning);
}

std::string soup_report_csv(const SweepManifest& manifest, const SoupWeights& weights) {
  std::ostringstream out;
  out << "subset,seed,checkpoint,score,weight\n";
  for (std::size_t i = 0; i < manifest.runs.size(); ++i) {
    const auto& r = manifest.runs[i];
    out << r.subset.name() << ',' << r.seed << ',' << r.checkpoint << ',';
    if (r.score) out << *r.score;
    out << ',' << (i < weights.values.size() ? weights.values[i] : 0.0) << '\n';
  }
  return out.str();
}

MCL_END_NAMESPACE
