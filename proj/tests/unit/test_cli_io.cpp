// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <algorithm>
#include <cstring>
#include <fstream>

#include "fixtures.hpp"
#include "mcl/checkpoint.hpp"
#include "mcl/errors.hpp"
#include "mcl/probe.hpp"
#include "mcl/run_config.hpp"
#include "mcl/toy_corpus.hpp"
#include "mcl/vocab.hpp"

using namespace mcl;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("mcl_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                 ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

void write_text(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

// --- Tokenizer and vocabulary ------------------------------------------------

TEST(Tokenize, SplitsWhitespaceAndPunctuation) {
  EXPECT_EQ(tokenize("The cat, sat."), (std::vector<std::string>{"The", "cat", ",", "sat", "."}));
  EXPECT_EQ(tokenize("  a\tb\n"), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(tokenize("don't"), (std::vector<std::string>{"don", "'", "t"}));
  EXPECT_TRUE(tokenize("").empty());
}

TEST(Tokenize, Deterministic) {
  const std::string line = "Hello, wörld! 3.14 ; x";
  const auto first = tokenize(line);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(tokenize(line), first);
}

TEST(Vocab, FrequencyRanked) {
  const Vocab v = build_vocab({"a a b"}, 10);
  ASSERT_TRUE(v.contains("a") && v.contains("b"));
  EXPECT_LT(v.id("a"), v.id("b"));
  EXPECT_EQ(v.size(), kReservedTokens + 2);
}

TEST(Vocab, MaxSizeFourKeepsOnlyReservedEntries) {
  const Vocab v = build_vocab({"a a b"}, 4);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(kUnkId), "[UNK]");
  EXPECT_EQ(v.id("a"), kUnkId);
}

TEST(Vocab, ReservedIds) {
  const Vocab v = build_vocab({"x"}, 10);
  EXPECT_EQ(v.token(kPadId), "[PAD]");
  EXPECT_EQ(v.token(kMaskId), "[MASK]");
  EXPECT_EQ(v.token(kClsId), "[CLS]");
}

TEST(Vocab, EncodeDecodeRoundTrip) {
  const auto lines = generate_toy_corpus(50, 2);
  const Vocab v = build_vocab(lines, 1000);
  for (const auto& line : lines) {
    const auto ids = v.encode(line);
    EXPECT_EQ(v.encode(v.decode(ids)), ids);
  }
  EXPECT_EQ(v.encode("zzzunseen")[0], kUnkId);
}

TEST(Vocab, EmptyCorpusRejected) {
  EXPECT_THROW(build_vocab({}, 10), InputError);
  EXPECT_THROW(build_vocab({"", "   "}, 10), InputError);
}

TEST(Vocab, SaveLoadRoundTrip) {
  TempDir dir;
  const Vocab v = build_vocab(generate_toy_corpus(30, 1), 200);
  v.save(dir.file("vocab.txt"));
  EXPECT_EQ(Vocab::load(dir.file("vocab.txt")).tokens(), v.tokens());
}

// --- Checkpoints -------------------------------------------------------------

TEST(Checkpoint, RoundTripBitExact) {
  TempDir dir;
  const ModelCheckpoint c = snapshot(Model::initialize(fixtures::tiny_config(), 3));
  save_checkpoint(dir.file("a.mcl"), c);
  // Only the architecture is stored; dropout and init scale are not.
  const ModelCheckpoint back = load_checkpoint(dir.file("a.mcl"));
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.config.canonical(), c.config.canonical());
  EXPECT_EQ(load_checkpoint(dir.file("a.mcl"), fixtures::tiny_config()).params, c.params);
  // restore -> snapshot is also exact.
  EXPECT_EQ(snapshot(restore(c)), c);
}

TEST(Checkpoint, FileSizeIsHeaderPlusFloats) {
  TempDir dir;
  const ModelCheckpoint c = snapshot(Model::initialize(fixtures::tiny_config(), 3));
  save_checkpoint(dir.file("a.mcl"), c);
  EXPECT_EQ(fs::file_size(dir.file("a.mcl")), checkpoint_header_size(c) + 4 * c.parameter_count());
  EXPECT_EQ(c.parameter_count(), Model::initialize(fixtures::tiny_config(), 1).parameter_count());
}

TEST(Checkpoint, LittleEndianMagicAndLayout) {
  TempDir dir;
  const ModelCheckpoint c = snapshot(Model::initialize(fixtures::tiny_config(), 3));
  save_checkpoint(dir.file("a.mcl"), c);
  std::ifstream in(dir.file("a.mcl"), std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(bytes.substr(0, 4), "MCL1");
  std::uint64_t digest = 0;
  for (int i = 7; i >= 0; --i) digest = (digest << 8) | static_cast<unsigned char>(bytes[4 + i]);
  EXPECT_EQ(digest, c.config.digest());
  // Last float of the file is the last value of the last parameter.
  const float last = c.params.back().values.back();
  std::uint32_t bits = 0;
  std::memcpy(&bits, &last, 4);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 4 + i]), (bits >> (8 * i)) & 0xff);
  }
}

TEST(Checkpoint, MismatchedConfigRefused) {
  TempDir dir;
  save_checkpoint(dir.file("a.mcl"), snapshot(Model::initialize(fixtures::tiny_config(), 3)));
  auto other = fixtures::tiny_config();
  other.hidden_size = 16;
  EXPECT_THROW(load_checkpoint(dir.file("a.mcl"), other), DigestError);
}

TEST(Checkpoint, TruncatedOrPaddedFileRejected) {
  TempDir dir;
  save_checkpoint(dir.file("a.mcl"), snapshot(Model::initialize(fixtures::tiny_config(), 3)));
  const auto size = fs::file_size(dir.file("a.mcl"));
  fs::copy_file(dir.file("a.mcl"), dir.file("b.mcl"));
  fs::resize_file(dir.file("b.mcl"), size - 3);
  EXPECT_THROW(load_checkpoint(dir.file("b.mcl")), FormatError);
  fs::resize_file(dir.file("b.mcl"), 10);
  EXPECT_THROW(load_checkpoint(dir.file("b.mcl")), FormatError);
  fs::resize_file(dir.file("b.mcl"), 0);
  fs::copy_file(dir.file("a.mcl"), dir.file("b.mcl"), fs::copy_options::overwrite_existing);
  { std::ofstream(dir.file("b.mcl"), std::ios::binary | std::ios::app) << "x"; }
  EXPECT_THROW(load_checkpoint(dir.file("b.mcl")), FormatError);
  write_text(dir.file("c.mcl"), "NOPE0000000000000000");
  EXPECT_THROW(load_checkpoint(dir.file("c.mcl")), FormatError);
  EXPECT_THROW(load_checkpoint(dir.file("missing.mcl")), std::runtime_error);
}

// --- Run configuration -------------------------------------------------------

TEST(RunConfig, ParsesKeysAndComments) {
  const RunConfig c = parse_run_config(
      "# toy\nvocab_size = 64\nhidden_size=16\nlambda = 20\nmask_rate = 0.2\nre_std = false\ncorpus = data/x.txt\n");
  EXPECT_EQ(c.encoder.vocab_size, 64u);
  EXPECT_EQ(c.encoder.hidden_size, 16u);
  EXPECT_EQ(c.train.lambda_disc, 20.0);
  EXPECT_EQ(c.train.rates.mask, 0.2);
  EXPECT_FALSE(c.train.courses.re_std);
  EXPECT_EQ(c.corpus_path, "data/x.txt");
}

TEST(RunConfig, TextRoundTrip) {
  RunConfig c;
  c.encoder = fixtures::tiny_config();
  c.train.seed = 9;
  c.train.loss_weights[3] = 0.5;
  c.corpus_path = "c.txt";
  const RunConfig back = parse_run_config(c.to_text());
  EXPECT_EQ(back.to_text(), c.to_text());
  EXPECT_EQ(back.encoder, c.encoder);
}

TEST(RunConfig, RejectsInvalidInput) {
  EXPECT_THROW(parse_run_config("hiden_size = 3\n"), ConfigError);
  EXPECT_THROW(parse_run_config("hidden_size = 16\nhidden_size = 32\n"), ConfigError);
  EXPECT_THROW(parse_run_config("mask_rate = 0.6\n").validate(), ConfigError);
  EXPECT_THROW(parse_run_config("lambda = 0\n").validate(), ConfigError);
  EXPECT_THROW(parse_run_config("lambda = -1\n").validate(), ConfigError);
  EXPECT_THROW(parse_run_config("hidden_size = many\n"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), std::runtime_error);
}

// --- Probe ---------------------------------------------------------------------

namespace {

struct ProbeFixture {
  Vocab vocab = build_vocab(generate_toy_corpus(300, 1), 128);
  EncoderConfig cfg = [] {
    auto c = fixtures::tiny_config();
    c.vocab_size = 128;
    c.hidden_size = 16;
    c.max_seq_len = 32;
    return c;
  }();
  Model model = Model::initialize(cfg, 21);
};

}  // namespace

TEST(Probe, RandomLabelsAtChance) {
  ProbeFixture f;
  const ProbeResult r = probe_train_eval(f.model, f.vocab, make_random_label_dataset(500, 12));
  EXPECT_EQ(r.train_size + r.test_size, 500u);
  EXPECT_NEAR(r.test_accuracy, 0.5, 0.1);
}

TEST(Probe, SingleClassRejected) {
  ProbeFixture f;
  auto data = make_random_label_dataset(20, 1);
  for (auto& d : data) d.label = 1;
  EXPECT_THROW(probe_train_eval(f.model, f.vocab, data), InputError);
}

TEST(Probe, InputStartsWithCls) {
  ProbeFixture f;
  const TokenSequence s = probe_input(f.vocab, "the cat sat on a lantern", 4);
  EXPECT_EQ(s.ids.front(), kClsId);
  EXPECT_EQ(s.size(), 4u);
}

TEST(ProbeData, PresenceDatasetBalancedAndConsistent) {
  const auto data = make_presence_dataset(200, 11, kProbeToken);
  std::size_t positives = 0;
  for (const auto& d : data) {
    const auto toks = tokenize(d.text);
    const bool has = std::find(toks.begin(), toks.end(), kProbeToken) != toks.end();
    EXPECT_EQ(has, d.label == 1) << d.text;
    positives += d.label;
  }
  EXPECT_EQ(positives, 100u);
}

TEST(ProbeData, SaveLoadRoundTrip) {
  TempDir dir;
  const auto data = make_presence_dataset(20, 11, kProbeToken);
  save_labeled(dir.file("p.tsv"), data);
  const auto back = load_labeled(dir.file("p.tsv"));
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back[i].text, data[i].text);
    EXPECT_EQ(back[i].label, data[i].label);
  }
}
