// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "mcl/checkpoint.hpp"
#include "mcl/encoder.hpp"
#include "mcl/pretrain.hpp"
#include "mcl/soups.hpp"
#include "mcl/toy_corpus.hpp"
#include "mcl/trainer.hpp"
#include "mcl/vocab.hpp"

using namespace mcl;

namespace {

// Same architecture as configs/toy.cfg.
EncoderConfig toy_encoder() {
  EncoderConfig c;
  c.vocab_size = 128;
  c.hidden_size = 32;
  c.generator_layers = 1;
  c.discriminator_layers = 2;
  c.attention_heads = 2;
  c.ffn_inner_size = 64;
  c.relative_buckets = 32;
  c.max_relative_position = 128;
  c.max_seq_len = 32;
  c.dropout_rate = 0;
  return c;
}

const std::vector<TokenSequence>& toy_sequences() {
  static const std::vector<TokenSequence> seqs = [] {
    const auto lines = generate_toy_corpus(400, 1);
    const Vocab vocab = build_vocab(lines, 128);
    return encode_corpus(lines, vocab, toy_encoder(), CorruptionRates{});
  }();
  return seqs;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = Tensor::from_values({n, n}, std::vector<Real>(n * n, Real(0.5)));
  const Tensor b = Tensor::from_values({n, n}, std::vector<Real>(n * n, Real(0.25)));
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128);

void BM_DiscriminatorForward(benchmark::State& state) {
  const Model model = Model::initialize(toy_encoder(), 1);
  const auto batch = sample_batch(toy_sequences(), static_cast<std::size_t>(state.range(0)), 1, 0);
  for (auto _ : state) {
    const Encoded e = model.encode(Stack::kDiscriminator, batch, ForwardContext::inference());
    benchmark::DoNotOptimize(e.hidden.values().data());
  }
}
BENCHMARK(BM_DiscriminatorForward)->Arg(1)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_TrainStep(benchmark::State& state) {
  Model model = Model::initialize(toy_encoder(), 1);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.total_steps = 1000000;
  if (state.range(0) == 0) tc.courses = {false, false, false, false, false, false};
  Trainer trainer(model, tc);
  std::size_t step = 0;
  for (auto _ : state) {
    trainer.train_step(sample_batch(toy_sequences(), tc.batch_size, tc.seed, step++));
  }
}
// 0: MLM + RTD only, 1: all courses and corrections.
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_MergeCheckpoints(benchmark::State& state) {
  std::vector<ModelCheckpoint> cks;
  for (std::uint64_t s = 0; s < 14; ++s) cks.push_back(snapshot(Model::initialize(toy_encoder(), s)));
  const SoupWeights w = SoupWeights::uniform(cks.size());
  for (auto _ : state) benchmark::DoNotOptimize(merge_checkpoints(cks, w).params.data());
}
BENCHMARK(BM_MergeCheckpoints)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
