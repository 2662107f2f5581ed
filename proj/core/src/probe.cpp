// SPDX-License-Identifier: Apache-2.0
#include "mcl/probe.hpp"

#include <algorithm>
#include <cmath>

#include "mcl/errors.hpp"
#include "mcl/rng.hpp"
#include "mcl/trainer.hpp"

MCL_BEGIN_NAMESPACE

TokenSequence probe_input(const Vocab& vocab, const std::string& text, std::size_t max_len) {
  std::vector<TokenId> ids{kClsId};
  for (TokenId id : vocab.encode(text)) {
    if (ids.size() >= max_len) break;
    ids.push_back(id);
  }
  return TokenSequence::from_ids(std::move(ids));
}

std::vector<double> cls_features(const Model& model, const std::vector<TokenSequence>& inputs) {
  const std::size_t hidden = model.config().hidden_size;
  std::vector<double> features;
  features.reserve(inputs.size() * hidden);
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < inputs.size(); start += kChunk) {
    const std::size_t end = std::min(inputs.size(), start + kChunk);
    const std::span<const TokenSequence> chunk(inputs.data() + start, end - start);
    const Encoded enc = model.encode(Stack::kDiscriminator, chunk, ForwardContext::inference());
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto row = enc.hidden.values().subspan(enc.packing.row(b, 0) * hidden, hidden);
      features.insert(features.end(), row.begin(), row.end());
    }
  }
  return features;
}

namespace {

struct Split {
  std::vector<std::size_t> train, test;
};

Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x9b);
  std::vector<std::size_t> order = rng.permutation(n);
  const auto test_n = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  Split s;
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(test_n));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(test_n), order.end());
  return s;
}

double logistic(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

ProbeResult frozen_probe(const Model& model, const std::vector<TokenSequence>& inputs, const std::vector<int>& labels,
                         const Split& split, const ProbeOptions& options) {
  const std::size_t h = model.config().hidden_size;
  const std::vector<double> raw = cls_features(model, inputs);
  std::vector<double> mean(h, 0.0), inv_std(h, 0.0);
  for (std::size_t i : split.train) {
    for (std::size_t d = 0; d < h; ++d) mean[d] += raw[i * h + d];
  }
  for (double& m : mean) m /= static_cast<double>(split.train.size());
  for (std::size_t i : split.train) {
    for (std::size_t d = 0; d < h; ++d) inv_std[d] += (raw[i * h + d] - mean[d]) * (raw[i * h + d] - mean[d]);
  }
  for (double& s : inv_std) {
    const double sd = std::sqrt(s / static_cast<double>(split.train.size()));
    s = sd > 1e-12 ? 1.0 / sd : 0.0;
  }
  auto feature = [&](std::size_t i, std::size_t d) { return (raw[i * h + d] - mean[d]) * inv_std[d]; };

  std::vector<double> w(h, 0.0), grad(h);
  double bias = 0;
  const double n = static_cast<double>(split.train.size());
  for (std::size_t it = 0; it < options.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0;
    for (std::size_t i : split.train) {
      double z = bias;
      for (std::size_t d = 0; d < h; ++d) z += w[d] * feature(i, d);
      const double r = logistic(z) - labels[i];
      for (std::size_t d = 0; d < h; ++d) grad[d] += r * feature(i, d);
      grad_b += r;
    }
    for (std::size_t d = 0; d < h; ++d) w[d] -= options.step_size * (grad[d] / n + options.l2 * w[d]);
    bias -= options.step_size * grad_b / n;
  }
  auto accuracy = [&](const std::vector<std::size_t>& idx) {
    std::size_t correct = 0;
    for (std::size_t i : idx) {
      double z = bias;
      for (std::size_t d = 0; d < h; ++d) z += w[d] * feature(i, d);
      correct += (z >= 0 ? 1 : 0) == labels[i];
    }
    return idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
  };
  return {accuracy(split.train), accuracy(split.test), split.train.size(), split.test.size()};
}

ProbeResult fine_tune_probe(const Model& source, const std::vector<TokenSequence>& inputs,
                            const std::vector<int>& labels, const Split& split, const ProbeOptions& options) {
  Model model = source.clone();
  const std::size_t h = model.config().hidden_size;
  Rng init = Rng::derive(options.seed, 0x9c);
  std::vector<Real> w0(h);
  for (Real& v : w0) v = static_cast<Real>(0.02 * init.normal());
  Tensor weight = Tensor::from_values({h, 1}, std::move(w0), true);
  Tensor bias = Tensor::zeros({1}, true);

  std::vector<NamedTensor> params;
  for (const auto& p : model.named_parameters()) {
    if (p.first.starts_with("discriminator.") || p.first == "embedding") params.push_back(p);
  }
  params.emplace_back("probe.weight", weight);
  params.emplace_back("probe.bias", bias);
  AdamW optimizer(params, AdamW::Options{0.9, 0.999, 1e-8, 0.0});

  auto logits_for = [&](std::span<const TokenSequence> batch, const ForwardContext& ctx) {
    const Encoded enc = model.encode(Stack::kDiscriminator, batch, ctx);
    std::vector<std::size_t> rows;
    for (std::size_t b = 0; b < batch.size(); ++b) rows.push_back(enc.packing.row(b, 0));
    const Tensor z = add_bias(matmul(gather_rows(enc.hidden, rows), weight), bias);
    return reshape(z, {batch.size()});
  };

  Rng order_rng = Rng::derive(options.seed, 0x9d);
  Rng dropout_rng = Rng::derive(options.seed, 0x9e);
  std::size_t t = 0;
  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::vector<TokenSequence> batch;
      std::vector<std::uint8_t> y;
      std::vector<std::size_t> positions;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(inputs[order[k]]);
        y.push_back(static_cast<std::uint8_t>(labels[order[k]]));
        positions.push_back(k - start);
      }
      const Tensor loss = sigmoid_bce(logits_for(batch, {true, &dropout_rng}), y, positions);
      model.zero_grad();
      weight.zero_grad();
      bias.zero_grad();
      backward(loss);
      optimizer.step(++t, options.fine_tune_lr);
    }
  }
  auto accuracy = [&](const std::vector<std::size_t>& idx) {
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += 32) {
      const std::size_t end = std::min(idx.size(), start + 32);
      std::vector<TokenSequence> batch;
      for (std::size_t k = start; k < end; ++k) batch.push_back(inputs[idx[k]]);
      const Tensor z = logits_for(batch, ForwardContext::inference());
      for (std::size_t k = start; k < end; ++k) correct += (z.values()[k - start] >= 0 ? 1 : 0) == labels[idx[k]];
    }
    return idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
  };
  return {accuracy(split.train), accuracy(split.test), split.train.size(), split.test.size()};
}

}  // namespace

ProbeResult probe_train_eval(const Model& model, const Vocab& vocab, const std::vector<LabeledSentence>& data,
                             const ProbeOptions& options) {
  std::vector<TokenSequence> inputs;
  std::vector<int> labels;
  bool seen[2] = {false, false};
  for (const auto& s : data) {
    if (s.label != 0 && s.label != 1) throw InputError("probe labels must be 0 or 1");
    seen[s.label] = true;
    inputs.push_back(probe_input(vocab, s.text, model.config().max_seq_len));
    inputs.back().validate(model.config().vocab_size);
    labels.push_back(s.label);
  }
  if (!seen[0] || !seen[1]) throw InputError("probe dataset has a single class");
  if (!(options.test_fraction > 0 && options.test_fraction < 1)) throw ConfigError("test_fraction must lie in (0, 1)");
  const Split split = split_indices(data.size(), options.test_fraction, options.seed);
  return options.fine_tune ? fine_tune_probe(model, inputs, labels, split, options)
                           : frozen_probe(model, inputs, labels, split, options);
}

MCL_END_NAMESPACE
