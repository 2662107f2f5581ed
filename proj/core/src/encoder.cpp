// SPDX-License-Identifier: Apache-2.0
#include "mcl/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

namespace {

// Model::embedding() hides the free op inside member functions.
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids) { return embedding(table, ids); }

}  // namespace

// --- EncoderConfig ---------------------------------------------------------

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("encoder config: " + what); };
  if (vocab_size <= kReservedTokens) fail("vocab_size must exceed the reserved tokens");
  if (hidden_size == 0 || attention_heads == 0) fail("hidden_size and attention_heads must be positive");
  if (hidden_size % attention_heads != 0) fail("hidden_size must be divisible by attention_heads");
  if (generator_layers == 0 || discriminator_layers == 0) fail("both stacks need at least one layer");
  if (generator_layers > discriminator_layers) fail("generator must not be deeper than the discriminator");
  if (ffn_inner_size == 0) fail("ffn_inner_size must be positive");
  if (relative_buckets < 4 || relative_buckets % 2 != 0) fail("relative_buckets must be even and at least 4");
  if (max_relative_position <= relative_buckets / 4) fail("max_relative_position too small for the bucket count");
  if (max_seq_len < 2) fail("max_seq_len must be at least 2");
  if (!(dropout_rate >= Real{0} && dropout_rate < Real{1})) fail("dropout_rate must lie in [0, 1)");
  if (!(init_stddev > Real{0})) fail("init_stddev must be positive");
}

std::string EncoderConfig::canonical() const {
  std::ostringstream out;
  out << "vocab_size=" << vocab_size << ";hidden_size=" << hidden_size << ";generator_layers=" << generator_layers
      << ";discriminator_layers=" << discriminator_layers << ";attention_heads=" << attention_heads
      << ";ffn_inner_size=" << ffn_inner_size << ";relative_buckets=" << relative_buckets
      << ";max_relative_position=" << max_relative_position << ";max_seq_len=" << max_seq_len;
  return out.str();
}

std::uint64_t EncoderConfig::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

EncoderConfig EncoderConfig::from_canonical(const std::string& text) {
  EncoderConfig cfg;
  const std::map<std::string, std::size_t*> fields = {
      {"vocab_size", &cfg.vocab_size},
      {"hidden_size", &cfg.hidden_size},
      {"generator_layers", &cfg.generator_layers},
      {"discriminator_layers", &cfg.discriminator_layers},
      {"attention_heads", &cfg.attention_heads},
      {"ffn_inner_size", &cfg.ffn_inner_size},
      {"relative_buckets", &cfg.relative_buckets},
      {"max_relative_position", &cfg.max_relative_position},
      {"max_seq_len", &cfg.max_seq_len},
  };
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("malformed encoder config entry '" + item + "'");
    auto it = fields.find(item.substr(0, eq));
    if (it == fields.end()) throw FormatError("unknown encoder config key '" + item.substr(0, eq) + "'");
    try {
      *it->second = static_cast<std::size_t>(std::stoull(item.substr(eq + 1)));
    } catch (const std::exception&) {
      throw FormatError("malformed encoder config value '" + item + "'");
    }
  }
  return cfg;
}

// --- Relative position -----------------------------------------------------

std::size_t relative_position_bucket(std::ptrdiff_t distance, std::size_t num_buckets, std::size_t max_distance) {
  const std::size_t half = num_buckets / 2;
  std::size_t base = 0;
  // Offsets to the left (key before query) use the upper half.
  std::ptrdiff_t n = -distance;
  if (n < 0) {
    base = half;
    n = -n;
  }
  const std::size_t max_exact = half / 2;
  const auto magnitude = static_cast<std::size_t>(n);
  if (magnitude < max_exact) return base + magnitude;
  const double ratio = std::log(static_cast<double>(magnitude) / static_cast<double>(max_exact)) /
                       std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact));
  const auto large = max_exact + static_cast<std::size_t>(ratio * static_cast<double>(half - max_exact));
  return base + std::min(large, half - 1);
}

const char* to_string(DetectionHead head) {
  switch (head) {
    case DetectionHead::kRtd:
      return "rtd";
    case DetectionHead::kStd:
      return "std";
    case DetectionHead::kItd:
      return "itd";
  }
  return "?";
}

Packing pack(std::span<const TokenSequence> batch) {
  Packing p;
  p.offsets.reserve(batch.size());
  p.lengths.reserve(batch.size());
  for (const auto& seq : batch) {
    p.offsets.push_back(p.rows);
    p.lengths.push_back(seq.size());
    p.rows += seq.size();
  }
  return p;
}

// --- Model -----------------------------------------------------------------

namespace {

Tensor param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor ones(std::size_t n) { return Tensor::from_values({n}, std::vector<Real>(n, Real{1}), true); }

StackParams make_stack(const EncoderConfig& c, std::size_t layers) {
  const std::size_t h = c.hidden_size, f = c.ffn_inner_size;
  StackParams s;
  s.embedding_norm_gain = ones(h);
  s.embedding_norm_bias = param({h});
  s.relative_bias = param({c.relative_buckets, c.attention_heads});
  for (std::size_t i = 0; i < layers; ++i) {
    LayerParams l;
    l.query_weight = param({h, h});
    l.query_bias = param({h});
    l.key_weight = param({h, h});
    l.key_bias = param({h});
    l.value_weight = param({h, h});
    l.value_bias = param({h});
    l.output_weight = param({h, h});
    l.output_bias = param({h});
    l.attention_norm_gain = ones(h);
    l.attention_norm_bias = param({h});
    l.ffn_in_weight = param({h, f});
    l.ffn_in_bias = param({f});
    l.ffn_out_weight = param({f, h});
    l.ffn_out_bias = param({h});
    l.ffn_norm_gain = ones(h);
    l.ffn_norm_bias = param({h});
    s.layers.push_back(std::move(l));
  }
  return s;
}

void append_stack(std::vector<NamedTensor>& out, const std::string& prefix, const StackParams& s) {
  out.emplace_back(prefix + ".embedding_norm.gain", s.embedding_norm_gain);
  out.emplace_back(prefix + ".embedding_norm.bias", s.embedding_norm_bias);
  out.emplace_back(prefix + ".relative_bias", s.relative_bias);
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    const std::string p = prefix + ".layer" + std::to_string(i);
    out.emplace_back(p + ".attention.query.weight", l.query_weight);
    out.emplace_back(p + ".attention.query.bias", l.query_bias);
    out.emplace_back(p + ".attention.key.weight", l.key_weight);
    out.emplace_back(p + ".attention.key.bias", l.key_bias);
    out.emplace_back(p + ".attention.value.weight", l.value_weight);
    out.emplace_back(p + ".attention.value.bias", l.value_bias);
    out.emplace_back(p + ".attention.output.weight", l.output_weight);
    out.emplace_back(p + ".attention.output.bias", l.output_bias);
    out.emplace_back(p + ".attention_norm.gain", l.attention_norm_gain);
    out.emplace_back(p + ".attention_norm.bias", l.attention_norm_bias);
    out.emplace_back(p + ".ffn.in.weight", l.ffn_in_weight);
    out.emplace_back(p + ".ffn.in.bias", l.ffn_in_bias);
    out.emplace_back(p + ".ffn.out.weight", l.ffn_out_weight);
    out.emplace_back(p + ".ffn.out.bias", l.ffn_out_bias);
    out.emplace_back(p + ".ffn_norm.gain", l.ffn_norm_gain);
    out.emplace_back(p + ".ffn_norm.bias", l.ffn_norm_bias);
  }
}

bool is_random_init(const std::string& name) {
  return name == "embedding" || name.ends_with(".weight");
}

Tensor maybe_dropout(const Tensor& x, Real rate, const ForwardContext& ctx) {
  if (!ctx.training || rate == Real{0}) return x;
  if (ctx.rng == nullptr) throw ContractError("training forward pass with dropout needs an Rng");
  return dropout(x, rate, *ctx.rng);
}

}  // namespace

Model Model::initialize(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  m.embedding_ = param({config.vocab_size, config.hidden_size});
  m.lm_bias_ = param({config.vocab_size});
  m.generator_ = make_stack(config, config.generator_layers);
  m.discriminator_ = make_stack(config, config.discriminator_layers);
  for (HeadParams* h : {&m.rtd_head_, &m.std_head_, &m.itd_head_}) {
    h->weight = param({config.hidden_size, 1});
    h->bias = param({1});
  }
  Rng rng(seed);
  for (auto& [name, tensor] : m.named_parameters()) {
    if (!is_random_init(name)) continue;
    for (Real& v : tensor.mutable_values()) v = static_cast<Real>(rng.normal()) * config.init_stddev;
  }
  const std::size_t span = config.max_seq_len - 1;
  m.bucket_by_distance_.resize(2 * span + 1);
  for (std::size_t i = 0; i < m.bucket_by_distance_.size(); ++i) {
    const auto d = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(span);
    m.bucket_by_distance_[i] =
        static_cast<std::int32_t>(relative_position_bucket(d, config.relative_buckets, config.max_relative_position));
  }
  return m;
}

Model Model::clone() const {
  Model m = initialize(config_, 0);
  auto src = named_parameters();
  auto dst = m.named_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto values = src[i].second.values();
    std::copy(values.begin(), values.end(), dst[i].second.mutable_values().begin());
  }
  return m;
}

const HeadParams& Model::head(DetectionHead h) const {
  switch (h) {
    case DetectionHead::kRtd:
      return rtd_head_;
    case DetectionHead::kStd:
      return std_head_;
    case DetectionHead::kItd:
      return itd_head_;
  }
  throw ContractError("unknown detection head");
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> out;
  out.emplace_back("embedding", embedding_);
  out.emplace_back("lm_bias", lm_bias_);
  append_stack(out, "generator", generator_);
  append_stack(out, "discriminator", discriminator_);
  for (auto h : {DetectionHead::kRtd, DetectionHead::kStd, DetectionHead::kItd}) {
    const std::string p = std::string("head.") + to_string(h);
    out.emplace_back(p + ".weight", head(h).weight);
    out.emplace_back(p + ".bias", head(h).bias);
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

AttentionLayout Model::layout_for(std::span<const TokenSequence> batch, const Packing& packing) const {
  AttentionLayout layout;
  layout.offsets = packing.offsets;
  layout.lengths = packing.lengths;
  layout.heads = config_.attention_heads;
  layout.bucket_by_distance = bucket_by_distance_;
  layout.max_distance = config_.max_seq_len - 1;
  layout.key_valid.reserve(packing.rows);
  for (const auto& seq : batch) {
    layout.key_valid.insert(layout.key_valid.end(), seq.attention_mask.begin(), seq.attention_mask.end());
  }
  return layout;
}

Encoded Model::encode(Stack which, std::span<const TokenSequence> batch, const ForwardContext& ctx) const {
  std::vector<TokenId> ids;
  for (const auto& seq : batch) {
    if (seq.size() > config_.max_seq_len) {
      throw InputError("sequence of length " + std::to_string(seq.size()) + " exceeds max_seq_len " +
                       std::to_string(config_.max_seq_len));
    }
    if (seq.attention_mask.size() != seq.ids.size()) throw InputError("attention mask length differs from ids");
    ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
  }
  Encoded result;
  result.packing = pack(batch);
  const AttentionLayout layout = layout_for(batch, result.packing);
  const StackParams& s = stack(which);
  const Real rate = config_.dropout_rate;

  Tensor x = embedding_lookup(embedding_, ids);
  x = layer_norm(x, s.embedding_norm_gain, s.embedding_norm_bias);
  x = maybe_dropout(x, rate, ctx);
  for (const auto& l : s.layers) {
    Tensor q = add_bias(matmul(x, l.query_weight), l.query_bias);
    Tensor k = add_bias(matmul(x, l.key_weight), l.key_bias);
    Tensor v = add_bias(matmul(x, l.value_weight), l.value_bias);
    Tensor a = attention(q, k, v, s.relative_bias, layout);
    Tensor o = add_bias(matmul(a, l.output_weight), l.output_bias);
    x = layer_norm(add(x, maybe_dropout(o, rate, ctx)), l.attention_norm_gain, l.attention_norm_bias);
    Tensor f = gelu(add_bias(matmul(x, l.ffn_in_weight), l.ffn_in_bias));
    f = add_bias(matmul(f, l.ffn_out_weight), l.ffn_out_bias);
    x = layer_norm(add(x, maybe_dropout(f, rate, ctx)), l.ffn_norm_gain, l.ffn_norm_bias);
  }
  result.hidden = std::move(x);
  return result;
}

Tensor Model::encode_generator(const TokenSequence& tokens, const ForwardContext& ctx) const {
  return encode(Stack::kGenerator, std::span(&tokens, 1), ctx).hidden;
}

Tensor Model::encode_discriminator(const TokenSequence& tokens, const ForwardContext& ctx) const {
  return encode(Stack::kDiscriminator, std::span(&tokens, 1), ctx).hidden;
}

Tensor Model::lm_logits(const Tensor& hidden, std::span<const std::size_t> rows) const {
  return add_bias(matmul_transposed(gather_rows(hidden, rows), embedding_), lm_bias_);
}

Tensor Model::detection_logits(const Tensor& hidden, DetectionHead h) const {
  const HeadParams& p = head(h);
  Tensor logits = add_bias(matmul(hidden, p.weight), p.bias);
  return reshape(logits, {hidden.rows()});
}

std::vector<Real> Model::attention_bias_matrix(Stack which, std::size_t length, std::size_t head) const {
  if (length > config_.max_seq_len) throw InputError("length exceeds max_seq_len");
  if (head >= config_.attention_heads) throw IndexError("attention head out of range");
  const auto table = stack(which).relative_bias.values();
  const std::size_t span = config_.max_seq_len - 1;
  std::vector<Real> out(length * length);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j < length; ++j) {
      const auto d = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i);
      const auto bucket = static_cast<std::size_t>(bucket_by_distance_[static_cast<std::size_t>(d + static_cast<std::ptrdiff_t>(span))]);
      out[i * length + j] = table[bucket * config_.attention_heads + head];
    }
  }
  return out;
}

MCL_END_NAMESPACE
