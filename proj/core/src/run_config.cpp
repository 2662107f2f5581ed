// SPDX-License-Identifier: Apache-2.0
#include "mcl/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string number_text(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("'" + key + "' needs an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' needs a number, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + key + "' needs true or false, got '" + v + "'");
}

std::map<std::string, Field> fields_of(RunConfig& c) {
  std::map<std::string, Field> f;
  auto size_field = [&](const std::string& key, auto& ref) {
    f[key] = {[&ref, key](const std::string& v) { ref = static_cast<std::remove_reference_t<decltype(ref)>>(parse_size(key, v)); },
              [&ref] { return std::to_string(ref); }};
  };
  auto real_field = [&](const std::string& key, auto& ref) {
    f[key] = {[&ref, key](const std::string& v) { ref = static_cast<std::remove_reference_t<decltype(ref)>>(parse_double(key, v)); },
              [&ref] { return number_text(static_cast<double>(ref)); }};
  };
  auto bool_field = [&](const std::string& key, bool& ref) {
    f[key] = {[&ref, key](const std::string& v) { ref = parse_bool(key, v); },
              [&ref] { return std::string(ref ? "true" : "false"); }};
  };
  auto text_field = [&](const std::string& key, std::string& ref) {
    f[key] = {[&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
  };
  EncoderConfig& e = c.encoder;
  size_field("vocab_size", e.vocab_size);
  size_field("hidden_size", e.hidden_size);
  size_field("generator_layers", e.generator_layers);
  size_field("discriminator_layers", e.discriminator_layers);
  size_field("attention_heads", e.attention_heads);
  size_field("ffn_inner_size", e.ffn_inner_size);
  size_field("relative_buckets", e.relative_buckets);
  size_field("max_relative_position", e.max_relative_position);
  size_field("max_seq_len", e.max_seq_len);
  real_field("dropout_rate", e.dropout_rate);
  real_field("init_stddev", e.init_stddev);
  TrainConfig& t = c.train;
  real_field("lambda", t.lambda_disc);
  real_field("learning_rate", t.learning_rate);
  size_field("warmup_steps", t.warmup_steps);
  size_field("total_steps", t.total_steps);
  size_field("batch_size", t.batch_size);
  real_field("adam_beta1", t.adam_beta1);
  real_field("adam_beta2", t.adam_beta2);
  real_field("adam_epsilon", t.adam_epsilon);
  real_field("grad_clip_norm", t.grad_clip_norm);
  real_field("weight_decay", t.weight_decay);
  size_field("seed", t.seed);
  size_field("correction_start_step", t.correction_start_step);
  real_field("mask_rate", t.rates.mask);
  real_field("swap_rate", t.rates.swap);
  real_field("insert_rate", t.rates.insert);
  bool_field("std_course", t.courses.std_course);
  bool_field("itd_course", t.courses.itd_course);
  bool_field("re_mlm", t.courses.re_mlm);
  bool_field("re_rtd", t.courses.re_rtd);
  bool_field("re_slm", t.courses.re_slm);
  bool_field("re_std", t.courses.re_std);
  for (LossKind kind : kAllLosses) {
    real_field(std::string("weight_") + to_string(kind), t.loss_weights[static_cast<std::size_t>(kind)]);
  }
  text_field("corpus", c.corpus_path);
  bool_field("prepend_cls", c.prepend_cls);
  text_field("output_dir", c.output_dir);
  size_field("checkpoint_every", c.checkpoint_every);
  size_field("log_every", c.log_every);
  return f;
}

}  // namespace

void RunConfig::validate() const {
  encoder.validate();
  train.validate();
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::string out;
  for (const auto& [key, field] : fields_of(copy)) out += key + " = " + field.get() + "\n";
  return out;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  auto fields = fields_of(c);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    seen[key] = line_no;
    it->second.set(value);
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

MCL_END_NAMESPACE
