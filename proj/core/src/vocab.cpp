// SPDX-License-Identifier: Apache-2.0
#include "mcl/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "mcl/errors.hpp"

MCL_BEGIN_NAMESPACE

namespace {

const char* const kReservedSpellings[kReservedTokens] = {"[PAD]", "[MASK]", "[CLS]", "[UNK]"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(unsigned char c) {
  return (c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) || (c >= 0x5b && c <= 0x60) || (c >= 0x7b && c <= 0x7e);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : line) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      word.push_back(ch);
    }
  }
  flush();
  return out;
}

Vocab::Vocab() {
  for (const char* s : kReservedSpellings) add(s);
}

void Vocab::add(const std::string& token) {
  if (!index_.emplace(token, static_cast<TokenId>(tokens_.size())).second) {
    throw InputError("duplicate vocabulary entry '" + token + "'");
  }
  tokens_.push_back(token);
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::string_view line) const {
  std::vector<TokenId> ids;
  for (const auto& t : tokenize(line)) ids.push_back(id(t));
  return ids;
}

std::string Vocab::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write vocabulary '" + path + "'");
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open vocabulary '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  if (lines.size() < kReservedTokens) throw FormatError("vocabulary '" + path + "' lacks the reserved entries");
  for (std::size_t i = 0; i < kReservedTokens; ++i) {
    if (lines[i] != kReservedSpellings[i]) throw FormatError("vocabulary '" + path + "' has wrong reserved entries");
  }
  return from_tokens({lines.begin() + kReservedTokens, lines.end()});
}

Vocab build_vocab(const std::vector<std::string>& lines, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines) {
    for (auto& t : tokenize(line)) ++counts[t];
  }
  if (counts.empty()) throw InputError("corpus has no tokens");
  if (max_size < kReservedTokens) throw ConfigError("vocabulary size must cover the reserved entries");
  const Vocab reserved;
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [t, c] : counts) {
    if (!reserved.contains(t)) ranked.emplace_back(t, c);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < ranked.size() && kept.size() + kReservedTokens < max_size; ++i) {
    kept.push_back(ranked[i].first);
  }
  return Vocab::from_tokens(kept);
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

Vocab build_vocab_from_file(const std::string& corpus_path, std::size_t max_size) {
  return build_vocab(read_lines(corpus_path), max_size);
}

MCL_END_NAMESPACE
