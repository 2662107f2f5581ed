// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mcl/real.hpp"
#include "mcl/tokens.hpp"

MCL_BEGIN_NAMESPACE

/// Splits on ASCII whitespace; every ASCII punctuation character is its own
/// token. Bytes >= 0x80 are word characters, so the split does not depend on
/// the locale.
std::vector<std::string> tokenize(std::string_view line);

class Vocab {
 public:
  /// Reserved entries only: [PAD] [MASK] [CLS] [UNK].
  Vocab();

  /// Reserved entries followed by `tokens` in order. Throws InputError on a
  /// duplicate or a reserved spelling.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  /// UNK for unknown tokens.
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  std::vector<TokenId> encode(std::string_view line) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  /// One token per line, in id order.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Frequency-ranked vocabulary (ties broken by byte order) truncated to
/// max_size entries including the reserved ones. Throws InputError on an
/// empty corpus.
Vocab build_vocab(const std::vector<std::string>& lines, std::size_t max_size);
Vocab build_vocab_from_file(const std::string& corpus_path, std::size_t max_size);

/// Non-empty lines of a UTF-8 text file.
std::vector<std::string> read_lines(const std::string& path);

MCL_END_NAMESPACE
