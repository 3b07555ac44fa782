// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tckit/error.hpp"
#include "tckit/utf8.hpp"

namespace tckit {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
inline constexpr std::string_view kNames[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
}  // namespace special

// Character-level vocabulary: one token per Unicode scalar value, after the
// five reserved ids.
class Vocab {
 public:
  Vocab() {
    for (std::string_view name : special::kNames) tokens_.emplace_back(name);
  }

  // Rebuilds from an ordered token list (as stored in checkpoints).
  static Vocab from_tokens(std::span<const std::string> tokens) {
    if (tokens.size() < static_cast<std::size_t>(special::kCount)) {
      throw Error("vocabulary is missing reserved tokens");
    }
    Vocab v;
    for (TokenId i = 0; i < special::kCount; ++i) {
      if (tokens[static_cast<std::size_t>(i)] != special::kNames[i]) {
        throw Error("vocabulary reserved token mismatch at id " + std::to_string(i));
      }
    }
    for (std::size_t i = special::kCount; i < tokens.size(); ++i) {
      const auto cps = utf8::decode(tokens[i]);
      if (cps.size() != 1) throw Error("vocabulary entry is not a single character: " + tokens[i]);
      if (!v.add(cps[0])) throw Error("duplicate vocabulary entry: " + tokens[i]);
    }
    return v;
  }

  // Adds a character; returns false when already present.
  bool add(char32_t cp) {
    if (ids_.contains(cp)) return false;
    ids_.emplace(cp, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(utf8::encode(cp));
    return true;
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::optional<TokenId> find(char32_t cp) const {
    auto it = ids_.find(cp);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(char32_t cp) const { return find(cp).value_or(special::kUnk); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw Error("token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<char32_t, TokenId> ids_;
};

inline std::vector<TokenId> encode(const Vocab& v, std::string_view text) {
  std::vector<TokenId> ids;
  for (char32_t cp : utf8::decode(text)) ids.push_back(v.id(cp));
  return ids;
}

// Special ids decode to their bracketed names.
inline std::string decode(const Vocab& v, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) out += v.token(id);
  return out;
}

// Accumulates characters in first-occurrence order. Once max_size is reached
// further characters are dropped and will encode as UNK.
class VocabBuilder {
 public:
  explicit VocabBuilder(std::size_t max_size = 0) : max_size_(max_size) {}

  VocabBuilder& add_text(std::string_view text) {
    for (char32_t cp : utf8::decode(text)) {
      if (max_size_ != 0 && vocab_.size() >= max_size_) break;
      vocab_.add(cp);
    }
    return *this;
  }

  Vocab build() const { return vocab_; }

 private:
  Vocab vocab_;
  std::size_t max_size_;
};

}  // namespace tckit
