#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "templates.hpp"

namespace sdp {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

enum class Special : std::uint8_t { Pad, Eos, Tutor, Student, Eot, HalOpen, HalClose };

inline constexpr std::size_t kNumSpecials = 7;
inline constexpr std::array<Special, kNumSpecials> kSpecialOrder = {
    Special::Pad, Special::Eos, Special::Tutor, Special::Student,
    Special::Eot, Special::HalOpen, Special::HalClose};

inline constexpr std::string_view special_role_name(Special s) {
  switch (s) {
    case Special::Pad: return "PAD";
    case Special::Eos: return "EOS";
    case Special::Tutor: return "TUTOR";
    case Special::Student: return "STUDENT";
    case Special::Eot: return "EOT";
    case Special::HalOpen: return "HAL_OPEN";
    case Special::HalClose: return "HAL_CLOSE";
  }
  return "";
}

inline constexpr std::string_view default_special_string(Special s) {
  switch (s) {
    case Special::Pad: return "<pad>";
    case Special::Eos: return "<eos>";
    case Special::Tutor: return "<tutor>";
    case Special::Student: return "<student>";
    case Special::Eot: return "<eot>";
    case Special::HalOpen: return "[hal]";
    case Special::HalClose: return "[/hal]";
  }
  return "";
}

// Closed word-level vocabulary. Immutable after construction.
class Vocab {
 public:
  Vocab() = default;

  // Validates density, uniqueness and the special-role map.
  Vocab(std::vector<std::string> tokens, std::array<TokenId, kNumSpecials> special_ids)
      : tokens_(std::move(tokens)), special_ids_(special_ids) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\r\n") != std::string::npos) {
        throw InvalidSpec("vocabulary token " + std::to_string(i) + " is empty or contains whitespace");
      }
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
        throw InvalidSpec("duplicate vocabulary token '" + tokens_[i] + "'");
      }
    }
    std::vector<bool> seen(tokens_.size(), false);
    for (TokenId id : special_ids_) {
      if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw InvalidSpec("special id out of range");
      }
      if (seen[static_cast<std::size_t>(id)]) throw InvalidSpec("two special roles share an id");
      seen[static_cast<std::size_t>(id)] = true;
    }
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::array<TokenId, kNumSpecials>& special_ids() const noexcept { return special_ids_; }

  TokenId id(Special s) const noexcept { return special_ids_[static_cast<std::size_t>(s)]; }
  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) throw UnknownToken(std::string(token));
    return it->second;
  }
  bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

  bool is_special(TokenId id) const noexcept {
    return std::find(special_ids_.begin(), special_ids_.end(), id) != special_ids_.end();
  }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw InvalidId(static_cast<std::size_t>(id < 0 ? tokens_.size() : id), tokens_.size());
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  TokenIds encode(std::string_view text) const {
    TokenIds ids;
    for (const auto& unit : split_units(text)) ids.push_back(id(unit));
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += ' ';
      out += token(ids[i]);
    }
    return out;
  }

  friend bool operator==(const Vocab& l, const Vocab& r) {
    return l.tokens_ == r.tokens_ && l.special_ids_ == r.special_ids_;
  }

 private:
  std::vector<std::string> tokens_;
  std::array<TokenId, kNumSpecials> special_ids_{};
  std::unordered_map<std::string, TokenId> index_;
};

// Specials first in fixed order, then digits, the minus sign and template
// words, sorted lexicographically.
inline Vocab build_vocab(const Templates& templates) {
  std::vector<std::string> tokens;
  std::array<TokenId, kNumSpecials> special_ids{};
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    tokens.emplace_back(default_special_string(kSpecialOrder[i]));
    special_ids[i] = static_cast<TokenId>(i);
  }
  std::vector<std::string> content;
  for (char d = '0'; d <= '9'; ++d) content.emplace_back(1, d);
  content.emplace_back("-");
  for (auto& w : template_words(templates)) content.push_back(std::move(w));
  std::sort(content.begin(), content.end());
  content.erase(std::unique(content.begin(), content.end()), content.end());
  for (auto& c : content) {
    if (std::find(tokens.begin(), tokens.begin() + kNumSpecials, c) != tokens.begin() + kNumSpecials) {
      throw InvalidSpec("template word '" + c + "' collides with a special token");
    }
    tokens.push_back(std::move(c));
  }
  return Vocab(std::move(tokens), special_ids);
}

}  // namespace sdp
