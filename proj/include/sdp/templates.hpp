#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sdp {

// Fixed-form utterance templates. Placeholders are whitespace-separated units
// in braces: {a} and {b} for the problem, {ans} for an answer, {p} and {q} for
// the numerator and denominator of a non-integer answer.
struct Templates {
  std::string question = "solve {a} x = {b}";
  std::string answer = "x = {ans}";
  std::string correction = "x = {ans}";
  std::string fraction = "{p} / {q}";

  friend bool operator==(const Templates&, const Templates&) = default;
};

inline std::vector<std::string> split_units(std::string_view text) {
  std::vector<std::string> units;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\n' && text[j] != '\r') ++j;
    if (j > i) units.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return units;
}

inline bool is_placeholder(std::string_view unit) {
  return unit.size() >= 2 && unit.front() == '{' && unit.back() == '}';
}

// Literal (non-placeholder) units across all templates.
inline std::vector<std::string> template_words(const Templates& t) {
  std::vector<std::string> words;
  for (const std::string* s : {&t.question, &t.answer, &t.correction, &t.fraction}) {
    for (auto& u : split_units(*s)) {
      if (!is_placeholder(u)) words.push_back(std::move(u));
    }
  }
  return words;
}

}  // namespace sdp
