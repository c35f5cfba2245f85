#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "rational.hpp"
#include "templates.hpp"

namespace sdp {

// An instance of a x = b.
struct Problem {
  std::int64_t a = 1;
  std::int64_t b = 0;

  friend auto operator<=>(const Problem&, const Problem&) = default;
  std::string str() const { return std::to_string(a) + "x=" + std::to_string(b); }
};

using RuleId = int;

inline constexpr RuleId kCorrect = 0;
inline constexpr RuleId kM1 = 1;  // x = a / b
inline constexpr RuleId kM2 = 2;  // x = b - a
inline constexpr RuleId kM3 = 3;  // x = b + a

// A solving procedure. The solver returns nullopt where its formula is undefined.
struct Rule {
  RuleId id = 0;
  std::string name;
  std::function<std::optional<Rational>(const Problem&)> solver;
};

inline const std::vector<Rule>& builtin_rules() {
  static const std::vector<Rule> rules = {
      {kCorrect, "CORRECT", [](const Problem& p) -> std::optional<Rational> { return Rational(p.b, p.a); }},
      {kM1, "M1",
       [](const Problem& p) -> std::optional<Rational> {
         if (p.b == 0) return std::nullopt;
         return Rational(p.a, p.b);
       }},
      {kM2, "M2", [](const Problem& p) -> std::optional<Rational> { return Rational(p.b - p.a); }},
      {kM3, "M3", [](const Problem& p) -> std::optional<Rational> { return Rational(p.b + p.a); }},
  };
  return rules;
}

inline const Rule& builtin_rule(RuleId id) {
  const auto& rules = builtin_rules();
  if (id < 0 || static_cast<std::size_t>(id) >= rules.size()) {
    throw InvalidSpec("unknown rule id " + std::to_string(id));
  }
  return rules[static_cast<std::size_t>(id)];
}

inline RuleId rule_id_from_name(std::string_view name) {
  for (const auto& r : builtin_rules()) {
    if (r.name == name) return r.id;
  }
  throw InvalidSpec("unknown rule '" + std::string(name) + "'");
}

inline const std::string& rule_name(RuleId id) { return builtin_rule(id).name; }

inline Rational apply_rule(const Rule& rule, const Problem& p) {
  if (p.a == 0) throw UndefinedForProblem("problem has zero coefficient");
  auto value = rule.solver(p);
  if (!value) throw UndefinedForProblem(rule.name + " is undefined for " + p.str());
  return *value;
}

inline bool rule_defined(const Rule& rule, const Problem& p) {
  return p.a != 0 && rule.solver(p).has_value();
}

// Mixture over rules. Entries are kept sorted by rule id.
class StudentProfile {
 public:
  StudentProfile() = default;
  explicit StudentProfile(std::vector<std::pair<RuleId, double>> weights) : weights_(std::move(weights)) {
    std::sort(weights_.begin(), weights_.end());
    double total = 0.0;
    bool any_positive = false;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      const auto& [id, w] = weights_[i];
      builtin_rule(id);
      if (i && weights_[i - 1].first == id) throw InvalidSpec("profile lists rule " + rule_name(id) + " twice");
      if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidSpec("profile weight for " + rule_name(id) + " is negative");
      any_positive |= w > 0.0;
      total += w;
    }
    if (!any_positive) throw InvalidSpec("profile has empty support");
    if (std::abs(total - 1.0) > 1e-9) throw InvalidSpec("profile weights sum to " + std::to_string(total));
  }

  static StudentProfile only(RuleId id) { return StudentProfile({{id, 1.0}}); }

  const std::vector<std::pair<RuleId, double>>& weights() const noexcept { return weights_; }

  double weight(RuleId id) const noexcept {
    for (const auto& [r, w] : weights_) {
      if (r == id) return w;
    }
    return 0.0;
  }

  // "CORRECT:0.4, M1:0.2"
  static StudentProfile parse(std::string_view text) {
    std::vector<std::pair<RuleId, double>> weights;
    std::string item;
    auto flush = [&] {
      auto units = split_units(item);
      std::string joined;
      for (auto& u : units) joined += u;
      item.clear();
      if (joined.empty()) return;
      const auto colon = joined.find(':');
      if (colon == std::string::npos) throw InvalidSpec("profile entry '" + joined + "' lacks ':'");
      double w = 0.0;
      try {
        std::size_t used = 0;
        w = std::stod(joined.substr(colon + 1), &used);
        if (used != joined.size() - colon - 1) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw InvalidSpec("profile weight '" + joined.substr(colon + 1) + "' is not a number");
      }
      weights.emplace_back(rule_id_from_name(joined.substr(0, colon)), w);
    };
    for (char c : text) {
      if (c == ',') flush();
      else item += c;
    }
    flush();
    return StudentProfile(std::move(weights));
  }

  std::string str() const {
    std::string out;
    for (const auto& [id, w] : weights_) {
      if (!out.empty()) out += ", ";
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s:%.17g", rule_name(id).c_str(), w);
      out += buf;
    }
    return out;
  }

  friend bool operator==(const StudentProfile&, const StudentProfile&) = default;

 private:
  std::vector<std::pair<RuleId, double>> weights_;
};

inline RuleId sample_rule(const StudentProfile& profile, Rng& rng) {
  std::vector<double> w;
  w.reserve(profile.weights().size());
  for (const auto& [id, weight] : profile.weights()) w.push_back(weight);
  return profile.weights()[rng.categorical(w)].first;
}

// Finite problem range. By default both a and b lie in [-9, 9], a != 0,
// b != 0 and a divides b.
struct ProblemRange {
  std::int64_t min = -9;
  std::int64_t max = 9;
  bool require_divisible = true;
  bool allow_zero_b = false;

  friend bool operator==(const ProblemRange&, const ProblemRange&) = default;

  bool contains(const Problem& p) const {
    if (p.a == 0 || p.a < min || p.a > max || p.b < min || p.b > max) return false;
    if (!allow_zero_b && p.b == 0) return false;
    if (require_divisible && p.b % p.a != 0) return false;
    return true;
  }

  // All problems in the range, in ascending (a, b) order.
  std::vector<Problem> enumerate() const {
    std::vector<Problem> out;
    for (std::int64_t a = min; a <= max; ++a) {
      for (std::int64_t b = min; b <= max; ++b) {
        if (contains({a, b})) out.push_back({a, b});
      }
    }
    return out;
  }
};

// "- 1 8"
inline std::string render_integer(std::int64_t v) {
  std::string digits = std::to_string(v < 0 ? -v : v);
  std::string out = v < 0 ? "-" : "";
  for (char d : digits) {
    if (!out.empty()) out += ' ';
    out += d;
  }
  return out;
}

inline std::string fill_template(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  for (const auto& unit : split_units(tmpl)) {
    std::string piece = unit;
    if (is_placeholder(unit)) {
      const std::string key = unit.substr(1, unit.size() - 2);
      auto it = std::find_if(values.begin(), values.end(), [&](const auto& kv) { return kv.first == key; });
      if (it == values.end()) throw InvalidSpec("template placeholder " + unit + " has no value");
      piece = it->second;
    }
    if (piece.empty()) continue;
    if (!out.empty()) out += ' ';
    out += piece;
  }
  return out;
}

// Integers digit by digit; non-integers through the fraction template in lowest terms.
inline std::string render_answer(const Rational& r, const Templates& t) {
  if (r.is_integer()) return render_integer(r.num());
  return fill_template(t.fraction, {{"p", render_integer(r.num())}, {"q", render_integer(r.den())}});
}

namespace detail {

inline std::optional<std::int64_t> parse_integer_units(std::span<const std::string> units) {
  if (units.empty()) return std::nullopt;
  std::size_t i = 0;
  bool negative = false;
  if (units[0] == "-") {
    negative = true;
    i = 1;
  }
  if (i == units.size() || units.size() - i > 12) return std::nullopt;
  if (units[i] == "0" && units.size() - i > 1) return std::nullopt;
  std::int64_t v = 0;
  for (; i < units.size(); ++i) {
    if (units[i].size() != 1 || units[i][0] < '0' || units[i][0] > '9') return std::nullopt;
    v = v * 10 + (units[i][0] - '0');
  }
  if (negative && v == 0) return std::nullopt;
  return negative ? -v : v;
}

}  // namespace detail

// Inverse of render_answer; nullopt for anything that is not a well-formed answer value.
inline std::optional<Rational> parse_answer_value(std::span<const std::string> units, const Templates& t) {
  if (auto v = detail::parse_integer_units(units)) return Rational(*v);
  // Match the fraction template: literal units must match exactly, {p} and {q}
  // absorb the units in between.
  const auto pattern = split_units(t.fraction);
  std::vector<std::string> literals;
  for (const auto& u : pattern) {
    if (!is_placeholder(u)) literals.push_back(u);
  }
  if (pattern.size() != 3 || pattern[0] != "{p}" || pattern[2] != "{q}" || literals.size() != 1) return std::nullopt;
  auto sep = std::find(units.begin(), units.end(), literals[0]);
  if (sep == units.end()) return std::nullopt;
  auto p = detail::parse_integer_units(std::span<const std::string>(units.begin(), sep));
  auto q = detail::parse_integer_units(std::span<const std::string>(sep + 1, units.end()));
  if (!p || !q || *q <= 1) return std::nullopt;
  const Rational r(*p, *q);
  if (r.num() != *p || r.den() != *q) return std::nullopt;  // not in lowest terms
  return r;
}

}  // namespace sdp
