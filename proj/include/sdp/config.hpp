#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "consistency.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "hash.hpp"
#include "model.hpp"
#include "training.hpp"

namespace sdp {

inline constexpr std::array<std::string_view, 4> kTrainRegimes = {"pretrain", "student", "tutor", "student_hal"};

// Everything one experiment needs, read from a sectioned key = value file.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t n_seeds = 1;
  std::size_t workers = 1;

  CorpusSpec corpus;
  double heldout_fraction = 0.3;

  ModelConfig model;

  // Keyed by regime; each starts from [train] and applies its own section.
  std::map<std::string, TrainConfig> train;
  PretrainTargets pretrain_targets = PretrainTargets::AllTurns;

  std::size_t eval_samples = 1000;
  std::uint64_t eval_seed = 0;

  ConsistencyKind relation = ConsistencyKind::Pointwise;
  ProblemRange consistency_domain;

  const TrainConfig& train_for(std::string_view regime) const { return train.at(std::string(regime)); }

  // Canonical "section.key = value" lines in key order, the source of the config hash.
  std::string canonical() const;
  std::string hash() const { return hex64(fnv1a64(canonical())); }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long d = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + v + "'");
  }
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const auto i = to_int(key, v);
  if (i < 0) throw ConfigError(key, "must not be negative");
  return static_cast<std::size_t>(i);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

inline void add_train_fields(std::map<std::string, Field>& f, const std::string& section,
                             const std::vector<std::string>& regimes) {
  auto each = [regimes](ExperimentConfig& c, auto&& fn) {
    for (const auto& r : regimes) fn(c.train[r]);
  };
  auto first = [regimes](const ExperimentConfig& c) -> const TrainConfig& { return c.train.at(regimes.front()); };
  f[section + ".learning_rate"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                     const double d = to_double(k, v);
                                     each(c, [&](TrainConfig& t) { t.learning_rate = d; });
                                   },
                                   [first](const ExperimentConfig& c) { return num(first(c).learning_rate); }};
  f[section + ".beta1"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                             const double d = to_double(k, v);
                             each(c, [&](TrainConfig& t) { t.beta1 = d; });
                           },
                           [first](const ExperimentConfig& c) { return num(first(c).beta1); }};
  f[section + ".beta2"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                             const double d = to_double(k, v);
                             each(c, [&](TrainConfig& t) { t.beta2 = d; });
                           },
                           [first](const ExperimentConfig& c) { return num(first(c).beta2); }};
  f[section + ".epsilon"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                               const double d = to_double(k, v);
                               each(c, [&](TrainConfig& t) { t.epsilon = d; });
                             },
                             [first](const ExperimentConfig& c) { return num(first(c).epsilon); }};
  f[section + ".batch_size"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                  const auto d = to_count(k, v);
                                  each(c, [&](TrainConfig& t) { t.batch_size = d; });
                                },
                                [first](const ExperimentConfig& c) { return std::to_string(first(c).batch_size); }};
  f[section + ".epochs"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                              const auto d = to_count(k, v);
                              each(c, [&](TrainConfig& t) { t.epochs = d; });
                            },
                            [first](const ExperimentConfig& c) { return std::to_string(first(c).epochs); }};
  f[section + ".clip_norm"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                 const double d = to_double(k, v);
                                 each(c, [&](TrainConfig& t) { t.clip_norm = d; });
                               },
                               [first](const ExperimentConfig& c) { return num(first(c).clip_norm); }};
  f[section + ".warmup_steps"] = {[each](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                    const auto d = to_count(k, v);
                                    each(c, [&](TrainConfig& t) { t.warmup_steps = d; });
                                  },
                                  [first](const ExperimentConfig& c) { return std::to_string(first(c).warmup_steps); }};
}

inline std::string relation_name(ConsistencyKind k) {
  switch (k) {
    case ConsistencyKind::Pointwise: return "pointwise";
    case ConsistencyKind::Existential: return "existential";
    case ConsistencyKind::Custom: return "custom";
  }
  return "";
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    using C = ExperimentConfig;
    using S = const std::string&;
    f["experiment.seed"] = {[](C& c, S k, S v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); },
                            [](const C& c) { return std::to_string(c.seed); }};
    f["experiment.n_seeds"] = {[](C& c, S k, S v) { c.n_seeds = to_count(k, v); },
                               [](const C& c) { return std::to_string(c.n_seeds); }};
    f["experiment.workers"] = {[](C& c, S k, S v) { c.workers = to_count(k, v); },
                               [](const C& c) { return std::to_string(c.workers); }};

    f["corpus.n_dialogues"] = {[](C& c, S k, S v) { c.corpus.n_dialogues = to_count(k, v); },
                               [](const C& c) { return std::to_string(c.corpus.n_dialogues); }};
    f["corpus.turns_per_dialogue"] = {[](C& c, S k, S v) { c.corpus.turns_per_dialogue = to_count(k, v); },
                                      [](const C& c) { return std::to_string(c.corpus.turns_per_dialogue); }};
    f["corpus.profile"] = {[](C& c, S k, S v) {
                             try {
                               c.corpus.profile = StudentProfile::parse(v);
                             } catch (const InvalidSpec& e) {
                               throw ConfigError(k, e.what());
                             }
                           },
                           [](const C& c) { return c.corpus.profile.str(); }};
    f["corpus.range_min"] = {[](C& c, S k, S v) { c.corpus.range.min = to_int(k, v); },
                             [](const C& c) { return std::to_string(c.corpus.range.min); }};
    f["corpus.range_max"] = {[](C& c, S k, S v) { c.corpus.range.max = to_int(k, v); },
                             [](const C& c) { return std::to_string(c.corpus.range.max); }};
    f["corpus.require_divisible"] = {[](C& c, S k, S v) { c.corpus.range.require_divisible = to_bool(k, v); },
                                     [](const C& c) { return c.corpus.range.require_divisible ? "true" : "false"; }};
    f["corpus.heldout_fraction"] = {[](C& c, S k, S v) { c.heldout_fraction = to_double(k, v); },
                                    [](const C& c) { return num(c.heldout_fraction); }};
    f["corpus.question_template"] = {[](C& c, S, S v) { c.corpus.templates.question = v; },
                                     [](const C& c) { return c.corpus.templates.question; }};
    f["corpus.answer_template"] = {[](C& c, S, S v) { c.corpus.templates.answer = v; },
                                   [](const C& c) { return c.corpus.templates.answer; }};
    f["corpus.correction_template"] = {[](C& c, S, S v) { c.corpus.templates.correction = v; },
                                       [](const C& c) { return c.corpus.templates.correction; }};
    f["corpus.fraction_template"] = {[](C& c, S, S v) { c.corpus.templates.fraction = v; },
                                     [](const C& c) { return c.corpus.templates.fraction; }};

    f["model.context_len"] = {[](C& c, S k, S v) { c.model.context_len = to_count(k, v); },
                              [](const C& c) { return std::to_string(c.model.context_len); }};
    f["model.d_model"] = {[](C& c, S k, S v) { c.model.d_model = to_count(k, v); },
                          [](const C& c) { return std::to_string(c.model.d_model); }};
    f["model.n_heads"] = {[](C& c, S k, S v) { c.model.n_heads = to_count(k, v); },
                          [](const C& c) { return std::to_string(c.model.n_heads); }};
    f["model.n_layers"] = {[](C& c, S k, S v) { c.model.n_layers = to_count(k, v); },
                           [](const C& c) { return std::to_string(c.model.n_layers); }};

    add_train_fields(f, "train", {"pretrain", "student", "tutor", "student_hal"});
    f["train.pretrain.targets"] = {[](C& c, S k, S v) {
                                     try {
                                       c.pretrain_targets = parse_targets(v);
                                     } catch (const ValidationError&) {
                                       throw ConfigError(k, "expected tutor or all, got '" + v + "'");
                                     }
                                   },
                                   [](const C& c) { return std::string(targets_name(c.pretrain_targets)); }};
    for (auto r : kTrainRegimes) add_train_fields(f, "train." + std::string(r), {std::string(r)});

    f["eval.n_samples"] = {[](C& c, S k, S v) { c.eval_samples = to_count(k, v); },
                           [](const C& c) { return std::to_string(c.eval_samples); }};
    f["eval.seed"] = {[](C& c, S k, S v) { c.eval_seed = static_cast<std::uint64_t>(to_int(k, v)); },
                      [](const C& c) { return std::to_string(c.eval_seed); }};

    f["consistency.relation"] = {[](C& c, S k, S v) {
                                   if (v == "pointwise") c.relation = ConsistencyKind::Pointwise;
                                   else if (v == "existential") c.relation = ConsistencyKind::Existential;
                                   else throw ConfigError(k, "expected pointwise or existential, got '" + v + "'");
                                 },
                                 [](const C& c) { return relation_name(c.relation); }};
    f["consistency.probe_min"] = {[](C& c, S k, S v) { c.consistency_domain.min = to_int(k, v); },
                                  [](const C& c) { return std::to_string(c.consistency_domain.min); }};
    f["consistency.probe_max"] = {[](C& c, S k, S v) { c.consistency_domain.max = to_int(k, v); },
                                  [](const C& c) { return std::to_string(c.consistency_domain.max); }};
    f["consistency.probe_divisible"] = {
        [](C& c, S k, S v) { c.consistency_domain.require_divisible = to_bool(k, v); },
        [](const C& c) { return c.consistency_domain.require_divisible ? "true" : "false"; }};
    return f;
  }();
  return table;
}

}  // namespace detail

inline std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [key, field] : detail::fields()) {
    if (key.rfind("train.", 0) == 0 && key.find('.', 6) == std::string::npos) continue;  // aliases
    if (key == "experiment.workers") continue;  // changes speed, never results
    out += key + " = " + field.get(*this) + "\n";
  }
  return out;
}

// Defaults before any file is applied.
inline ExperimentConfig default_config() {
  ExperimentConfig c;
  for (auto r : kTrainRegimes) c.train[std::string(r)] = TrainConfig{};
  // the clean pretraining run needs to reach near-perfect recall; at 3e-4 that takes ~3x the epochs
  auto& pre = c.train.at("pretrain");
  pre.learning_rate = 1e-3;
  pre.epochs = 30;
  return c;
}

inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  const auto& f = detail::fields();
  auto it = f.find(key);
  if (it == f.end()) throw ConfigError(key, "unknown key");
  it->second.set(c, key, value);
}

// "section.key=value" from --set.
inline void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override must look like section.key=value");
  set_config_value(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void validate_config(const ExperimentConfig& c) {
  if (c.n_seeds == 0) throw ConfigError("experiment.n_seeds", "must be at least 1");
  if (c.workers == 0) throw ConfigError("experiment.workers", "must be at least 1");
  if (c.corpus.n_dialogues == 0) throw ConfigError("corpus.n_dialogues", "must be at least 1");
  if (c.corpus.turns_per_dialogue == 0) throw ConfigError("corpus.turns_per_dialogue", "must be at least 1");
  if (c.corpus.range.min > c.corpus.range.max) throw ConfigError("corpus.range_max", "below corpus.range_min");
  if (!(c.heldout_fraction > 0.0 && c.heldout_fraction < 1.0)) {
    throw ConfigError("corpus.heldout_fraction", "must lie strictly between 0 and 1");
  }
  if (c.model.context_len == 0) throw ConfigError("model.context_len", "must be positive");
  if (c.model.d_model == 0) throw ConfigError("model.d_model", "must be positive");
  if (c.model.n_heads == 0 || c.model.d_model % c.model.n_heads != 0) {
    throw ConfigError("model.n_heads", "must be positive and divide model.d_model");
  }
  if (c.model.n_layers == 0) throw ConfigError("model.n_layers", "must be positive");
  // A field that is bad in every regime came from [train]; report it under that key.
  std::vector<ConfigError> bad;
  std::set<std::string> bad_fields;
  for (auto r : kTrainRegimes) {
    const std::string prefix = "train." + std::string(r);
    try {
      c.train_for(r).validate(prefix);
    } catch (const ConfigError& e) {
      bad.push_back(e);
      bad_fields.insert(e.key_path().substr(prefix.size()));
    }
  }
  if (bad.size() == kTrainRegimes.size() && bad_fields.size() == 1) c.train_for("pretrain").validate("train");
  if (!bad.empty()) throw bad.front();
  if (c.eval_samples < 1000) throw ConfigError("eval.n_samples", "must be at least 1000");
  if (c.consistency_domain.min > c.consistency_domain.max) {
    throw ConfigError("consistency.probe_max", "below consistency.probe_min");
  }
}

inline ExperimentConfig parse_config(std::istream& is, const std::vector<std::string>& overrides = {}) {
  ExperimentConfig c = default_config();
  std::string line, section;
  std::size_t line_no = 0;
  // [train] keys apply before regime sections regardless of file order.
  std::vector<std::pair<std::string, std::string>> shared_train, specific;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no), "unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no), "expected key = value");
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no), "key outside of a section");
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    (section == "train" ? shared_train : specific).emplace_back(key, value);
  }
  for (const auto& [k, v] : shared_train) set_config_value(c, k, v);
  for (const auto& [k, v] : specific) set_config_value(c, k, v);
  for (const auto& o : overrides) apply_override(c, o);
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot open " + path);
  return parse_config(is, overrides);
}

}  // namespace sdp
