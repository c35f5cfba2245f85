#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "hash.hpp"
#include "random.hpp"
#include "rules.hpp"
#include "templates.hpp"
#include "vocab.hpp"

namespace sdp {

enum class Role : std::uint8_t { Tutor, Student };

inline std::string_view role_name(Role r) { return r == Role::Tutor ? "tutor" : "student"; }

struct Turn {
  Role role = Role::Tutor;
  TokenIds ids;                // content only, no role marker or terminator
  std::optional<RuleId> rule;  // rule that produced a student answer

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialogue {
  std::int64_t id = 0;
  std::vector<Turn> turns;
  Problem problem;
  std::string profile_id;

  friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

using Corpus = std::vector<Dialogue>;

struct CorpusSpec {
  std::size_t n_dialogues = 648;
  std::size_t turns_per_dialogue = 3;  // student answer turns per dialogue
  StudentProfile profile{{{kCorrect, 0.4}, {kM1, 0.2}, {kM2, 0.2}, {kM3, 0.2}}};
  ProblemRange range;
  std::uint64_t seed = 1;
  Templates templates;
  std::set<Problem> excluded;     // problems never drawn
  std::size_t max_tokens = 64;    // flattened length bound, hal markers included

  // Canonical text form; the spec hash in corpus headers is computed over it.
  std::string canonical() const {
    std::string s = "n_dialogues=" + std::to_string(n_dialogues) + ";turns=" + std::to_string(turns_per_dialogue) +
                    ";profile=" + profile.str() + ";range=" + std::to_string(range.min) + ".." +
                    std::to_string(range.max) + (range.require_divisible ? ";div" : ";nodiv") +
                    (range.allow_zero_b ? ";zero_b" : "") + ";seed=" + std::to_string(seed) +
                    ";q=" + templates.question + ";a=" + templates.answer + ";c=" + templates.correction +
                    ";f=" + templates.fraction + ";max_tokens=" + std::to_string(max_tokens) + ";excluded=";
    for (const auto& p : excluded) s += p.str() + ",";
    return s;
  }
  std::string hash() const { return hex64(fnv1a64(canonical())); }
};

inline Vocab build_vocab(const CorpusSpec& spec) { return build_vocab(spec.templates); }

// Flattened token count of a dialogue: role marker and EOT per turn, plus
// two hal markers per student turn when augmented.
inline std::size_t flattened_length(const Dialogue& d, bool hal_augmented) {
  std::size_t n = 0;
  for (const auto& t : d.turns) n += t.ids.size() + 2 + ((hal_augmented && t.role == Role::Student) ? 2 : 0);
  return n;
}

namespace detail {

inline constexpr std::uint64_t kStudentCorpusSalt = 0x5354554445ULL;
inline constexpr std::uint64_t kCleanCorpusSalt = 0x434c45414eULL;

inline void validate_spec(const CorpusSpec& spec, const std::vector<Problem>& pool) {
  if (spec.n_dialogues == 0) throw InvalidSpec("n_dialogues must be at least 1");
  if (spec.turns_per_dialogue == 0) throw InvalidSpec("turns_per_dialogue must be at least 1");
  if (spec.range.min > spec.range.max) throw InvalidSpec("empty number range");
  if (pool.empty()) throw InvalidSpec("number range admits no problems");
}

inline std::vector<Problem> problem_pool(const CorpusSpec& spec) {
  std::vector<Problem> pool;
  for (const auto& p : spec.range.enumerate()) {
    if (!spec.excluded.contains(p)) pool.push_back(p);
  }
  return pool;
}

inline Dialogue make_dialogue(const CorpusSpec& spec, const Vocab& vocab, const std::vector<Problem>& pool,
                              std::uint64_t salt, std::size_t index, const StudentProfile& profile,
                              const std::string& profile_id) {
  Rng rng = Rng::stream(spec.seed ^ salt, index);
  Dialogue d;
  d.id = static_cast<std::int64_t>(index);
  d.profile_id = profile_id;
  d.problem = pool[rng.below(pool.size())];
  const auto& t = spec.templates;
  const Rational correct = apply_rule(builtin_rule(kCorrect), d.problem);
  const std::string correction =
      fill_template(t.correction, {{"ans", render_answer(correct, t)}});
  d.turns.push_back({Role::Tutor,
                     vocab.encode(fill_template(t.question, {{"a", render_integer(d.problem.a)},
                                                             {"b", render_integer(d.problem.b)}})),
                     std::nullopt});
  for (std::size_t k = 0; k < spec.turns_per_dialogue; ++k) {
    const RuleId rule = sample_rule(profile, rng);
    const Rational answer = apply_rule(builtin_rule(rule), d.problem);
    d.turns.push_back({Role::Student, vocab.encode(fill_template(t.answer, {{"ans", render_answer(answer, t)}})), rule});
    d.turns.push_back({Role::Tutor, vocab.encode(correction), std::nullopt});
  }
  if (flattened_length(d, true) > spec.max_tokens) {
    throw InvalidSpec("dialogue " + std::to_string(index) + " needs " + std::to_string(flattened_length(d, true)) +
                      " tokens, above the " + std::to_string(spec.max_tokens) + "-token window");
  }
  return d;
}

inline Corpus generate(const CorpusSpec& spec, std::uint64_t salt, const StudentProfile& profile,
                       const std::string& profile_id, std::size_t workers) {
  const auto pool = problem_pool(spec);
  validate_spec(spec, pool);
  const Vocab vocab = build_vocab(spec);
  Corpus corpus(spec.n_dialogues);
  workers = std::max<std::size_t>(1, std::min(workers, spec.n_dialogues));
  if (workers == 1) {
    for (std::size_t i = 0; i < spec.n_dialogues; ++i) {
      corpus[i] = make_dialogue(spec, vocab, pool, salt, i, profile, profile_id);
    }
    return corpus;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < spec.n_dialogues; i += workers) {
          corpus[i] = make_dialogue(spec, vocab, pool, salt, i, profile, profile_id);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return corpus;
}

}  // namespace detail

// Student-tutor dialogues: the tutor poses a problem, then each round the
// student answers with a rule drawn from the profile and the tutor replies
// with the correct answer. Dialogue i depends only on (seed, i).
inline Corpus generate_corpus(const CorpusSpec& spec, std::size_t workers = 1) {
  return detail::generate(spec, detail::kStudentCorpusSalt, spec.profile, "student", workers);
}

// Same dialogue shapes with every student answer produced by the correct rule.
inline Corpus generate_pretraining_corpus(const CorpusSpec& spec, std::size_t workers = 1) {
  return detail::generate(spec, detail::kCleanCorpusSalt, StudentProfile::only(kCorrect), "clean", workers);
}

inline std::set<Problem> problem_set(const Corpus& corpus) {
  std::set<Problem> out;
  for (const auto& d : corpus) out.insert(d.problem);
  return out;
}

struct SplitResult {
  Corpus train;
  Corpus heldout;
};

// Problem-disjoint partition. Dialogues are grouped by problem and a subset of
// groups whose size is within one dialogue of the heldout target is chosen.
inline SplitResult split(const Corpus& corpus, double train_fraction, double heldout_fraction, std::uint64_t seed) {
  if (!(train_fraction >= 0.0) || !(heldout_fraction >= 0.0) || std::abs(train_fraction + heldout_fraction - 1.0) > 1e-9) {
    throw InvalidSpec("split fractions must be non-negative and sum to 1");
  }
  std::map<Problem, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.size(); ++i) groups[corpus[i].problem].push_back(i);
  std::vector<const std::vector<std::size_t>*> order;
  for (const auto& [p, members] : groups) order.push_back(&members);
  Rng rng = Rng::stream(seed, 0x53504c4954ULL);
  rng.shuffle(std::span(order));

  const auto target = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(corpus.size())));
  // Subset-sum over group sizes; parent[k][s] marks whether group k was taken to reach sum s.
  const std::size_t n = corpus.size();
  std::vector<std::vector<std::int8_t>> taken(order.size() + 1, std::vector<std::int8_t>(n + 1, -1));
  taken[0][0] = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t sz = order[k]->size();
    for (std::size_t s = 0; s <= n; ++s) {
      if (taken[k][s] < 0) continue;
      if (taken[k + 1][s] < 0) taken[k + 1][s] = 0;
      if (s + sz <= n && taken[k + 1][s + sz] < 0) taken[k + 1][s + sz] = 1;
    }
  }
  std::optional<std::size_t> best;
  for (std::size_t delta = 0; delta <= 1 && !best; ++delta) {
    if (target >= delta && taken[order.size()][target - delta] >= 0) best = target - delta;
    else if (target + delta <= n && taken[order.size()][target + delta] >= 0) best = target + delta;
  }
  const bool degenerate = (heldout_fraction > 0.0 && best == 0 && target > 0) ||
                          (train_fraction > 0.0 && best == n && target < n);
  if (!best || degenerate) {
    throw InfeasibleSplit("no problem-disjoint split within one dialogue of " + std::to_string(target) +
                          " heldout dialogues");
  }
  std::vector<bool> held(corpus.size(), false);
  std::size_t s = *best;
  for (std::size_t k = order.size(); k > 0; --k) {
    if (taken[k][s] == 1) {
      for (std::size_t i : *order[k - 1]) held[i] = true;
      s -= order[k - 1]->size();
    }
  }
  SplitResult out;
  for (std::size_t i = 0; i < corpus.size(); ++i) (held[i] ? out.heldout : out.train).push_back(corpus[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited records. The first line is a header carrying the vocabulary.

struct CorpusHeader {
  std::string spec_hash;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string kind = "corpus";
};

inline nlohmann::json vocab_to_json(const Vocab& vocab) {
  nlohmann::json specials = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    specials[std::string(special_role_name(kSpecialOrder[i]))] = vocab.special_ids()[i];
  }
  return {{"tokens", vocab.tokens()}, {"specials", specials}};
}

inline Vocab vocab_from_json(const nlohmann::json& j) {
  std::array<TokenId, kNumSpecials> ids{};
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    ids[i] = j.at("specials").at(std::string(special_role_name(kSpecialOrder[i]))).get<TokenId>();
  }
  return Vocab(j.at("tokens").get<std::vector<std::string>>(), ids);
}

inline nlohmann::json dialogue_to_json(const Dialogue& d, const Vocab& vocab) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : d.turns) {
    nlohmann::json jt = {{"role", role_name(t.role)}, {"text", vocab.decode(t.ids)}};
    if (t.rule) jt["rule"] = rule_name(*t.rule);
    turns.push_back(std::move(jt));
  }
  return {{"id", d.id},
          {"problem", {{"a", d.problem.a}, {"b", d.problem.b}}},
          {"profile", d.profile_id},
          {"turns", std::move(turns)}};
}

inline void write_header(std::ostream& os, const CorpusHeader& h, const Vocab& vocab) {
  nlohmann::json header = {{"format", "sdp-corpus"}, {"version", 1},        {"tool", tool_version_string()},
                           {"kind", h.kind},         {"spec_hash", h.spec_hash}, {"config_hash", h.config_hash},
                           {"seed", h.seed},         {"vocab", vocab_to_json(vocab)}};
  os << header.dump() << '\n';
}

inline void serialize(std::ostream& os, const Corpus& corpus, const Vocab& vocab, const CorpusHeader& header) {
  write_header(os, header, vocab);
  for (const auto& d : corpus) os << dialogue_to_json(d, vocab).dump() << '\n';
}

struct CorpusFile {
  nlohmann::json header;
  Vocab vocab;
  Corpus dialogues;
};

namespace detail {

inline Role parse_role(const std::string& s, std::size_t line) {
  if (s == "tutor") return Role::Tutor;
  if (s == "student") return Role::Student;
  throw ParseError(line, "unknown role '" + s + "'");
}

inline Dialogue dialogue_from_json(const nlohmann::json& j, const Vocab& vocab, std::size_t line) {
  Dialogue d;
  d.id = j.at("id").get<std::int64_t>();
  d.problem = {j.at("problem").at("a").get<std::int64_t>(), j.at("problem").at("b").get<std::int64_t>()};
  if (d.problem.a == 0) throw ParseError(line, "problem has a = 0");
  d.profile_id = j.value("profile", std::string());
  for (const auto& jt : j.at("turns")) {
    Turn t;
    t.role = parse_role(jt.at("role").get<std::string>(), line);
    try {
      t.ids = vocab.encode(jt.at("text").get<std::string>());
    } catch (const UnknownToken& e) {
      throw ParseError(line, e.what());
    }
    for (TokenId id : t.ids) {
      if (vocab.is_special(id)) throw ParseError(line, "turn text contains a special token");
    }
    if (jt.contains("rule")) {
      try {
        t.rule = rule_id_from_name(jt.at("rule").get<std::string>());
      } catch (const InvalidSpec& e) {
        throw ParseError(line, e.what());
      }
    }
    d.turns.push_back(std::move(t));
  }
  return d;
}

}  // namespace detail

// Reads records line by line. The callback sees each parsed JSON record with its line number.
template <class OnRecord>
inline nlohmann::json read_records(std::istream& is, Vocab& vocab, OnRecord&& on_record) {
  std::string line;
  std::size_t line_no = 0;
  nlohmann::json header;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("malformed record: ") + e.what());
    }
    try {
      if (!have_header) {
        if (!j.is_object() || j.value("format", "") != "sdp-corpus") throw ParseError(line_no, "missing corpus header");
        if (j.value("version", 0) != 1) throw ParseError(line_no, "unsupported corpus version");
        vocab = vocab_from_json(j.at("vocab"));
        header = std::move(j);
        have_header = true;
        continue;
      }
      on_record(j, line_no);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, std::string("bad field: ") + e.what());
    } catch (const InvalidSpec& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return header;
}

inline CorpusFile deserialize(std::istream& is) {
  CorpusFile out;
  out.header = read_records(is, out.vocab, [&](const nlohmann::json& j, std::size_t line) {
    out.dialogues.push_back(detail::dialogue_from_json(j, out.vocab, line));
  });
  return out;
}

}  // namespace sdp
