#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "rules.hpp"
#include "training.hpp"

namespace sdp {

// One multiple-choice question with a single correct answer. Candidates are
// the answer tokens only, with no turn terminator: a terminator adds the same
// log-probability to every candidate, which length normalization then turns
// into a preference for longer answers.
struct ProbeItem {
  Problem problem;
  TokenIds prompt;
  std::vector<TokenIds> candidates;
  std::size_t correct_index = 0;

  friend bool operator==(const ProbeItem&, const ProbeItem&) = default;
};

// The part of the correction template before {ans}, e.g. "x =".
inline std::string answer_prefix(const std::string& tmpl) {
  std::string out;
  for (const auto& u : split_units(tmpl)) {
    if (u == "{ans}") return out;
    if (!out.empty()) out += ' ';
    out += u;
  }
  throw InvalidSpec("answer template lacks {ans}");
}

inline TokenIds question_turn(const Problem& p, const Vocab& vocab, const Templates& t) {
  TokenIds ids{vocab.id(Special::Tutor)};
  const auto q = vocab.encode(fill_template(t.question, {{"a", render_integer(p.a)}, {"b", render_integer(p.b)}}));
  ids.insert(ids.end(), q.begin(), q.end());
  ids.push_back(vocab.id(Special::Eot));
  return ids;
}

// Tutor voice: the question turn, then a tutor turn opened up to the answer slot.
inline TokenIds direct_question_prompt(const Problem& p, const Vocab& vocab, const Templates& t) {
  TokenIds ids = question_turn(p, vocab, t);
  ids.push_back(vocab.id(Special::Tutor));
  const auto pre = vocab.encode(answer_prefix(t.correction));
  ids.insert(ids.end(), pre.begin(), pre.end());
  return ids;
}

// Student voice, optionally with the hal marker already emitted.
inline TokenIds student_prompt(const Problem& p, const Vocab& vocab, const Templates& t, bool hal_prefix) {
  TokenIds ids = question_turn(p, vocab, t);
  ids.push_back(vocab.id(Special::Student));
  if (hal_prefix) ids.push_back(vocab.id(Special::HalOpen));
  return ids;
}

// Correct answer plus the distinct distractors from the misconception rules,
// shuffled so the correct position is uniform.
inline ProbeItem make_probe(const Problem& p, const Vocab& vocab, const Templates& t, Rng& rng) {
  std::vector<Rational> values;
  for (const auto& r : builtin_rules()) {
    if (!rule_defined(r, p)) continue;
    const Rational v = apply_rule(r, p);
    if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
  }
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(std::span(order));
  ProbeItem item;
  item.problem = p;
  item.prompt = direct_question_prompt(p, vocab, t);
  for (std::size_t k = 0; k < order.size(); ++k) {
    item.candidates.push_back(vocab.encode(render_answer(values[order[k]], t)));
    if (order[k] == 0) item.correct_index = k;
  }
  return item;
}

inline std::vector<ProbeItem> build_probes(const std::vector<Problem>& problems, const Vocab& vocab,
                                           const Templates& t, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 0x50524f4245ULL);
  std::vector<ProbeItem> out;
  for (const auto& p : problems) out.push_back(make_probe(p, vocab, t, rng));
  return out;
}

inline std::set<Problem> probe_problems(const std::vector<ProbeItem>& probes) {
  std::set<Problem> s;
  for (const auto& p : probes) s.insert(p.problem);
  return s;
}

// Throws when any probe problem was part of a training corpus.
inline void check_contamination(const std::vector<ProbeItem>& probes, const std::set<Problem>& trained) {
  for (const auto& p : probes) {
    if (trained.contains(p.problem)) {
      throw ProbeContamination("probe problem " + p.problem.str() + " appears in a training corpus");
    }
  }
}

// score(prompt, candidate) returns the candidate's total log-probability.
template <class Score>
std::size_t predict_candidate(const Score& score, const ProbeItem& probe) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < probe.candidates.size(); ++k) {
    const auto& c = probe.candidates[k];
    const double s = score(probe.prompt, c) / static_cast<double>(c.size());
    if (s > best_score) {  // strict: ties keep the lowest index
      best_score = s;
      best = k;
    }
  }
  return best;
}

inline std::size_t predict_candidate(const Parameters& params, const ProbeItem& probe) {
  return predict_candidate(
      [&](const TokenIds& prompt, const TokenIds& cand) { return sequence_logprob(params, prompt, cand); }, probe);
}

// Fraction of probes whose correct candidate has the highest length-normalized log-probability.
template <class Score>
double direct_qa_accuracy(const Score& score, const std::vector<ProbeItem>& probes) {
  if (probes.empty()) throw std::invalid_argument("direct_qa_accuracy needs at least one probe");
  std::size_t correct = 0;
  for (const auto& p : probes) correct += predict_candidate(score, p) == p.correct_index;
  return static_cast<double>(correct) / static_cast<double>(probes.size());
}

inline double direct_qa_accuracy(const Parameters& params, const std::vector<ProbeItem>& probes) {
  return direct_qa_accuracy(
      [&](const TokenIds& prompt, const TokenIds& cand) { return sequence_logprob(params, prompt, cand); }, probes);
}

// exp(mean masked NLL per token) over student-turn targets.
inline double student_fidelity(const Parameters& params, const Corpus& heldout, TrainingMode mode,
                               const Vocab& vocab) {
  if (heldout.empty()) throw std::invalid_argument("student_fidelity needs held-out dialogues");
  const TrainingMode m = mode == TrainingMode::StudentHal ? TrainingMode::StudentHal : TrainingMode::Student;
  double nll = 0.0, weight = 0.0;
  for (const auto& d : heldout) {
    const auto ms = build_training_sequence(d, m, vocab, params.config().context_len);
    nll += masked_nll(params, ms);
    weight += ms.weight_sum();
  }
  return std::exp(nll / weight);
}

// Memoizes next-token rows by prefix; repeated samples from the same prompt
// then cost one forward pass per distinct prefix.
class PrefixSampler {
 public:
  explicit PrefixSampler(const Parameters& params) : params_(params) {}

  TokenIds sample(const TokenIds& prompt, const SamplingPolicy& policy, Rng& rng, std::size_t max_len,
                  std::span<const TokenId> stop) {
    TokenIds seq = prompt;
    TokenIds out;
    while (out.size() < max_len && seq.size() < params_.config().context_len) {
      auto it = cache_.find(seq);
      if (it == cache_.end()) {
        const LogProbTable lp = forward(params_, seq);
        auto row = lp.row(seq.size() - 1);
        it = cache_.emplace(seq, std::vector<double>(row.begin(), row.end())).first;
      }
      const TokenId next = pick_token(it->second, policy, rng);
      out.push_back(next);
      seq.push_back(next);
      if (std::find(stop.begin(), stop.end(), next) != stop.end()) break;
    }
    return out;
  }

 private:
  const Parameters& params_;
  std::map<TokenIds, std::vector<double>> cache_;
};

// Parses a generated student turn ("x = 3", optionally wrapped in hal markers
// and followed by a stop token) into its answer value.
inline std::optional<Rational> parse_generated_answer(TokenIds ids, const Vocab& vocab, const Templates& t) {
  const TokenId eot = vocab.id(Special::Eot), eos = vocab.id(Special::Eos);
  const TokenId open = vocab.id(Special::HalOpen), close = vocab.id(Special::HalClose);
  if (!ids.empty() && (ids.back() == eot || ids.back() == eos)) ids.pop_back();
  if (!ids.empty() && ids.back() == close) ids.pop_back();
  if (!ids.empty() && ids.front() == open) ids.erase(ids.begin());
  for (TokenId id : ids) {
    if (vocab.is_special(id)) return std::nullopt;
  }
  std::vector<std::string> units;
  for (TokenId id : ids) units.push_back(vocab.token(id));
  const auto prefix = split_units(answer_prefix(t.answer));
  if (units.size() < prefix.size() || !std::equal(prefix.begin(), prefix.end(), units.begin())) return std::nullopt;
  return parse_answer_value(std::span<const std::string>(units).subspan(prefix.size()), t);
}

struct MisconceptionMatch {
  double tv = 1.0;                     // total variation to the profile, OTHER counted fully against
  double correct_rate = 0.0;           // share of samples equal to the correct answer
  std::map<RuleId, double> frequency;  // empirical rule distribution
  double other = 0.0;
  std::size_t samples = 0;
};

// Answer-to-rule attribution. An answer matching several rules is split among
// them in proportion to their profile weights (evenly when all are zero).
inline MisconceptionMatch score_answers(const std::vector<std::pair<Problem, std::optional<Rational>>>& answers,
                                        const StudentProfile& profile) {
  MisconceptionMatch m;
  m.samples = answers.size();
  if (answers.empty()) return m;
  // accumulate counts and divide once so that exact matches give exact rates
  std::size_t correct = 0, other = 0;
  for (const auto& r : builtin_rules()) m.frequency[r.id] = 0.0;
  for (const auto& [p, value] : answers) {
    std::vector<RuleId> matched;
    if (value) {
      for (const auto& r : builtin_rules()) {
        if (rule_defined(r, p) && apply_rule(r, p) == *value) matched.push_back(r.id);
      }
    }
    if (matched.empty()) {
      ++other;
      continue;
    }
    if (std::find(matched.begin(), matched.end(), kCorrect) != matched.end()) ++correct;
    double total = 0.0;
    for (RuleId id : matched) total += profile.weight(id);
    for (RuleId id : matched) {
      m.frequency[id] += total > 0.0 ? profile.weight(id) / total : 1.0 / static_cast<double>(matched.size());
    }
  }
  const double n = static_cast<double>(answers.size());
  for (auto& [id, f] : m.frequency) f /= n;
  m.correct_rate = static_cast<double>(correct) / n;
  m.other = static_cast<double>(other) / n;
  double tv = m.other;
  for (const auto& [id, f] : m.frequency) tv += std::abs(f - profile.weight(id));
  m.tv = std::min(1.0, 0.5 * tv);
  return m;
}

inline constexpr std::size_t kMaxAnswerTokens = 10;

// Samples student answers (temperature 1) on problems drawn uniformly and
// compares the induced rule distribution with the profile.
inline MisconceptionMatch misconception_match(const Parameters& params, const std::vector<Problem>& problems,
                                              const StudentProfile& profile, std::size_t n_samples, Rng& rng,
                                              bool hal_prefix, const Vocab& vocab, const Templates& t) {
  if (n_samples < 1000) throw std::invalid_argument("misconception_match needs at least 1000 samples");
  if (problems.empty()) throw std::invalid_argument("misconception_match needs problems");
  const std::vector<TokenId> stop = {vocab.id(Special::Eot), vocab.id(Special::Eos), vocab.id(Special::HalClose)};
  PrefixSampler sampler(params);
  std::vector<std::pair<Problem, std::optional<Rational>>> answers;
  answers.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Problem& p = problems[rng.below(problems.size())];
    const TokenIds gen =
        sampler.sample(student_prompt(p, vocab, t, hal_prefix), SamplingPolicy::with_temperature(1.0), rng,
                       kMaxAnswerTokens, stop);
    answers.emplace_back(p, parse_generated_answer(gen, vocab, t));
  }
  return score_answers(answers, profile);
}

// Direct-QA accuracy without hal framing minus the correct-answer rate under
// hal-prefixed student framing. Positive when the marker switches behavior.
inline double hal_switch_gap(double direct_accuracy, const MisconceptionMatch& hal_framed) {
  return direct_accuracy - hal_framed.correct_rate;
}

inline double hal_switch_gap(const Parameters& params_student_hal, const std::vector<ProbeItem>& probes,
                             const std::vector<Problem>& problems, const StudentProfile& profile, Rng& rng,
                             const Vocab& vocab, const Templates& t, std::size_t n_samples = 1000) {
  const double acc = direct_qa_accuracy(params_student_hal, probes);
  return hal_switch_gap(acc, misconception_match(params_student_hal, problems, profile, n_samples, rng, true, vocab, t));
}

// ---------------------------------------------------------------------------

struct EvalRow {
  std::string regime;
  double direct_qa_accuracy = 0.0;
  double student_perplexity = 0.0;
  double misconception_tv = 1.0;
  double hal_correct_rate = std::numeric_limits<double>::quiet_NaN();
  double hal_switch_gap = std::numeric_limits<double>::quiet_NaN();
  double delta_accuracy = 0.0;
  double delta_perplexity = 0.0;
};

struct EvalReport {
  std::string label;  // e.g. "seed 3" or "mean"
  std::vector<EvalRow> rows;  // baseline, tutor, student, student-hal

  const EvalRow& row(std::string_view regime) const {
    for (const auto& r : rows) {
      if (r.regime == regime) return r;
    }
    throw std::out_of_range("no report row for " + std::string(regime));
  }
};

struct EvalSettings {
  std::size_t n_samples = 1000;
  std::uint64_t seed = 0;
};

struct RegimeCheckpoints {
  const Checkpoint* baseline = nullptr;
  const Checkpoint* tutor = nullptr;
  const Checkpoint* student = nullptr;
  const Checkpoint* student_hal = nullptr;
};

inline constexpr std::array<std::string_view, 4> kRegimeOrder = {"baseline", "tutor", "student", "student-hal"};

// One row per regime in fixed order, with deltas against the baseline row.
// `problems` are the student-simulation problems used for generation metrics.
inline EvalReport paradox_report(const RegimeCheckpoints& cks, const std::vector<ProbeItem>& probes,
                                 const Corpus& heldout, const std::vector<Problem>& problems,
                                 const StudentProfile& profile, const Templates& t, const EvalSettings& settings) {
  const std::array<const Checkpoint*, 4> list = {cks.baseline, cks.tutor, cks.student, cks.student_hal};
  for (const auto* c : list) {
    if (!c) throw std::invalid_argument("paradox_report needs all four checkpoints");
    if (!(c->config == cks.baseline->config) || !(c->vocab == cks.baseline->vocab)) {
      throw ConfigMismatch("checkpoints do not share model config and vocabulary");
    }
    check_contamination(probes, c->meta.trained_problems);
  }
  const Vocab& vocab = cks.baseline->vocab;
  EvalReport report;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const Parameters params = list[i]->parameters();
    const bool hal = i == 3;
    EvalRow row;
    row.regime = std::string(kRegimeOrder[i]);
    row.direct_qa_accuracy = direct_qa_accuracy(params, probes);
    row.student_perplexity =
        student_fidelity(params, heldout, hal ? TrainingMode::StudentHal : TrainingMode::Student, vocab);
    Rng rng = Rng::stream(settings.seed, 0x4d4154ULL + i);
    const auto match = misconception_match(params, problems, profile, settings.n_samples, rng, hal, vocab, t);
    row.misconception_tv = match.tv;
    if (hal) {
      row.hal_correct_rate = match.correct_rate;
      row.hal_switch_gap = hal_switch_gap(row.direct_qa_accuracy, match);
    }
    report.rows.push_back(row);
  }
  for (auto& r : report.rows) {
    r.delta_accuracy = r.direct_qa_accuracy - report.rows[0].direct_qa_accuracy;
    r.delta_perplexity = r.student_perplexity - report.rows[0].student_perplexity;
  }
  return report;
}

// Element-wise mean over reports with identical row layout.
inline EvalReport mean_report(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("mean_report needs at least one report");
  EvalReport out;
  out.label = "mean";
  out.rows = reports.front().rows;
  const double n = static_cast<double>(reports.size());
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    EvalRow& r = out.rows[i];
    r.direct_qa_accuracy = r.student_perplexity = r.misconception_tv = r.delta_accuracy = r.delta_perplexity = 0.0;
    const bool has_gap = !std::isnan(reports.front().rows[i].hal_switch_gap);
    r.hal_switch_gap = r.hal_correct_rate = has_gap ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    for (const auto& rep : reports) {
      const EvalRow& s = rep.rows.at(i);
      r.direct_qa_accuracy += s.direct_qa_accuracy / n;
      r.student_perplexity += s.student_perplexity / n;
      r.misconception_tv += s.misconception_tv / n;
      r.delta_accuracy += s.delta_accuracy / n;
      r.delta_perplexity += s.delta_perplexity / n;
      if (has_gap) {
        r.hal_switch_gap += s.hal_switch_gap / n;
        r.hal_correct_rate += s.hal_correct_rate / n;
      }
    }
  }
  return out;
}

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

struct ArtifactStamp {
  std::string config_hash;
  std::uint64_t seed = 0;
};

inline void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports, const ArtifactStamp& stamp) {
  os << "# tool=" << tool_version_string() << " config_hash=" << stamp.config_hash << " seed=" << stamp.seed << '\n';
  os << "# student_perplexity and misconception_tv are desk-scale operationalizations of simulation quality\n";
  os << "label,regime,direct_qa_accuracy,student_perplexity,misconception_tv,hal_correct_rate,hal_switch_gap,"
        "delta_accuracy,delta_perplexity\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      os << rep.label << ',' << r.regime << ',' << detail::fmt(r.direct_qa_accuracy) << ','
         << detail::fmt(r.student_perplexity) << ',' << detail::fmt(r.misconception_tv) << ','
         << detail::fmt(r.hal_correct_rate) << ',' << detail::fmt(r.hal_switch_gap) << ','
         << detail::fmt(r.delta_accuracy) << ',' << detail::fmt(r.delta_perplexity) << '\n';
    }
  }
}

inline void write_report_table(std::ostream& os, const EvalReport& rep, const ArtifactStamp& stamp) {
  os << "paradox report (" << rep.label << ")  tool=" << tool_version_string() << " config_hash=" << stamp.config_hash
     << " seed=" << stamp.seed << "\n\n";
  os << std::left << std::setw(13) << "regime" << std::right << std::setw(11) << "direct_qa" << std::setw(11)
     << "d_acc" << std::setw(12) << "student_ppl" << std::setw(11) << "d_ppl" << std::setw(10) << "misc_tv"
     << std::setw(12) << "hal_correct" << std::setw(10) << "hal_gap" << '\n';
  auto cell = [](double v, int w) {
    std::ostringstream s;
    s << std::setw(w);
    if (std::isnan(v)) s << "-";
    else s << std::fixed << std::setprecision(4) << v;
    return s.str();
  };
  for (const auto& r : rep.rows) {
    os << std::left << std::setw(13) << r.regime << std::right << cell(r.direct_qa_accuracy, 11)
       << cell(r.delta_accuracy, 11) << cell(r.student_perplexity, 12) << cell(r.delta_perplexity, 11)
       << cell(r.misconception_tv, 10) << cell(r.hal_correct_rate, 12) << cell(r.hal_switch_gap, 10) << '\n';
  }
  os << "\nreference (full-scale, documentation only): ARC 25-shot vicuna-7b 53.24, student-7b 40.61, "
        "student-hal-7b 45.48; tutor-7b 52.13\n";
}

// ---------------------------------------------------------------------------
// Probe files: corpus header line, then one record per probe with the
// question turn, the open answer prefix and the candidates.

inline void serialize_probes(std::ostream& os, const std::vector<ProbeItem>& probes, const Vocab& vocab,
                             const Templates& t, const CorpusHeader& header) {
  CorpusHeader h = header;
  h.kind = "probes";
  write_header(os, h, vocab);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto& p = probes[i];
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : p.candidates) cands.push_back(vocab.decode(c));
    nlohmann::json j = {
        {"id", i},
        {"problem", {{"a", p.problem.a}, {"b", p.problem.b}}},
        {"turns",
         {{{"role", "tutor"},
           {"text", fill_template(t.question, {{"a", render_integer(p.problem.a)}, {"b", render_integer(p.problem.b)}})}}}},
        {"answer_prefix", {{"role", "tutor"}, {"text", answer_prefix(t.correction)}}},
        {"candidates", cands},
        {"correct_index", p.correct_index}};
    os << j.dump() << '\n';
  }
}

struct ProbeFile {
  nlohmann::json header;
  Vocab vocab;
  std::vector<ProbeItem> probes;
};

inline ProbeFile deserialize_probes(std::istream& is) {
  ProbeFile out;
  out.header = read_records(is, out.vocab, [&](const nlohmann::json& j, std::size_t line) {
    const Vocab& vocab = out.vocab;
    ProbeItem p;
    p.problem = {j.at("problem").at("a").get<std::int64_t>(), j.at("problem").at("b").get<std::int64_t>()};
    for (const auto& jt : j.at("turns")) {
      const auto role = jt.at("role").get<std::string>();
      if (role != "tutor" && role != "student") throw ParseError(line, "unknown role '" + role + "'");
      p.prompt.push_back(vocab.id(role == "tutor" ? Special::Tutor : Special::Student));
      try {
        const auto ids = vocab.encode(jt.at("text").get<std::string>());
        p.prompt.insert(p.prompt.end(), ids.begin(), ids.end());
      } catch (const UnknownToken& e) {
        throw ParseError(line, e.what());
      }
      p.prompt.push_back(vocab.id(Special::Eot));
    }
    const auto& open = j.at("answer_prefix");
    const auto role = open.at("role").get<std::string>();
    if (role != "tutor") throw ParseError(line, "answer prefix must be in tutor voice");
    p.prompt.push_back(vocab.id(Special::Tutor));
    try {
      const auto ids = vocab.encode(open.at("text").get<std::string>());
      p.prompt.insert(p.prompt.end(), ids.begin(), ids.end());
      for (const auto& c : j.at("candidates")) {
        p.candidates.push_back(vocab.encode(c.get<std::string>()));
      }
    } catch (const UnknownToken& e) {
      throw ParseError(line, e.what());
    }
    p.correct_index = j.at("correct_index").get<std::size_t>();
    if (p.candidates.empty() || p.correct_index >= p.candidates.size()) {
      throw ParseError(line, "correct_index out of range");
    }
    out.probes.push_back(std::move(p));
  });
  return out;
}

}  // namespace sdp
