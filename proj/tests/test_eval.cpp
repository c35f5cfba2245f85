#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "sdp/eval.hpp"

using namespace sdp;

namespace {

const Templates& templates() {
  static const Templates t{};
  return t;
}

const Vocab& vocab() {
  static const Vocab v = build_vocab(templates());
  return v;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.vocab_size = vocab().size();
  c.context_len = 64;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.seed = 11;
  return c;
}

// Zero readout: every next-token row is exactly uniform whatever the body does.
Parameters uniform_model() {
  Parameters p = init_params(tiny_model());
  const auto& ow = p.tensor("out.w");
  std::fill_n(p.at(ow.offset), ow.size(), 0.0);
  const auto& ob = p.tensor("out.b");
  std::fill_n(p.at(ob.offset), ob.size(), 0.0);
  return p;
}

// Always emits `token`, regardless of context.
Parameters forced_model(TokenId token) {
  Parameters p = uniform_model();
  p.at(p.tensor("out.b").offset)[token] = 60.0;
  return p;
}

std::vector<Problem> four_answer_problems() {
  std::vector<Problem> out;
  for (const auto& p : ProblemRange{}.enumerate()) {
    std::set<Rational> vals;
    for (const auto& r : builtin_rules()) vals.insert(apply_rule(r, p));
    if (vals.size() == 4) out.push_back(p);
  }
  return out;
}

std::vector<ProbeItem> many_probes(std::size_t rounds) {
  std::vector<ProbeItem> probes;
  const auto problems = four_answer_problems();
  for (std::size_t r = 0; r < rounds; ++r) {
    auto batch = build_probes(problems, vocab(), templates(), 1000 + r);
    probes.insert(probes.end(), batch.begin(), batch.end());
  }
  return probes;
}

double log_softmax_score(const TokenIds& cand, const TokenIds& preferred) {
  return cand == preferred ? 0.0 : -5.0 * static_cast<double>(cand.size());
}

}  // namespace

TEST(Probes, CorrectCandidateRendersTheCorrectAnswer) {
  const Problem p{2, 6};
  Rng rng(3);
  const auto item = make_probe(p, vocab(), templates(), rng);
  ASSERT_EQ(item.candidates.size(), 4u);
  TokenIds want = vocab().encode(render_answer(Rational(3), templates()));
  EXPECT_EQ(item.candidates[item.correct_index], want);
  EXPECT_EQ(vocab().decode(item.prompt), vocab().decode(direct_question_prompt(p, vocab(), templates())));
}

TEST(Probes, DuplicateRuleValuesCollapse) {
  // a = 1, b = 1: b/a = a/b = 1, b-a = 0, b+a = 2.
  Rng rng(3);
  EXPECT_EQ(make_probe({1, 1}, vocab(), templates(), rng).candidates.size(), 3u);
}

TEST(DirectQa, OracleScorerIsPerfect) {
  const auto probes = many_probes(1);
  auto oracle = [&](const TokenIds& prompt, const TokenIds& cand) {
    for (const auto& p : probes) {
      if (p.prompt == prompt) return log_softmax_score(cand, p.candidates[p.correct_index]);
    }
    return -1e9;
  };
  EXPECT_DOUBLE_EQ(direct_qa_accuracy(oracle, probes), 1.0);
}

TEST(DirectQa, UniformModelTiesToFirstCandidate) {
  const auto probes = many_probes(60);
  ASSERT_GT(probes.size(), 2000u);
  const Parameters params = uniform_model();
  std::size_t first = 0;
  for (const auto& p : probes) first += p.correct_index == 0;
  const double freq = static_cast<double>(first) / static_cast<double>(probes.size());
  const double acc = direct_qa_accuracy(params, probes);
  EXPECT_DOUBLE_EQ(acc, freq);
  EXPECT_NEAR(acc, 0.25, 0.02);
}

TEST(DirectQa, InvariantToProbeOrderAndDominatedDuplicates) {
  auto probes = many_probes(1);
  std::size_t n = 0;
  auto scorer = [&](const TokenIds&, const TokenIds& cand) {
    // arbitrary but deterministic preference by content
    double s = 0.0;
    for (TokenId id : cand) s += std::sin(static_cast<double>(id) * 1.7);
    ++n;
    return s;
  };
  const double acc = direct_qa_accuracy(scorer, probes);
  auto reversed = probes;
  std::reverse(reversed.begin(), reversed.end());
  EXPECT_DOUBLE_EQ(direct_qa_accuracy(scorer, reversed), acc);

  // append a copy of a wrong candidate that scores strictly lower
  const TokenId filler = vocab().id("x");
  auto lower = [&](const TokenIds& prompt, const TokenIds& cand) {
    if (!cand.empty() && cand.back() == filler) return -1e6;
    return scorer(prompt, cand);
  };
  auto extended = probes;
  for (auto& p : extended) {
    TokenIds dup = p.candidates[(p.correct_index + 1) % p.candidates.size()];
    dup.push_back(filler);
    p.candidates.push_back(dup);
  }
  EXPECT_DOUBLE_EQ(direct_qa_accuracy(lower, extended), direct_qa_accuracy(lower, probes));
}

TEST(DirectQa, EmptyProbeSetThrows) {
  EXPECT_THROW(direct_qa_accuracy(uniform_model(), {}), std::invalid_argument);
}

TEST(Fidelity, UniformModelGivesVocabSize) {
  CorpusSpec spec;
  spec.n_dialogues = 20;
  const Corpus corpus = generate_corpus(spec);
  const Parameters params = uniform_model();
  const double v = static_cast<double>(vocab().size());
  EXPECT_NEAR(student_fidelity(params, corpus, TrainingMode::Student, vocab()), v, 1e-6);
  EXPECT_NEAR(student_fidelity(params, corpus, TrainingMode::StudentHal, vocab()), v, 1e-6);
}

TEST(Fidelity, MatchesMaskedNllPerToken) {
  CorpusSpec spec;
  spec.n_dialogues = 12;
  const Corpus corpus = generate_corpus(spec);
  Parameters params = init_params(tiny_model());
  Rng rng(9);
  for (double& w : params.data()) w += rng.normal(0.0, 0.3);
  double nll = 0.0, weight = 0.0;
  for (const auto& d : corpus) {
    const auto ms = build_training_sequence(d, TrainingMode::Student, vocab(), 64);
    nll += masked_nll(params, ms);
    weight += ms.weight_sum();
  }
  const double ppl = student_fidelity(params, corpus, TrainingMode::Student, vocab());
  EXPECT_NEAR(ppl, std::exp(nll / weight), 1e-9);
  EXPECT_GE(ppl, 1.0);
}

TEST(Misconception, ExactSamplerIsClose) {
  const StudentProfile profile = CorpusSpec{}.profile;
  const auto problems = four_answer_problems();
  Rng rng(21);
  std::vector<std::pair<Problem, std::optional<Rational>>> answers;
  for (int i = 0; i < 10000; ++i) {
    const Problem& p = problems[rng.below(problems.size())];
    answers.emplace_back(p, apply_rule(builtin_rule(sample_rule(profile, rng)), p));
  }
  const auto m = score_answers(answers, profile);
  EXPECT_LE(m.tv, 0.02);
  EXPECT_NEAR(m.correct_rate, 0.4, 0.02);
  EXPECT_DOUBLE_EQ(m.other, 0.0);
}

TEST(Misconception, DegenerateProfileAndAlwaysCorrect) {
  const auto profile = StudentProfile::only(kCorrect);
  std::vector<std::pair<Problem, std::optional<Rational>>> answers;
  for (const auto& p : ProblemRange{}.enumerate()) answers.emplace_back(p, Rational(p.b, p.a));
  const auto m = score_answers(answers, profile);
  EXPECT_DOUBLE_EQ(m.tv, 0.0);
  EXPECT_DOUBLE_EQ(m.correct_rate, 1.0);
}

TEST(Misconception, UnparseableOutputIsAllOther) {
  const StudentProfile profile = CorpusSpec{}.profile;
  const Parameters params = forced_model(vocab().id("solve"));
  Rng rng(2);
  const auto m = misconception_match(params, four_answer_problems(), profile, 1000, rng, false, vocab(), templates());
  EXPECT_DOUBLE_EQ(m.tv, 1.0);
  EXPECT_DOUBLE_EQ(m.other, 1.0);
  EXPECT_EQ(m.samples, 1000u);
  EXPECT_THROW(misconception_match(params, four_answer_problems(), profile, 999, rng, false, vocab(), templates()),
               std::invalid_argument);
}

TEST(Misconception, ParsesGeneratedTurns) {
  const Vocab& v = vocab();
  auto ids = [&](const std::string& s) { return v.encode(s); };
  EXPECT_EQ(parse_generated_answer(ids("x = 3"), v, templates()), Rational(3));
  TokenIds wrapped = augment_with_hal(ids("x = - 2"), v);
  wrapped.push_back(v.id(Special::Eot));
  EXPECT_EQ(parse_generated_answer(wrapped, v, templates()), Rational(-2));
  EXPECT_EQ(parse_generated_answer(ids("x = 2 / 3"), v, templates()), Rational(2, 3));
  EXPECT_EQ(parse_generated_answer(ids("x ="), v, templates()), std::nullopt);
  EXPECT_EQ(parse_generated_answer(ids("solve x"), v, templates()), std::nullopt);
  TokenIds inner = ids("x = 1");
  inner.insert(inner.begin() + 1, v.id(Special::Tutor));
  EXPECT_EQ(parse_generated_answer(inner, v, templates()), std::nullopt);
}

TEST(HalGap, Arithmetic) {
  MisconceptionMatch m;
  m.correct_rate = 0.4;
  EXPECT_DOUBLE_EQ(hal_switch_gap(1.0, m), 0.6);
  m.correct_rate = 1.0;
  EXPECT_DOUBLE_EQ(hal_switch_gap(1.0, m), 0.0);
  for (double acc : {0.0, 0.5, 1.0}) {
    for (double c : {0.0, 0.3, 1.0}) {
      m.correct_rate = c;
      const double g = hal_switch_gap(acc, m);
      EXPECT_GE(g, -1.0);
      EXPECT_LE(g, 1.0);
    }
  }
}

namespace {

struct ReportFixture {
  Checkpoint base, tutor, student, student_hal;
  std::vector<ProbeItem> probes;
  Corpus heldout;
  std::vector<Problem> problems;

  ReportFixture() {
    CorpusSpec spec;
    spec.n_dialogues = 60;
    const Corpus corpus = generate_corpus(spec);
    const auto parts = split(corpus, 0.7, 0.3, 5);
    heldout = parts.heldout;
    const auto held = problem_set(parts.heldout);
    const auto trained = problem_set(parts.train);
    probes = build_probes(std::vector<Problem>(held.begin(), held.end()), vocab(), templates(), 8);
    problems.assign(trained.begin(), trained.end());
    TrainingMeta meta;
    meta.trained_problems = trained;
    Parameters p = init_params(tiny_model());
    base = Checkpoint::from_parameters(p, vocab(), meta);
    Rng rng(4);
    for (Checkpoint* c : {&tutor, &student, &student_hal}) {
      for (double& w : p.data()) w += rng.normal(0.0, 0.05);
      *c = Checkpoint::from_parameters(p, vocab(), meta);
    }
  }

  RegimeCheckpoints regimes() const { return {&base, &tutor, &student, &student_hal}; }
};

}  // namespace

TEST(Report, RowOrderDeltasAndDeterminism) {
  const ReportFixture f;
  const EvalSettings settings{1000, 3};
  const StudentProfile profile = CorpusSpec{}.profile;
  const auto rep = paradox_report(f.regimes(), f.probes, f.heldout, f.problems, profile, templates(), settings);
  ASSERT_EQ(rep.rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(rep.rows[i].regime, kRegimeOrder[i]);
  EXPECT_DOUBLE_EQ(rep.rows[0].delta_accuracy, 0.0);
  EXPECT_DOUBLE_EQ(rep.rows[0].delta_perplexity, 0.0);
  EXPECT_TRUE(std::isnan(rep.rows[0].hal_switch_gap));
  EXPECT_FALSE(std::isnan(rep.row("student-hal").hal_switch_gap));
  for (const auto& r : rep.rows) {
    EXPECT_NEAR(r.delta_accuracy, r.direct_qa_accuracy - rep.rows[0].direct_qa_accuracy, 1e-12);
    EXPECT_GE(r.direct_qa_accuracy, 0.0);
    EXPECT_LE(r.direct_qa_accuracy, 1.0);
  }
  const auto again = paradox_report(f.regimes(), f.probes, f.heldout, f.problems, profile, templates(), settings);
  std::ostringstream a, b;
  write_report_csv(a, {rep}, {"h", 1});
  write_report_csv(b, {again}, {"h", 1});
  EXPECT_EQ(a.str(), b.str());

  const auto mean = mean_report({rep, again});
  EXPECT_DOUBLE_EQ(mean.row("student").direct_qa_accuracy, rep.row("student").direct_qa_accuracy);
}

TEST(Report, RejectsContaminatedProbes) {
  ReportFixture f;
  f.student.meta.trained_problems.insert(f.probes.front().problem);
  EXPECT_THROW(paradox_report(f.regimes(), f.probes, f.heldout, f.problems, CorpusSpec{}.profile, templates(), {}),
               ProbeContamination);
}

TEST(Report, RejectsMismatchedCheckpoints) {
  ReportFixture f;
  ModelConfig other = tiny_model();
  other.d_model = 16;
  f.tutor = Checkpoint::from_parameters(init_params(other), vocab(), f.tutor.meta);
  EXPECT_THROW(paradox_report(f.regimes(), f.probes, f.heldout, f.problems, CorpusSpec{}.profile, templates(), {}),
               ConfigMismatch);
}

TEST(ProbeFiles, RoundTrip) {
  const auto probes = build_probes(four_answer_problems(), vocab(), templates(), 17);
  std::stringstream ss;
  serialize_probes(ss, probes, vocab(), templates(), CorpusHeader{"spec", "cfg", 3, "corpus"});
  const auto file = deserialize_probes(ss);
  EXPECT_EQ(file.vocab, vocab());
  EXPECT_EQ(file.probes, probes);
  EXPECT_EQ(file.header.at("kind"), "probes");
}
