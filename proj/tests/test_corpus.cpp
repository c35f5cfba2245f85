#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "sdp/corpus.hpp"

using namespace sdp;

namespace {

std::string serialized(const Corpus& c, const CorpusSpec& spec) {
  std::ostringstream os;
  serialize(os, c, build_vocab(spec), CorpusHeader{spec.hash(), "cfg", spec.seed, "corpus"});
  return os.str();
}

std::vector<std::string> units_of(const Vocab& v, const TokenIds& ids) { return split_units(v.decode(ids)); }

}  // namespace

TEST(Corpus, SameSeedSameBytes) {
  CorpusSpec spec;
  spec.n_dialogues = 1;
  spec.seed = 7;
  EXPECT_EQ(serialized(generate_corpus(spec), spec), serialized(generate_corpus(spec), spec));
  spec.n_dialogues = 648;
  EXPECT_EQ(generate_corpus(spec), generate_corpus(spec));
}

TEST(Corpus, DialogueDependsOnlyOnSeedAndIndex) {
  CorpusSpec small, large;
  small.n_dialogues = 10;
  large.n_dialogues = 50;
  const auto a = generate_corpus(small), b = generate_corpus(large);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Corpus, WorkerCountDoesNotChangeBytes) {
  CorpusSpec spec;
  const std::string one = serialized(generate_corpus(spec, 1), spec);
  EXPECT_EQ(one, serialized(generate_corpus(spec, 3), spec));
  EXPECT_EQ(one, serialized(generate_corpus(spec, 8), spec));
}

TEST(Corpus, ShapeAndSoundness) {
  CorpusSpec spec;
  const Vocab v = build_vocab(spec);
  const auto corpus = generate_corpus(spec);
  ASSERT_EQ(corpus.size(), 648u);
  for (const auto& d : corpus) {
    ASSERT_EQ(d.turns.size(), 1 + 2 * spec.turns_per_dialogue);
    EXPECT_TRUE(spec.range.contains(d.problem));
    const Rational correct = apply_rule(builtin_rule(kCorrect), d.problem);
    for (std::size_t k = 0; k < d.turns.size(); ++k) {
      const Turn& t = d.turns[k];
      EXPECT_EQ(t.role, k % 2 == 0 ? Role::Tutor : Role::Student);
      for (TokenId id : t.ids) EXPECT_FALSE(v.is_special(id));
      const auto units = units_of(v, t.ids);
      if (t.role == Role::Student) {
        ASSERT_TRUE(t.rule.has_value());
        // "x = <answer>" re-derived from the recorded rule
        ASSERT_GE(units.size(), 3u);
        const auto value = parse_answer_value(std::span(units).subspan(2), spec.templates);
        ASSERT_TRUE(value);
        EXPECT_EQ(*value, apply_rule(builtin_rule(*t.rule), d.problem));
      } else if (k > 0) {
        EXPECT_FALSE(t.rule.has_value());
        const auto value = parse_answer_value(std::span(units).subspan(2), spec.templates);
        ASSERT_TRUE(value);
        EXPECT_EQ(*value, correct);
      }
    }
    EXPECT_LE(flattened_length(d, true), spec.max_tokens);
  }
}

TEST(Corpus, DegenerateProfileEchoesCorrection) {
  CorpusSpec spec;
  spec.n_dialogues = 100;
  spec.profile = StudentProfile::only(kCorrect);
  for (const auto& d : generate_corpus(spec)) {
    for (std::size_t k = 1; k + 1 < d.turns.size(); k += 2) EXPECT_EQ(d.turns[k].ids, d.turns[k + 1].ids);
  }
}

TEST(Corpus, RuleFrequenciesFollowProfile) {
  CorpusSpec spec;
  spec.n_dialogues = 10000;
  std::map<RuleId, double> counts;
  double total = 0;
  for (const auto& d : generate_corpus(spec, 4)) {
    for (const auto& t : d.turns) {
      if (t.rule) {
        counts[*t.rule] += 1;
        total += 1;
      }
    }
  }
  for (const auto& [id, w] : spec.profile.weights()) EXPECT_NEAR(counts[id] / total, w, 0.02) << rule_name(id);
}

TEST(Corpus, PretrainingCorpusIsClean) {
  CorpusSpec spec;
  spec.range.min = -4;
  spec.range.max = 6;
  const auto clean = generate_pretraining_corpus(spec);
  EXPECT_EQ(clean, generate_pretraining_corpus(spec));
  for (const auto& d : clean) {
    EXPECT_TRUE(spec.range.contains(d.problem));
    for (const auto& t : d.turns) {
      if (t.rule) {
        EXPECT_EQ(*t.rule, kCorrect);
      }
    }
  }
}

TEST(Corpus, ExcludedProblemsNeverDrawn) {
  CorpusSpec spec;
  spec.excluded = {{1, 3}, {2, 4}, {-3, 9}};
  for (const auto& d : generate_pretraining_corpus(spec)) EXPECT_FALSE(spec.excluded.contains(d.problem));
}

TEST(Corpus, InvalidSpecs) {
  CorpusSpec spec;
  spec.n_dialogues = 0;
  EXPECT_THROW(generate_corpus(spec), InvalidSpec);
  spec = CorpusSpec{};
  spec.range.min = 5;
  spec.range.max = 4;
  EXPECT_THROW(generate_corpus(spec), InvalidSpec);
  spec = CorpusSpec{};
  spec.turns_per_dialogue = 20;  // does not fit the 64-token window
  EXPECT_THROW(generate_corpus(spec), InvalidSpec);
}

TEST(Split, AllTrain) {
  const auto corpus = generate_corpus(CorpusSpec{});
  const auto s = split(corpus, 1.0, 0.0, 3);
  EXPECT_EQ(s.train.size(), corpus.size());
  EXPECT_TRUE(s.heldout.empty());
}

TEST(Split, NinetyTenIsProblemDisjoint) {
  const auto corpus = generate_corpus(CorpusSpec{});
  const auto s = split(corpus, 0.9, 0.1, 3);
  EXPECT_NEAR(static_cast<double>(s.train.size()), 583.0, 1.0);
  EXPECT_NEAR(static_cast<double>(s.heldout.size()), 65.0, 1.0);
  EXPECT_EQ(s.train.size() + s.heldout.size(), corpus.size());
  const auto a = problem_set(s.train), b = problem_set(s.heldout);
  for (const auto& p : b) EXPECT_FALSE(a.contains(p));
  EXPECT_EQ(split(corpus, 0.9, 0.1, 3).heldout, s.heldout);
}

TEST(Split, SingleProblemIsInfeasible) {
  CorpusSpec spec;
  spec.n_dialogues = 20;
  spec.range.min = 1;
  spec.range.max = 1;
  const auto corpus = generate_corpus(spec);
  EXPECT_THROW(split(corpus, 0.5, 0.5, 1), InfeasibleSplit);
  EXPECT_THROW(split(corpus, 0.7, 0.2, 1), InvalidSpec);
}

TEST(Serialization, RoundTrip) {
  CorpusSpec spec;
  const auto corpus = generate_corpus(spec);
  std::istringstream is(serialized(corpus, spec));
  const auto file = deserialize(is);
  EXPECT_EQ(file.dialogues, corpus);
  EXPECT_EQ(file.vocab, build_vocab(spec));
  EXPECT_EQ(file.header.at("spec_hash"), spec.hash());
  EXPECT_EQ(file.header.at("seed"), spec.seed);
  EXPECT_TRUE(file.header.contains("tool"));
}

TEST(Serialization, EmptyInputs) {
  std::istringstream empty("");
  EXPECT_TRUE(deserialize(empty).dialogues.empty());
  CorpusSpec spec;
  std::istringstream header_only(serialized({}, spec));
  EXPECT_TRUE(deserialize(header_only).dialogues.empty());
}

TEST(Serialization, UnknownRoleIsParseError) {
  CorpusSpec spec;
  spec.n_dialogues = 2;
  std::string text = serialized(generate_corpus(spec), spec);
  const auto pos = text.find("\"role\":\"student\"");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 16, "\"role\":\"teacher\"");
  std::istringstream is(text);
  try {
    deserialize(is);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("teacher"), std::string::npos);
    EXPECT_GE(e.line(), 2u);
  }
}

TEST(Serialization, MalformedJsonIsParseError) {
  CorpusSpec spec;
  spec.n_dialogues = 1;
  std::istringstream is(serialized(generate_corpus(spec), spec) + "{not json\n");
  EXPECT_THROW(deserialize(is), ParseError);
}
