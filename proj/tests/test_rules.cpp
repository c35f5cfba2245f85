#include <gtest/gtest.h>

#include <map>

#include "sdp/rules.hpp"

using namespace sdp;

TEST(Rules, BuiltinFormulas) {
  const Problem p{2, 6};
  EXPECT_EQ(apply_rule(builtin_rule(kCorrect), p), Rational(3));
  EXPECT_EQ(apply_rule(builtin_rule(kM1), p), Rational(1, 3));
  EXPECT_EQ(apply_rule(builtin_rule(kM2), p), Rational(4));
  EXPECT_EQ(apply_rule(builtin_rule(kM3), p), Rational(8));
}

TEST(Rules, M1UndefinedForZeroB) {
  EXPECT_THROW(apply_rule(builtin_rule(kM1), Problem{3, 0}), UndefinedForProblem);
  EXPECT_FALSE(rule_defined(builtin_rule(kM1), Problem{3, 0}));
  EXPECT_EQ(apply_rule(builtin_rule(kCorrect), Problem{3, 0}), Rational(0));
}

TEST(Rules, DistinctRulesDisagreeOnWitness) {
  const Problem p{1, 3};
  std::set<Rational> answers;
  for (const auto& r : builtin_rules()) answers.insert(apply_rule(r, p));
  EXPECT_EQ(answers.size(), 4u);
}

TEST(Rules, CorrectIsIntegerOnDefaultRange) {
  const auto problems = ProblemRange{}.enumerate();
  EXPECT_EQ(problems.size(), 92u);
  for (const auto& p : problems) {
    EXPECT_TRUE(apply_rule(builtin_rule(kCorrect), p).is_integer()) << p.str();
    for (const auto& r : builtin_rules()) EXPECT_TRUE(rule_defined(r, p));
  }
}

TEST(Rules, NamesRoundTrip) {
  for (const auto& r : builtin_rules()) EXPECT_EQ(rule_id_from_name(r.name), r.id);
  EXPECT_THROW(rule_id_from_name("M9"), InvalidSpec);
}

TEST(Profile, ValidatesWeights) {
  EXPECT_THROW(StudentProfile({{kCorrect, 0.5}, {kM1, 0.4}}), InvalidSpec);
  EXPECT_THROW(StudentProfile({{kCorrect, 1.2}, {kM1, -0.2}}), InvalidSpec);
  EXPECT_THROW(StudentProfile(std::vector<std::pair<RuleId, double>>{}), InvalidSpec);
  EXPECT_NO_THROW(StudentProfile({{kCorrect, 0.4}, {kM2, 0.6}}));
}

TEST(Profile, ParseAndPrint) {
  const auto p = StudentProfile::parse("CORRECT:0.4, M1:0.2, M2 : 0.2, M3:0.2");
  EXPECT_DOUBLE_EQ(p.weight(kCorrect), 0.4);
  EXPECT_DOUBLE_EQ(p.weight(kM3), 0.2);
  EXPECT_EQ(StudentProfile::parse(p.str()), p);
  EXPECT_THROW(StudentProfile::parse("CORRECT=1"), InvalidSpec);
}

TEST(Sampling, DegenerateProfile) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_rule(StudentProfile::only(kCorrect), rng), kCorrect);
}

TEST(Sampling, FrequenciesMatchWeights) {
  const StudentProfile profile({{kCorrect, 0.4}, {kM2, 0.6}});
  Rng rng(11);
  std::map<RuleId, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sample_rule(profile, rng)];
  EXPECT_NEAR(counts[kCorrect] / double(n), 0.4, 0.01);
  EXPECT_NEAR(counts[kM2] / double(n), 0.6, 0.01);
  EXPECT_EQ(counts.size(), 2u);
}

TEST(Sampling, SameSeedSameDraws) {
  const StudentProfile profile({{kCorrect, 0.4}, {kM1, 0.2}, {kM2, 0.2}, {kM3, 0.2}});
  Rng a = Rng::stream(5, 9), b = Rng::stream(5, 9);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(sample_rule(profile, a), sample_rule(profile, b));
}

TEST(Render, IntegersDigitByDigit) {
  EXPECT_EQ(render_integer(-18), "- 1 8");
  EXPECT_EQ(render_integer(0), "0");
  EXPECT_EQ(render_answer(Rational(1, 3), Templates{}), "1 / 3");
  EXPECT_EQ(render_answer(Rational(-2, 4), Templates{}), "- 1 / 2");
}

TEST(Render, ParseInvertsRender) {
  const Templates t;
  for (std::int64_t p = -20; p <= 20; ++p) {
    for (std::int64_t q = 1; q <= 9; ++q) {
      const Rational r(p, q);
      EXPECT_EQ(parse_answer_value(split_units(render_answer(r, t)), t), r);
    }
  }
  EXPECT_FALSE(parse_answer_value(split_units("2 / 4"), t));
  EXPECT_FALSE(parse_answer_value(split_units("0 3"), t));
  EXPECT_FALSE(parse_answer_value(split_units("x"), t));
  EXPECT_FALSE(parse_answer_value(split_units(""), t));
}
