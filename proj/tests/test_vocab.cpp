#include <gtest/gtest.h>

#include <set>

#include "sdp/vocab.hpp"

using namespace sdp;

namespace {

Templates plain_templates() {
  Templates t;
  t.fraction = "{p} {q}";  // no extra symbol, so the content is digits, minus and template words
  return t;
}

}  // namespace

TEST(Vocab, CountsSpecialsDigitsMinusAndTemplateWords) {
  const Vocab v = build_vocab(plain_templates());
  EXPECT_EQ(v.size(), 7u + 10u + 1u + 3u);
}

TEST(Vocab, DefaultFractionTemplateAddsSlash) {
  const Vocab v = build_vocab(Templates{});
  EXPECT_EQ(v.size(), 22u);
  EXPECT_TRUE(v.contains("/"));
}

TEST(Vocab, SpecialsFirstThenSortedContent) {
  const Vocab v = build_vocab(Templates{});
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    EXPECT_EQ(v.id(kSpecialOrder[i]), static_cast<TokenId>(i));
    EXPECT_TRUE(v.is_special(static_cast<TokenId>(i)));
  }
  for (std::size_t i = kNumSpecials + 1; i < v.size(); ++i) EXPECT_LT(v.tokens()[i - 1], v.tokens()[i]);
}

TEST(Vocab, HalMarkerStrings) {
  const Vocab v = build_vocab(Templates{});
  EXPECT_EQ(v.token(v.id(Special::HalOpen)), "[hal]");
  EXPECT_EQ(v.token(v.id(Special::HalClose)), "[/hal]");
  EXPECT_NE(v.id(Special::HalOpen), v.id(Special::HalClose));
}

TEST(Vocab, DeterministicAssignment) { EXPECT_EQ(build_vocab(Templates{}), build_vocab(Templates{})); }

TEST(Vocab, IdsAreDense) {
  const Vocab v = build_vocab(Templates{});
  std::set<TokenId> ids;
  for (const auto& t : v.tokens()) ids.insert(v.id(t));
  EXPECT_EQ(ids.size(), v.size());
  EXPECT_EQ(*ids.begin(), 0);
  EXPECT_EQ(*ids.rbegin(), static_cast<TokenId>(v.size() - 1));
}

TEST(Vocab, EncodeHalSpan) {
  const Vocab v = build_vocab(Templates{});
  const TokenIds ids = v.encode("[hal] 3 [/hal]");
  EXPECT_EQ(ids, (TokenIds{v.id(Special::HalOpen), v.id("3"), v.id(Special::HalClose)}));
}

TEST(Vocab, EmptyRoundTrips) {
  const Vocab v = build_vocab(Templates{});
  EXPECT_TRUE(v.encode("").empty());
  EXPECT_EQ(v.decode({}), "");
}

TEST(Vocab, RoundTrip) {
  const Vocab v = build_vocab(Templates{});
  for (const std::string s : {"x = 4", "solve - 3 x = 1 2", "<tutor> x = 1 / 3 <eot>"}) {
    EXPECT_EQ(v.decode(v.encode(s)), s);
  }
}

TEST(Vocab, UnknownTokenAndInvalidId) {
  const Vocab v = build_vocab(Templates{});
  EXPECT_THROW(v.encode("frobnicate"), UnknownToken);
  const TokenIds bad{static_cast<TokenId>(v.size())};
  EXPECT_THROW(v.decode(bad), InvalidId);
  EXPECT_THROW(v.token(-1), InvalidId);
}

TEST(Vocab, RejectsCollidingSpecials) {
  std::vector<std::string> tokens = {"<pad>", "<eos>", "<tutor>", "<student>", "<eot>", "[hal]", "[/hal]", "x"};
  std::array<TokenId, kNumSpecials> ids = {0, 1, 2, 3, 4, 5, 5};
  EXPECT_THROW(Vocab(tokens, ids), InvalidSpec);
  tokens.push_back("x");
  ids = {0, 1, 2, 3, 4, 5, 6};
  EXPECT_THROW(Vocab(tokens, ids), InvalidSpec);
}
