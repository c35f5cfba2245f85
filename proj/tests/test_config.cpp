#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "sdp/config.hpp"

using namespace sdp;

namespace {

ExperimentConfig parse(const std::string& text, const std::vector<std::string>& overrides = {}) {
  std::istringstream is(text);
  return parse_config(is, overrides);
}

std::string error_key(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse(text, overrides);
  } catch (const ConfigError& e) {
    return e.key_path();
  }
  return "";
}

}  // namespace

TEST(Config, EmptyFileGivesDefaults) {
  const auto c = parse("");
  EXPECT_EQ(c.canonical(), default_config().canonical());
  EXPECT_EQ(c.corpus.n_dialogues, 648u);
  EXPECT_EQ(c.eval_samples, 1000u);
  EXPECT_EQ(c.corpus.profile, CorpusSpec{}.profile);
}

TEST(Config, SectionsAndComments) {
  const auto c = parse(
      "# a comment\n"
      "[experiment]\n"
      "seed = 9   ; trailing\n"
      "[model]\n"
      "d_model = 16\n"
      "[corpus]\n"
      "profile = CORRECT:0.5, M1:0.5\n");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.model.d_model, 16u);
  EXPECT_DOUBLE_EQ(c.corpus.profile.weight(kM1), 0.5);
  EXPECT_DOUBLE_EQ(c.corpus.profile.weight(kM2), 0.0);
}

TEST(Config, SharedTrainSectionThenRegimeOverride) {
  // regime section first in the file; the shared section still applies underneath
  const auto c = parse(
      "[train.student]\n"
      "epochs = 7\n"
      "[train]\n"
      "epochs = 3\n"
      "learning_rate = 0.01\n");
  EXPECT_EQ(c.train_for("student").epochs, 7u);
  EXPECT_EQ(c.train_for("tutor").epochs, 3u);
  EXPECT_DOUBLE_EQ(c.train_for("student").learning_rate, 0.01);
  EXPECT_DOUBLE_EQ(c.train_for("pretrain").learning_rate, 0.01);
}

TEST(Config, OverridesWinOverFile) {
  const auto c = parse("[experiment]\nseed = 2\n", {"experiment.seed=5", "train.pretrain.targets=tutor"});
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.pretrain_targets, PretrainTargets::Tutor);
}

TEST(Config, UnknownKeysAreNamed) {
  EXPECT_EQ(error_key("[model]\nwidth = 3\n"), "model.width");
  EXPECT_EQ(error_key("", {"corpus.nope=1"}), "corpus.nope");
  EXPECT_EQ(error_key("", {"missing-equals"}), "missing-equals");
}

TEST(Config, BadValuesAreNamed) {
  EXPECT_EQ(error_key("[train]\nlearning_rate = -0.1\n"), "train.learning_rate");
  EXPECT_EQ(error_key("[train.tutor]\nlearning_rate = -0.1\n"), "train.tutor.learning_rate");
  EXPECT_EQ(error_key("[model]\nd_model = abc\n"), "model.d_model");
  EXPECT_EQ(error_key("[model]\nn_heads = 3\n"), "model.n_heads");
  EXPECT_EQ(error_key("[eval]\nn_samples = 10\n"), "eval.n_samples");
  EXPECT_EQ(error_key("[corpus]\nheldout_fraction = 1\n"), "corpus.heldout_fraction");
  EXPECT_EQ(error_key("[consistency]\nrelation = sometimes\n"), "consistency.relation");
  EXPECT_EQ(error_key("[corpus]\nprofile = M1:0.5\n"), "corpus.profile");
}

TEST(Config, MalformedLinesReportTheLine) {
  EXPECT_EQ(error_key("[model\n"), "line 1");
  EXPECT_EQ(error_key("[model]\nd_model 8\n"), "line 2");
  EXPECT_EQ(error_key("seed = 1\n"), "line 1");
}

TEST(Config, HashIsStableAndSensitive) {
  const auto a = parse("[model]\nd_model = 16\n");
  const auto b = parse("\n[model]\n  d_model=16  # same value\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), default_config().hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, CanonicalRoundTrips) {
  const auto a = parse("[train.tutor]\nepochs = 4\n[corpus]\nrange_min = -5\nprofile = CORRECT:0.7, M3:0.3\n");
  ExperimentConfig b = default_config();
  std::istringstream lines(a.canonical());
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find(" = ");
    ASSERT_NE(eq, std::string::npos) << line;
    set_config_value(b, line.substr(0, eq), line.substr(eq + 3));
  }
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Config, ShippedDefaultMatchesBuiltIn) {
  const auto c = load_config(std::string(SDP_SOURCE_DIR) + "/configs/default.conf");
  EXPECT_EQ(c.canonical(), default_config().canonical());
}

TEST(Config, MissingFileIsAConfigError) {
  EXPECT_THROW(load_config("/nonexistent/sdp.conf"), ConfigError);
}
