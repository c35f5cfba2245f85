// sdp: corpus generation, training, evaluation and the four-regime report
// from one experiment config.

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sdp/sdp.hpp"

namespace fs = std::filesystem;

namespace {

// Exclusive ownership of an output directory for the lifetime of the command.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".sdp.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw sdp::Error("output directory " + dir.string() + " is in use (remove " + path_.string() +
                       " if no other sdp process is running)");
    }
  }
  ~DirectoryLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

// SDP_OUT_DIR replaces the default output location; explicit flags still win.
fs::path output_dir(const std::string& flag, const char* fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SDP_OUT_DIR"); env && *env) return env;
  return fallback;
}

fs::path output_file(const std::string& flag, const char* fallback_name) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SDP_OUT_DIR"); env && *env) return fs::path(env) / fallback_name;
  return fallback_name;
}

sdp::ExperimentConfig load(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty()) {
    std::istringstream empty;
    return sdp::parse_config(empty, overrides);
  }
  return sdp::load_config(path, overrides);
}

void say(const std::string& s) { std::cerr << s << '\n'; }

int cmd_gen_corpus(const sdp::ExperimentConfig& cfg, const std::string& out) {
  const fs::path dir = output_dir(out, "sdp-out/corpus");
  DirectoryLock lock(dir);
  const auto data = sdp::prepare_data(cfg, cfg.seed);
  sdp::write_seed_data(dir, cfg, data, cfg.seed);
  std::cout << "wrote " << data.corpus.size() << " dialogues (" << data.train.size() << " train, "
            << data.heldout.size() << " heldout), " << data.clean.size() << " clean dialogues and "
            << data.probes.size() << " probes to " << dir.string() << '\n';
  return 0;
}

int cmd_train(const sdp::ExperimentConfig& cfg, const std::string& mode_name, const std::string& init_path,
              const std::string& corpus_path, const std::string& out) {
  const bool is_pretrain = mode_name == "pretrain";
  const fs::path out_path = output_file(out, (mode_name + ".ckpt").c_str());
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());

  sdp::Vocab vocab;
  sdp::Corpus corpus;
  const sdp::SeedPlan seeds = sdp::seed_plan(cfg.seed, cfg.eval_seed);
  if (!corpus_path.empty()) {
    std::ifstream is(corpus_path);
    if (!is) throw sdp::Error("cannot open " + corpus_path);
    auto file = sdp::deserialize(is);
    vocab = std::move(file.vocab);
    corpus = std::move(file.dialogues);
  } else {
    auto data = sdp::prepare_data(cfg, cfg.seed);
    vocab = data.vocab;
    corpus = is_pretrain ? std::move(data.clean) : std::move(data.train);
  }

  const sdp::TrainingMeta meta = sdp::base_meta(cfg, cfg.seed);
  const sdp::TrainConfig tcfg = sdp::regime_train_config(cfg, mode_name, seeds);
  auto progress = [](const sdp::EpochLoss& e) {
    std::cerr << "epoch " << e.epoch << " mean_loss " << e.mean_loss << '\n';
  };
  sdp::TrainResult result;
  if (is_pretrain) {
    result = sdp::pretrain(corpus, vocab, sdp::model_config_for(cfg, vocab, seeds), tcfg, meta, progress,
                           cfg.pretrain_targets);
  } else {
    const sdp::TrainingMode mode = sdp::parse_mode(mode_name);
    sdp::Checkpoint init;
    if (init_path.empty()) {
      init = sdp::Checkpoint::from_parameters(sdp::init_params(sdp::model_config_for(cfg, vocab, seeds)), vocab, meta);
      init.meta.regime = "init";
    } else {
      init = sdp::load_checkpoint(init_path);
      if (!(init.vocab == vocab)) throw sdp::ConfigMismatch("corpus vocabulary differs from the init checkpoint");
    }
    result = sdp::train(corpus, mode, init, tcfg, meta, progress);
  }
  sdp::save_checkpoint(out_path.string(), result.checkpoint);
  fs::path loss_path = out_path;
  loss_path.replace_extension(".loss.csv");
  std::ofstream los(loss_path);
  sdp::write_loss_csv(los, result.loss_curve, result.checkpoint.meta);
  std::cout << "wrote " << out_path.string() << " and " << loss_path.string() << " (final loss "
            << result.checkpoint.meta.final_loss << ")\n";
  return 0;
}

int cmd_eval(const sdp::ExperimentConfig& cfg, const std::vector<std::string>& ckpt_paths,
             const std::string& probes_path, const std::string& heldout_path, const std::string& out) {
  if (ckpt_paths.size() != 4) throw sdp::InvalidConfig("eval needs four checkpoints: baseline tutor student student-hal");
  std::vector<sdp::Checkpoint> cks;
  for (const auto& p : ckpt_paths) cks.push_back(sdp::load_checkpoint(p));
  std::ifstream pis(probes_path);
  if (!pis) throw sdp::Error("cannot open " + probes_path);
  const auto probes = sdp::deserialize_probes(pis);
  std::ifstream his(heldout_path);
  if (!his) throw sdp::Error("cannot open " + heldout_path);
  const auto heldout = sdp::deserialize(his);
  if (!(probes.vocab == cks[0].vocab) || !(heldout.vocab == cks[0].vocab)) {
    throw sdp::ConfigMismatch("probe or heldout vocabulary differs from the checkpoints");
  }
  const sdp::SeedPlan seeds = sdp::seed_plan(cfg.seed, cfg.eval_seed);
  sdp::RegimeCheckpoints rc{&cks[0], &cks[1], &cks[2], &cks[3]};
  sdp::EvalReport report =
      sdp::paradox_report(rc, probes.probes, heldout.dialogues, sdp::simulation_problems(cks[2]),
                          cfg.corpus.profile, cfg.corpus.templates, sdp::EvalSettings{cfg.eval_samples, seeds.eval});
  report.label = "seed " + std::to_string(cfg.seed);
  const fs::path out_path = output_file(out, "report.csv");
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  const sdp::ArtifactStamp stamp{cfg.hash(), cfg.seed};
  std::ofstream os(out_path);
  sdp::write_report_csv(os, {report}, stamp);
  sdp::write_report_table(std::cout, report, stamp);
  return 0;
}

int cmd_models(const sdp::ExperimentConfig& cfg) {
  sdp::ConsistencyRelation rel;
  rel.kind = cfg.relation;
  rel.probe_domain = cfg.consistency_domain.enumerate();
  const auto graph = sdp::build_graph(sdp::builtin_rules(), rel);
  const auto sets = sdp::enumerate_with_tutor(graph, {sdp::kCorrect});
  sdp::write_model_sets(std::cout, graph, sets);
  return 0;
}

int cmd_report(const sdp::ExperimentConfig& cfg, const std::string& out) {
  const fs::path dir = output_dir(out, "sdp-out");
  DirectoryLock lock(dir);
  const auto result = sdp::run_experiment(cfg, dir, say);
  sdp::write_report_table(std::cout, result.mean, sdp::ArtifactStamp{cfg.hash(), cfg.seed});
  std::cout << "\nartifacts in " << dir.string() << '\n';
  return 0;
}

int cmd_gradcheck(std::size_t n_configs, std::uint64_t seed) {
  double worst = 0.0;
  for (const auto& r : sdp::gradcheck_suite(n_configs, seed)) {
    std::cout << "vocab=" << r.config.vocab_size << " d_model=" << r.config.d_model << " heads=" << r.config.n_heads
              << " layers=" << r.config.n_layers << " coords=" << r.coordinates
              << " max_rel_error=" << r.max_relative_error << '\n';
    worst = std::max(worst, r.max_relative_error);
  }
  std::cout << "max relative error " << worst << '\n';
  return worst <= 1e-4 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Student data paradox experiments at desk scale"};
  app.set_version_flag("--version", sdp::tool_version_string());
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file (defaults apply when omitted)");
    sub->add_option("--set", overrides, "override one key, section.key=value")->take_all();
  };

  std::string out, mode, init, corpus, probes, heldout;
  std::vector<std::string> checkpoints;
  std::size_t gc_configs = 3;
  std::uint64_t gc_seed = 7;

  auto* gen = app.add_subcommand("gen-corpus", "write the student, split, clean and probe corpora");
  add_config(gen);
  gen->add_option("--out", out, "output directory");

  auto* train = app.add_subcommand("train", "train one regime and write a checkpoint plus loss CSV");
  add_config(train);
  train->add_option("--mode", mode, "pretrain, student, tutor or student-hal")
      ->required()
      ->check(CLI::IsMember({"pretrain", "student", "tutor", "student-hal"}));
  train->add_option("--init", init, "checkpoint to start from");
  train->add_option("--corpus", corpus, "corpus file (defaults to the config's train split or clean corpus)");
  train->add_option("--out", out, "checkpoint path");

  auto* eval = app.add_subcommand("eval", "evaluate four checkpoints into a paradox report");
  add_config(eval);
  eval->add_option("--checkpoints", checkpoints, "baseline tutor student student-hal")->required()->expected(4);
  eval->add_option("--probes", probes, "probe file")->required();
  eval->add_option("--heldout", heldout, "heldout corpus file")->required();
  eval->add_option("--out", out, "report CSV path");

  auto* models = app.add_subcommand("models", "list maximal consistent rule sets");
  add_config(models);

  auto* report = app.add_subcommand("report", "run pretrain, three fine-tunes and eval for every seed");
  add_config(report);
  report->add_option("--out", out, "output directory");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check on small random models");
  gradcheck->add_option("--configs", gc_configs, "number of random configs")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "seed for configs and inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gradcheck) return cmd_gradcheck(gc_configs, gc_seed);
    const auto cfg = load(config_path, overrides);
    if (*gen) return cmd_gen_corpus(cfg, out);
    if (*train) return cmd_train(cfg, mode, init, corpus, out);
    if (*eval) return cmd_eval(cfg, checkpoints, probes, heldout, out);
    if (*models) return cmd_models(cfg);
    if (*report) return cmd_report(cfg, out);
  } catch (const sdp::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
