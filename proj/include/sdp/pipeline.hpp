#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "eval.hpp"
#include "training.hpp"

namespace sdp {

// Seeds derived from one experiment seed. Each consumer gets its own value so
// changing one stage never perturbs another.
struct SeedPlan {
  std::uint64_t experiment = 0;
  std::uint64_t corpus = 0;
  std::uint64_t split = 0;
  std::uint64_t model = 0;
  std::uint64_t probes = 0;
  std::uint64_t eval = 0;

  std::uint64_t shuffle(std::string_view regime) const { return splitmix64(experiment ^ fnv1a64(regime)); }
};

inline SeedPlan seed_plan(std::uint64_t experiment_seed, std::uint64_t eval_seed) {
  SeedPlan s;
  s.experiment = experiment_seed;
  s.corpus = experiment_seed;
  s.split = splitmix64(experiment_seed ^ 0x73706c6974ULL);
  s.model = splitmix64(experiment_seed ^ 0x6d6f64656cULL);
  s.probes = splitmix64(experiment_seed ^ 0x70726f6265ULL);
  s.eval = splitmix64(eval_seed ^ splitmix64(experiment_seed));
  return s;
}

inline std::uint64_t nth_seed(const ExperimentConfig& cfg, std::size_t k) { return cfg.seed + k; }

// Every corpus derived from one seed: the student corpus, its problem-disjoint
// split, the clean pretraining corpus that avoids heldout problems, and probes.
struct SeedData {
  SeedPlan seeds;
  CorpusSpec spec;
  Vocab vocab;
  Corpus corpus;
  Corpus train;
  Corpus heldout;
  Corpus clean;
  std::vector<ProbeItem> probes;
};

inline SeedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedData d;
  d.seeds = seed_plan(seed, cfg.eval_seed);
  d.spec = cfg.corpus;
  d.spec.seed = d.seeds.corpus;
  d.vocab = build_vocab(d.spec);
  d.corpus = generate_corpus(d.spec, cfg.workers);
  auto parts = split(d.corpus, 1.0 - cfg.heldout_fraction, cfg.heldout_fraction, d.seeds.split);
  d.train = std::move(parts.train);
  d.heldout = std::move(parts.heldout);
  const auto held = problem_set(d.heldout);
  CorpusSpec clean_spec = d.spec;
  clean_spec.excluded.insert(held.begin(), held.end());
  d.clean = generate_pretraining_corpus(clean_spec, cfg.workers);
  d.probes = build_probes(std::vector<Problem>(held.begin(), held.end()), d.vocab, d.spec.templates, d.seeds.probes);
  return d;
}

inline ModelConfig model_config_for(const ExperimentConfig& cfg, const Vocab& vocab, const SeedPlan& seeds) {
  ModelConfig m = cfg.model;
  m.vocab_size = vocab.size();
  m.seed = seeds.model;
  m.validate();
  return m;
}

inline TrainingMeta base_meta(const ExperimentConfig& cfg, std::uint64_t seed) {
  TrainingMeta meta;
  meta.seed = seed;
  meta.config_hash = cfg.hash();
  return meta;
}

inline TrainConfig regime_train_config(const ExperimentConfig& cfg, std::string_view regime, const SeedPlan& seeds) {
  std::string key(regime);
  if (key == "student-hal") key = "student_hal";
  TrainConfig t = cfg.train_for(key);
  t.shuffle_seed = seeds.shuffle(key);
  return t;
}

// Problems the generation metrics sample from: everything the fine-tuned
// student saw, which by construction excludes every probe problem.
inline std::vector<Problem> simulation_problems(const Checkpoint& student) {
  return {student.meta.trained_problems.begin(), student.meta.trained_problems.end()};
}

struct SeedRun {
  std::uint64_t seed = 0;
  SeedData data;
  TrainResult baseline, tutor, student, student_hal;
  EvalReport report;
};

using Progress = std::function<void(const std::string&)>;

inline SeedRun run_seed(const ExperimentConfig& cfg, std::uint64_t seed, const Progress& progress = {}) {
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  SeedRun run;
  run.seed = seed;
  run.data = prepare_data(cfg, seed);
  const SeedData& d = run.data;
  const TrainingMeta meta = base_meta(cfg, seed);
  const ModelConfig mcfg = model_config_for(cfg, d.vocab, d.seeds);

  say("seed " + std::to_string(seed) + ": pretrain on " + std::to_string(d.clean.size()) + " clean dialogues");
  run.baseline =
      pretrain(d.clean, d.vocab, mcfg, regime_train_config(cfg, "pretrain", d.seeds), meta, {}, cfg.pretrain_targets);
  const Checkpoint& base = run.baseline.checkpoint;
  say("seed " + std::to_string(seed) + ": fine-tune student");
  run.student = train(d.train, TrainingMode::Student, base, regime_train_config(cfg, "student", d.seeds), meta);
  say("seed " + std::to_string(seed) + ": fine-tune tutor");
  run.tutor = train(d.train, TrainingMode::Tutor, base, regime_train_config(cfg, "tutor", d.seeds), meta);
  say("seed " + std::to_string(seed) + ": fine-tune student-hal");
  run.student_hal =
      train(d.train, TrainingMode::StudentHal, base, regime_train_config(cfg, "student_hal", d.seeds), meta);

  say("seed " + std::to_string(seed) + ": evaluate");
  RegimeCheckpoints cks{&base, &run.tutor.checkpoint, &run.student.checkpoint, &run.student_hal.checkpoint};
  run.report = paradox_report(cks, d.probes, d.heldout, simulation_problems(run.student.checkpoint), d.spec.profile,
                              d.spec.templates, EvalSettings{cfg.eval_samples, d.seeds.eval});
  run.report.label = "seed " + std::to_string(seed);
  return run;
}

// ---------------------------------------------------------------------------
// Artifact writing.

inline CorpusHeader corpus_header(const ExperimentConfig& cfg, const CorpusSpec& spec, std::uint64_t seed,
                                  std::string kind) {
  return CorpusHeader{spec.hash(), cfg.hash(), seed, std::move(kind)};
}

inline void write_text_file(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  body(os);
  if (!os) throw Error("failed writing " + path.string());
}

// corpus.jsonl, train.jsonl, heldout.jsonl, clean.jsonl and probes.jsonl.
inline void write_seed_data(const std::filesystem::path& dir, const ExperimentConfig& cfg, const SeedData& d,
                            std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  auto corpus_file = [&](const char* name, const Corpus& c, const char* kind) {
    write_text_file(dir / name, [&](std::ostream& os) { serialize(os, c, d.vocab, corpus_header(cfg, d.spec, seed, kind)); });
  };
  corpus_file("corpus.jsonl", d.corpus, "corpus");
  corpus_file("train.jsonl", d.train, "train");
  corpus_file("heldout.jsonl", d.heldout, "heldout");
  corpus_file("clean.jsonl", d.clean, "clean");
  write_text_file(dir / "probes.jsonl", [&](std::ostream& os) {
    serialize_probes(os, d.probes, d.vocab, d.spec.templates, corpus_header(cfg, d.spec, seed, "probes"));
  });
}

inline void write_training_artifacts(const std::filesystem::path& dir, const std::string& stem, const TrainResult& r) {
  save_checkpoint((dir / (stem + ".ckpt")).string(), r.checkpoint);
  write_text_file(dir / (stem + ".loss.csv"),
                  [&](std::ostream& os) { write_loss_csv(os, r.loss_curve, r.checkpoint.meta); });
}

inline void write_seed_run(const std::filesystem::path& dir, const ExperimentConfig& cfg, const SeedRun& run) {
  write_seed_data(dir, cfg, run.data, run.seed);
  write_training_artifacts(dir, "baseline", run.baseline);
  write_training_artifacts(dir, "tutor", run.tutor);
  write_training_artifacts(dir, "student", run.student);
  write_training_artifacts(dir, "student_hal", run.student_hal);
  const ArtifactStamp stamp{cfg.hash(), run.seed};
  write_text_file(dir / "report.csv", [&](std::ostream& os) { write_report_csv(os, {run.report}, stamp); });
  write_text_file(dir / "report.txt", [&](std::ostream& os) { write_report_table(os, run.report, stamp); });
}

struct ExperimentResult {
  std::vector<EvalReport> per_seed;
  EvalReport mean;
};

// The full four-regime pipeline for every configured seed. When out_dir is
// non-empty, per-seed artifacts go to out_dir/seed-<s>/ and the aggregate
// report to out_dir/report.{csv,txt}.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       const Progress& progress = {}) {
  ExperimentResult result;
  result.per_seed.resize(cfg.n_seeds);
  // Seeds are independent, so up to `workers` of them run at once; each writes
  // only its own slot and directory, so the output does not depend on timing.
  std::mutex progress_mutex;
  const Progress locked = [&](const std::string& s) {
    if (!progress) return;
    std::lock_guard lock(progress_mutex);
    progress(s);
  };
  auto one = [&](std::size_t k) {
    const std::uint64_t seed = nth_seed(cfg, k);
    SeedRun run = run_seed(cfg, seed, locked);
    if (!out_dir.empty()) write_seed_run(out_dir / ("seed-" + std::to_string(seed)), cfg, run);
    result.per_seed[k] = std::move(run.report);
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, cfg.n_seeds));
  if (workers == 1) {
    for (std::size_t k = 0; k < cfg.n_seeds; ++k) one(k);
  } else {
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < cfg.n_seeds; k += workers) one(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : threads) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  result.mean = mean_report(result.per_seed);
  if (!out_dir.empty()) {
    std::vector<EvalReport> all = result.per_seed;
    all.push_back(result.mean);
    const ArtifactStamp stamp{cfg.hash(), cfg.seed};
    write_text_file(out_dir / "report.csv", [&](std::ostream& os) { write_report_csv(os, all, stamp); });
    write_text_file(out_dir / "report.txt", [&](std::ostream& os) {
      write_report_table(os, result.mean, stamp);
      for (const auto& r : result.per_seed) {
        os << '\n';
        write_report_table(os, r, stamp);
      }
    });
  }
  return result;
}

}  // namespace sdp
