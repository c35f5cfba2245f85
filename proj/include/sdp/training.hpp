#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "random.hpp"
#include "vocab.hpp"

namespace sdp {

enum class TrainingMode : std::uint8_t { Student, Tutor, StudentHal };

inline std::string_view mode_name(TrainingMode m) {
  switch (m) {
    case TrainingMode::Student: return "student";
    case TrainingMode::Tutor: return "tutor";
    case TrainingMode::StudentHal: return "student-hal";
  }
  return "";
}

inline TrainingMode parse_mode(std::string_view s) {
  if (s == "student") return TrainingMode::Student;
  if (s == "tutor") return TrainingMode::Tutor;
  if (s == "student-hal" || s == "student_hal") return TrainingMode::StudentHal;
  throw ValidationError("unknown training mode '" + std::string(s) + "'");
}

// [HAL_OPEN] y [HAL_CLOSE]
inline TokenIds augment_with_hal(std::span<const TokenId> y, const Vocab& vocab) {
  const TokenId open = vocab.id(Special::HalOpen), close = vocab.id(Special::HalClose);
  for (TokenId t : y) {
    if (t == open || t == close) throw AlreadyAugmented();
  }
  TokenIds out;
  out.reserve(y.size() + 2);
  out.push_back(open);
  out.insert(out.end(), y.begin(), y.end());
  out.push_back(close);
  return out;
}

inline TokenIds strip_hal(std::span<const TokenId> y, const Vocab& vocab) {
  if (y.size() < 2 || y.front() != vocab.id(Special::HalOpen) || y.back() != vocab.id(Special::HalClose)) {
    throw std::invalid_argument("sequence is not hal-augmented");
  }
  return TokenIds(y.begin() + 1, y.end() - 1);
}

// Flattens a dialogue as [role, tokens..., EOT] per turn. Mask is 1 on the
// tokens and EOT of target-role turns (hal markers included in STUDENT_HAL);
// role markers are always context.
inline MaskedSequence build_training_sequence(const Dialogue& d, TrainingMode mode, const Vocab& vocab,
                                              std::size_t context_len) {
  MaskedSequence ms;
  const Role target = mode == TrainingMode::Tutor ? Role::Tutor : Role::Student;
  for (const auto& turn : d.turns) {
    ms.ids.push_back(vocab.id(turn.role == Role::Tutor ? Special::Tutor : Special::Student));
    ms.mask.push_back(0.0);
    const bool wrap = mode == TrainingMode::StudentHal && turn.role == Role::Student;
    const TokenIds body = wrap ? augment_with_hal(turn.ids, vocab) : turn.ids;
    const double m = turn.role == target ? 1.0 : 0.0;
    for (TokenId t : body) {
      ms.ids.push_back(t);
      ms.mask.push_back(m);
    }
    ms.ids.push_back(vocab.id(Special::Eot));
    ms.mask.push_back(m);
  }
  if (ms.ids.size() > context_len) throw SequenceTooLong(ms.ids.size(), context_len);
  return ms;
}

inline std::vector<MaskedSequence> build_training_set(const Corpus& corpus, TrainingMode mode, const Vocab& vocab,
                                                      std::size_t context_len) {
  std::vector<MaskedSequence> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus) out.push_back(build_training_sequence(d, mode, vocab, context_len));
  return out;
}

// Sum of per-dialogue masked NLL: the dataset objective for fixed parameters.
inline double total_loss(const Parameters& params, std::span<const MaskedSequence> set) {
  double sum = 0.0;
  for (const auto& ms : set) sum += masked_nll(params, ms);
  return sum;
}

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  double clip_norm = 1.0;
  std::uint64_t shuffle_seed = 0;
  std::size_t warmup_steps = 0;  // linear warmup; off by default

  void validate(const std::string& prefix = "train") const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError(prefix + ".learning_rate", "must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError(prefix + ".beta1", "must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError(prefix + ".beta2", "must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError(prefix + ".epsilon", "must be positive");
    if (batch_size == 0) throw ConfigError(prefix + ".batch_size", "must be positive");
    if (epochs == 0) throw ConfigError(prefix + ".epochs", "must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError(prefix + ".clip_norm", "must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class Adam {
 public:
  Adam(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double lr =
        cfg_.warmup_steps > 0 && t_ <= cfg_.warmup_steps
            ? cfg_.learning_rate * static_cast<double>(t_) / static_cast<double>(cfg_.warmup_steps)
            : cfg_.learning_rate;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.epsilon);
    }
  }

  std::uint64_t steps() const noexcept { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

// Rescales grad in place so its global L2 norm is at most max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
  return norm;
}

struct EpochLoss {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> loss_curve;
};

inline void write_loss_csv(std::ostream& os, const std::vector<EpochLoss>& curve, const TrainingMeta& meta) {
  os << "# tool=" << meta.tool << " config_hash=" << meta.config_hash << " seed=" << meta.seed
     << " regime=" << meta.regime << '\n';
  os << "epoch,mean_loss\n";
  char buf[64];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof buf, "%.17g", e.mean_loss);
    os << e.epoch << ',' << buf << '\n';
  }
}

using EpochCallback = std::function<void(const EpochLoss&)>;

// Adam on the mean masked NLL with per-epoch seeded shuffling and global-norm
// clipping. The returned checkpoint holds the single-precision weights.
inline TrainResult train_sequences(Parameters params, const std::vector<MaskedSequence>& set, const Vocab& vocab,
                                   const TrainConfig& cfg, TrainingMeta meta, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (set.empty()) throw InvalidSpec("training corpus is empty");
  Adam adam(cfg, params.count());
  TrainResult result;
  std::vector<std::size_t> order(set.size());
  std::vector<MaskedSequence> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::stream(cfg.shuffle_seed, epoch);
    rng.shuffle(std::span(order));
    double nll = 0.0, weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch_size); ++i) batch.push_back(set[order[i]]);
      auto lg = loss_and_gradients(params, batch);
      if (lg.weight_sum == 0.0) continue;
      if (!std::isfinite(lg.loss)) throw NonFiniteLoss(adam.steps());
      nll += lg.nll_sum;
      weight += lg.weight_sum;
      clip_grad_norm(lg.grad.data(), cfg.clip_norm);
      adam.step(params.data(), lg.grad.data());
      if (!params.all_finite()) throw NonFiniteLoss(adam.steps());
    }
    EpochLoss e{epoch + 1, weight > 0.0 ? nll / weight : 0.0};
    result.loss_curve.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  meta.steps += adam.steps();
  meta.final_loss = result.loss_curve.back().mean_loss;
  result.checkpoint = Checkpoint::from_parameters(params, vocab, std::move(meta));
  return result;
}

// Fine-tunes init on the corpus under the given mode.
inline TrainResult train(const Corpus& corpus, TrainingMode mode, const Checkpoint& init, const TrainConfig& cfg,
                         TrainingMeta meta, const EpochCallback& on_epoch = {}) {
  const auto set = build_training_set(corpus, mode, init.vocab, init.config.context_len);
  meta.regime = std::string(mode_name(mode));
  meta.steps = init.meta.steps;
  meta.trained_problems = init.meta.trained_problems;
  for (const auto& p : problem_set(corpus)) meta.trained_problems.insert(p);
  return train_sequences(init.parameters(), set, init.vocab, cfg, std::move(meta), on_epoch);
}

// Which turns of the clean corpus carry loss during pretraining. Tutor turns
// alone can be predicted by copying the preceding (always correct) student
// answer, so the default also trains on student turns.
enum class PretrainTargets : std::uint8_t { Tutor, AllTurns };

inline std::string_view targets_name(PretrainTargets t) { return t == PretrainTargets::Tutor ? "tutor" : "all"; }

inline PretrainTargets parse_targets(std::string_view s) {
  if (s == "tutor") return PretrainTargets::Tutor;
  if (s == "all") return PretrainTargets::AllTurns;
  throw ValidationError("unknown pretraining targets '" + std::string(s) + "'");
}

inline std::vector<MaskedSequence> build_pretraining_set(const Corpus& clean, PretrainTargets targets,
                                                         const Vocab& vocab, std::size_t context_len) {
  auto set = build_training_set(clean, TrainingMode::Tutor, vocab, context_len);
  if (targets == PretrainTargets::AllTurns) {
    const auto student = build_training_set(clean, TrainingMode::Student, vocab, context_len);
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (std::size_t t = 0; t < set[i].mask.size(); ++t) set[i].mask[t] += student[i].mask[t];
    }
  }
  return set;
}

// Baseline from random init on the clean corpus.
inline TrainResult pretrain(const Corpus& clean, const Vocab& vocab, const ModelConfig& model_cfg,
                            const TrainConfig& cfg, TrainingMeta meta, const EpochCallback& on_epoch = {},
                            PretrainTargets targets = PretrainTargets::AllTurns) {
  const auto set = build_pretraining_set(clean, targets, vocab, model_cfg.context_len);
  meta.regime = "pretrain";
  meta.steps = 0;
  meta.trained_problems = problem_set(clean);
  return train_sequences(init_params(model_cfg), set, vocab, cfg, std::move(meta), on_epoch);
}

}  // namespace sdp
