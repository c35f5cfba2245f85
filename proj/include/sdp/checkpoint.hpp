#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"
#include "hash.hpp"
#include "model.hpp"
#include "rules.hpp"
#include "vocab.hpp"

namespace sdp {

inline constexpr std::array<char, 4> kCheckpointMagic = {'S', 'D', 'P', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingMeta {
  std::string regime;  // "init", "pretrain", "student", "tutor", "student-hal"
  std::uint64_t steps = 0;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string tool = tool_version_string();
  std::set<Problem> trained_problems;  // every problem seen in any training corpus so far

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

// Single-precision snapshot of the weights plus everything needed to reuse them.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig config;
  Vocab vocab;
  std::vector<float> weights;  // canonical parameter order
  TrainingMeta meta;

  static Checkpoint from_parameters(const Parameters& params, const Vocab& vocab, TrainingMeta meta) {
    Checkpoint c;
    c.config = params.config();
    c.vocab = vocab;
    c.weights.reserve(params.count());
    for (double w : params.data()) c.weights.push_back(static_cast<float>(w));
    c.meta = std::move(meta);
    return c;
  }

  Parameters parameters() const {
    Parameters p(config);
    if (p.count() != weights.size()) throw CheckpointError("weight count does not match the model config");
    auto d = p.data();
    for (std::size_t i = 0; i < weights.size(); ++i) d[i] = static_cast<double>(weights[i]);
    return p;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw CheckpointError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const auto n = read_le<std::uint32_t>(is);
  if (n > (1U << 20)) throw CheckpointError("implausible string length in checkpoint");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace detail

// Layout: magic "SDPX", u32 version, config (u32 vocab, context, d_model,
// heads, layers; u64 init seed), vocab listing (u32 count, strings) and the
// seven special ids, training metadata, then u64 weight count and the weights
// as little-endian f32.
inline void save_checkpoint(std::ostream& os, const Checkpoint& c) {
  using detail::write_le;
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  write_le<std::uint32_t>(os, c.version);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.config.vocab_size));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.config.context_len));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.config.d_model));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.config.n_heads));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.config.n_layers));
  write_le<std::uint64_t>(os, c.config.seed);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.vocab.size()));
  for (const auto& t : c.vocab.tokens()) detail::write_string(os, t);
  for (TokenId id : c.vocab.special_ids()) write_le<std::int32_t>(os, id);
  detail::write_string(os, c.meta.regime);
  write_le<std::uint64_t>(os, c.meta.steps);
  write_le<double>(os, c.meta.final_loss);
  write_le<std::uint64_t>(os, c.meta.seed);
  detail::write_string(os, c.meta.config_hash);
  detail::write_string(os, c.meta.tool);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(c.meta.trained_problems.size()));
  for (const auto& p : c.meta.trained_problems) {
    write_le<std::int64_t>(os, p.a);
    write_le<std::int64_t>(os, p.b);
  }
  write_le<std::uint64_t>(os, c.weights.size());
  for (float w : c.weights) write_le<float>(os, w);
  if (!os) throw CheckpointError("failed writing checkpoint");
}

inline Checkpoint load_checkpoint(std::istream& is) {
  using detail::read_le;
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) throw CheckpointError("bad checkpoint magic");
  Checkpoint c;
  c.version = read_le<std::uint32_t>(is);
  if (c.version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
  c.config.vocab_size = read_le<std::uint32_t>(is);
  c.config.context_len = read_le<std::uint32_t>(is);
  c.config.d_model = read_le<std::uint32_t>(is);
  c.config.n_heads = read_le<std::uint32_t>(is);
  c.config.n_layers = read_le<std::uint32_t>(is);
  c.config.seed = read_le<std::uint64_t>(is);
  c.config.validate();
  const auto n_tokens = read_le<std::uint32_t>(is);
  if (n_tokens != c.config.vocab_size) throw CheckpointError("vocabulary listing disagrees with vocab_size");
  std::vector<std::string> tokens;
  for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(detail::read_string(is));
  std::array<TokenId, kNumSpecials> specials{};
  for (auto& id : specials) id = read_le<std::int32_t>(is);
  c.vocab = Vocab(std::move(tokens), specials);
  c.meta.regime = detail::read_string(is);
  c.meta.steps = read_le<std::uint64_t>(is);
  c.meta.final_loss = read_le<double>(is);
  c.meta.seed = read_le<std::uint64_t>(is);
  c.meta.config_hash = detail::read_string(is);
  c.meta.tool = detail::read_string(is);
  const auto n_problems = read_le<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_problems; ++i) {
    Problem p;
    p.a = read_le<std::int64_t>(is);
    p.b = read_le<std::int64_t>(is);
    c.meta.trained_problems.insert(p);
  }
  const auto n_weights = read_le<std::uint64_t>(is);
  if (n_weights != ParamLayout(c.config).total()) throw CheckpointError("weight count does not match the model config");
  c.weights.resize(n_weights);
  for (auto& w : c.weights) w = read_le<float>(is);
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path + " for writing");
  save_checkpoint(os, c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path);
  return load_checkpoint(is);
}

}  // namespace sdp
