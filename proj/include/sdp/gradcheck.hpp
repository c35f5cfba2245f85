#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "model.hpp"
#include "random.hpp"

namespace sdp {

struct GradcheckResult {
  ModelConfig config;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is structurally zero from dividing rounding noise by ~0.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Random small config: d_model <= 8, at most two layers, |V| <= 16.
inline ModelConfig random_small_config(Rng& rng) {
  ModelConfig c;
  c.vocab_size = 6 + rng.below(11);
  c.d_model = rng.below(2) ? 8 : 4;
  c.n_heads = std::size_t{1} << rng.below(c.d_model == 8 ? 3 : 2);  // 1, 2 or 4 heads
  c.n_layers = 1 + rng.below(2);
  c.context_len = 12;
  c.seed = rng.next_u64();
  return c;
}

// Finite differences on the mean masked NLL of a random two-sequence batch,
// over every parameter coordinate.
inline GradcheckResult gradcheck(const ModelConfig& cfg, std::uint64_t seed, double step = 1e-3) {
  Rng rng(seed);
  Parameters params = init_params(cfg);
  for (double& w : params.data()) w += rng.normal(0.0, 0.1);

  std::vector<MaskedSequence> batch(2);
  for (auto& ms : batch) {
    const std::size_t len = 4 + rng.below(cfg.context_len - 3);
    for (std::size_t t = 0; t < len; ++t) {
      ms.ids.push_back(static_cast<TokenId>(rng.below(cfg.vocab_size)));
      ms.mask.push_back(t == 0 ? 0.0 : static_cast<double>(rng.below(3) != 0));
    }
    ms.mask.back() = 1.0;
  }
  double weight = 0.0;
  for (const auto& ms : batch) weight += ms.weight_sum();
  auto objective = [&](const Parameters& p) {
    double s = 0.0;
    for (const auto& ms : batch) s += masked_nll(p, ms);
    return s / weight;
  };

  const Parameters grad = gradients(params, batch);
  GradcheckResult r;
  r.config = cfg;
  r.coordinates = params.count();
  auto w = params.data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    auto at = [&](double offset) {
      w[i] = keep + offset;
      return objective(params);
    };
    // Five-point stencil: truncation error O(step^4).
    const double numeric = (8.0 * (at(step) - at(-step)) - (at(2.0 * step) - at(-2.0 * step))) / (12.0 * step);
    w[i] = keep;
    const double err = relative_error(grad.data()[i], numeric);
    if (err > r.max_relative_error) {
      r.max_relative_error = err;
      r.worst_index = i;
    }
  }
  return r;
}

inline std::vector<GradcheckResult> gradcheck_suite(std::size_t n_configs = 3, std::uint64_t seed = 7) {
  Rng rng(seed);
  std::vector<GradcheckResult> out;
  for (std::size_t k = 0; k < n_configs; ++k) {
    const ModelConfig cfg = random_small_config(rng);
    out.push_back(gradcheck(cfg, rng.next_u64()));
  }
  return out;
}

}  // namespace sdp
