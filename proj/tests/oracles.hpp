#pragma once

// Independent reference implementations used by the tests.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sdp/consistency.hpp"
#include "sdp/random.hpp"

namespace oracle {

// Every subset of nodes that is pairwise adjacent and cannot be extended,
// found by enumerating all 2^n subsets. Each clique is a sorted index list.
inline std::vector<std::vector<std::size_t>> maximal_cliques(const std::vector<std::vector<bool>>& adj) {
  const std::size_t n = adj.size();
  auto is_clique = [&](std::uint32_t mask) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!(mask >> i & 1U)) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if ((mask >> j & 1U) && !adj[i][j]) return false;
      }
    }
    return true;
  };
  std::vector<std::vector<std::size_t>> out;
  for (std::uint32_t mask = 1; mask < (1U << n); ++mask) {
    if (!is_clique(mask)) continue;
    bool maximal = true;
    for (std::size_t k = 0; k < n && maximal; ++k) {
      if (!(mask >> k & 1U) && is_clique(mask | (1U << k))) maximal = false;
    }
    if (!maximal) continue;
    std::vector<std::size_t> c;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask >> i & 1U) c.push_back(i);
    }
    out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::vector<bool>> random_adjacency(std::size_t n, double p, sdp::Rng& rng) {
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) adj[i][j] = adj[j][i] = rng.uniform() < p;
  }
  return adj;
}

inline sdp::ConsistencyGraph graph_from(const std::vector<std::vector<bool>>& adj) {
  std::vector<sdp::RuleId> ids;
  for (std::size_t i = 0; i < adj.size(); ++i) ids.push_back(static_cast<sdp::RuleId>(i));
  sdp::ConsistencyGraph g(ids);
  for (std::size_t i = 0; i < adj.size(); ++i) {
    for (std::size_t j = i + 1; j < adj.size(); ++j) {
      if (adj[i][j]) g.connect(i, j);
    }
  }
  return g;
}

// Node ids equal indices in graph_from, so sets compare directly.
inline std::vector<std::vector<std::size_t>> as_indices(const std::vector<sdp::ModelSet>& sets) {
  std::vector<std::vector<std::size_t>> out;
  for (const auto& s : sets) out.emplace_back(s.rules.begin(), s.rules.end());
  std::sort(out.begin(), out.end());
  return out;
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

}  // namespace oracle
