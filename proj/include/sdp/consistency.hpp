#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rules.hpp"

namespace sdp {

enum class ConsistencyKind : std::uint8_t { Pointwise, Existential, Custom };

// Two readings of "both rules hold in some state of the world" over a finite
// probe domain, plus a hook for a user predicate. Every reading is made
// reflexive and symmetric.
struct ConsistencyRelation {
  ConsistencyKind kind = ConsistencyKind::Pointwise;
  std::vector<Problem> probe_domain;
  std::function<bool(const Rule&, const Rule&)> custom;
};

inline bool check_consistency(const Rule& r1, const Rule& r2, const ConsistencyRelation& rel) {
  if (rel.kind != ConsistencyKind::Custom && rel.probe_domain.empty()) throw EmptyProbeDomain();
  if (r1.id == r2.id) return true;
  switch (rel.kind) {
    case ConsistencyKind::Pointwise:
      for (const auto& p : rel.probe_domain) {
        auto x = r1.solver(p);
        auto y = r2.solver(p);
        if (x && y && *x != *y) return false;
      }
      return true;
    case ConsistencyKind::Existential:
      for (const auto& p : rel.probe_domain) {
        auto x = r1.solver(p);
        auto y = r2.solver(p);
        if (x && y && *x == *y) return true;
      }
      return false;
    case ConsistencyKind::Custom:
      if (!rel.custom) throw InvalidSpec("custom consistency relation without a predicate");
      return rel.custom(r1, r2) && rel.custom(r2, r1);
  }
  return false;
}

// Fixed-width bit set sized at runtime; node sets for clique enumeration.
class NodeSet {
 public:
  NodeSet() = default;
  explicit NodeSet(std::size_t n) : n_(n), words_((n + 63) / 64, 0) {}

  static NodeSet full(std::size_t n) {
    NodeSet s(n);
    for (std::size_t i = 0; i < n; ++i) s.insert(i);
    return s;
  }

  void insert(std::size_t i) { words_[i / 64] |= std::uint64_t{1} << (i % 64); }
  void erase(std::size_t i) { words_[i / 64] &= ~(std::uint64_t{1} << (i % 64)); }
  bool contains(std::size_t i) const { return (words_[i / 64] >> (i % 64)) & 1U; }
  bool empty() const {
    return std::all_of(words_.begin(), words_.end(), [](std::uint64_t w) { return w == 0; });
  }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto w : words_) c += static_cast<std::size_t>(__builtin_popcountll(w));
    return c;
  }
  NodeSet operator&(const NodeSet& o) const {
    NodeSet r(n_);
    for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] = words_[i] & o.words_[i];
    return r;
  }
  NodeSet operator|(const NodeSet& o) const {
    NodeSet r(n_);
    for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] = words_[i] | o.words_[i];
    return r;
  }
  template <class F>
  void for_each(F&& f) const {
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t bits = words_[w];
      while (bits) {
        const int b = __builtin_ctzll(bits);
        f(w * 64 + static_cast<std::size_t>(b));
        bits &= bits - 1;
      }
    }
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

// Rules as nodes, consistent pairs as undirected edges. Every node is
// self-consistent; the adjacency sets used for enumeration exclude self-loops.
class ConsistencyGraph {
 public:
  ConsistencyGraph() = default;
  explicit ConsistencyGraph(std::vector<RuleId> nodes, std::vector<std::string> names = {})
      : nodes_(std::move(nodes)), names_(std::move(names)) {
    if (names_.empty()) {
      for (RuleId id : nodes_) names_.push_back("R" + std::to_string(id));
    }
    if (names_.size() != nodes_.size()) throw InvalidSpec("graph node/name count mismatch");
    auto sorted = nodes_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw InvalidSpec("duplicate rule in graph");
    adjacency_.assign(nodes_.size(), NodeSet(nodes_.size()));
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<RuleId>& nodes() const noexcept { return nodes_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const NodeSet& neighbours(std::size_t i) const { return adjacency_[i]; }

  void connect(std::size_t i, std::size_t j) {
    if (i == j) return;
    adjacency_[i].insert(j);
    adjacency_[j].insert(i);
  }
  void disconnect(std::size_t i, std::size_t j) {
    if (i == j) return;
    adjacency_[i].erase(j);
    adjacency_[j].erase(i);
  }
  bool consistent(std::size_t i, std::size_t j) const { return i == j || adjacency_[i].contains(j); }

  std::size_t edge_count() const {
    std::size_t c = 0;
    for (const auto& a : adjacency_) c += a.count();
    return c / 2;
  }

  std::size_t index_of(RuleId id) const {
    auto it = std::find(nodes_.begin(), nodes_.end(), id);
    if (it == nodes_.end()) throw InvalidSpec("rule " + std::to_string(id) + " not in graph");
    return static_cast<std::size_t>(it - nodes_.begin());
  }

  const std::string& name_of(RuleId id) const { return names_[index_of(id)]; }

 private:
  std::vector<RuleId> nodes_;
  std::vector<std::string> names_;
  std::vector<NodeSet> adjacency_;
};

inline ConsistencyGraph build_graph(const std::vector<Rule>& rules, const ConsistencyRelation& rel) {
  std::vector<RuleId> ids;
  std::vector<std::string> names;
  for (const auto& r : rules) {
    ids.push_back(r.id);
    names.push_back(r.name);
  }
  ConsistencyGraph g(std::move(ids), std::move(names));
  if (rel.kind != ConsistencyKind::Custom && rel.probe_domain.empty()) throw EmptyProbeDomain();
  for (std::size_t i = 0; i < rules.size(); ++i) {
    for (std::size_t j = i + 1; j < rules.size(); ++j) {
      if (check_consistency(rules[i], rules[j], rel)) g.connect(i, j);
    }
  }
  return g;
}

// A maximal pairwise-consistent rule set: one internally consistent student model.
struct ModelSet {
  std::vector<RuleId> rules;  // sorted ascending
  bool is_tutor = false;

  bool contains(RuleId id) const { return std::binary_search(rules.begin(), rules.end(), id); }
  friend bool operator==(const ModelSet&, const ModelSet&) = default;
  friend auto operator<=>(const ModelSet& l, const ModelSet& r) { return l.rules <=> r.rules; }
};

namespace detail {

// Bron–Kerbosch with Tomita pivoting.
inline void bron_kerbosch(const ConsistencyGraph& g, std::vector<std::size_t>& r, NodeSet p, NodeSet x,
                          std::vector<std::vector<std::size_t>>& out) {
  if (p.empty() && x.empty()) {
    out.push_back(r);
    return;
  }
  std::size_t pivot = 0;
  std::size_t best = 0;
  bool have_pivot = false;
  (p | x).for_each([&](std::size_t u) {
    const std::size_t c = (p & g.neighbours(u)).count();
    if (!have_pivot || c > best) {
      pivot = u;
      best = c;
      have_pivot = true;
    }
  });
  std::vector<std::size_t> candidates;
  p.for_each([&](std::size_t v) {
    if (!g.neighbours(pivot).contains(v)) candidates.push_back(v);
  });
  for (std::size_t v : candidates) {
    r.push_back(v);
    bron_kerbosch(g, r, p & g.neighbours(v), x & g.neighbours(v), out);
    r.pop_back();
    p.erase(v);
    x.insert(v);
  }
}

}  // namespace detail

// Exactly the maximal cliques of g, each once, sorted lexicographically by rule id.
inline std::vector<ModelSet> enumerate_model_sets(const ConsistencyGraph& g) {
  std::vector<ModelSet> sets;
  if (g.size() == 0) return sets;
  std::vector<std::vector<std::size_t>> cliques;
  std::vector<std::size_t> r;
  detail::bron_kerbosch(g, r, NodeSet::full(g.size()), NodeSet(g.size()), cliques);
  for (const auto& c : cliques) {
    ModelSet m;
    for (std::size_t i : c) m.rules.push_back(g.nodes()[i]);
    std::sort(m.rules.begin(), m.rules.end());
    sets.push_back(std::move(m));
  }
  std::sort(sets.begin(), sets.end());
  return sets;
}

inline std::size_t required_model_count(const std::vector<ModelSet>& sets) { return sets.size(); }

// The unique maximal set holding every correct rule; it doubles as the perfect student.
inline ModelSet identify_tutor_set(const std::vector<ModelSet>& sets, const std::vector<RuleId>& correct) {
  if (correct.empty()) throw InvalidSpec("tutor identification needs at least one correct rule");
  const ModelSet* found = nullptr;
  for (const auto& s : sets) {
    const bool all = std::all_of(correct.begin(), correct.end(), [&](RuleId id) { return s.contains(id); });
    if (!all) continue;
    if (found) throw AmbiguousTutorSet("correct rules lie in more than one maximal consistent set");
    found = &s;
  }
  if (!found) throw NoConsistentTutorSet("no maximal consistent set contains every correct rule");
  ModelSet tutor = *found;
  tutor.is_tutor = true;
  return tutor;
}

// Enumerates the sets and flags the tutor set where one exists unambiguously.
inline std::vector<ModelSet> enumerate_with_tutor(const ConsistencyGraph& g, const std::vector<RuleId>& correct) {
  auto sets = enumerate_model_sets(g);
  try {
    const ModelSet tutor = identify_tutor_set(sets, correct);
    for (auto& s : sets) s.is_tutor = s.rules == tutor.rules;
  } catch (const NoConsistentTutorSet&) {
  } catch (const AmbiguousTutorSet&) {
  }
  return sets;
}

// One line per set with sorted rule names, tutor flagged, then "n_models = <n>".
inline void write_model_sets(std::ostream& os, const ConsistencyGraph& g, const std::vector<ModelSet>& sets) {
  for (const auto& s : sets) {
    std::vector<std::string> names;
    for (RuleId id : s.rules) names.push_back(g.name_of(id));
    std::sort(names.begin(), names.end());
    os << '{';
    for (std::size_t i = 0; i < names.size(); ++i) os << (i ? ", " : "") << names[i];
    os << '}';
    if (s.is_tutor) os << " [tutor]";
    os << '\n';
  }
  os << "n_models = " << required_model_count(sets) << '\n';
}

}  // namespace sdp
