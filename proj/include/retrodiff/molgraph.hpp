#pragma once

// Categorical molecular graphs: atom/bond vocabularies, the dense graph
// carrier, splicing of parts, dummy stripping and valence validity.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "retrodiff/error.hpp"

namespace retrodiff {

using Category = std::uint8_t;

inline constexpr Category kDummyAtom = 0;
inline constexpr std::string_view kDummySymbol = "*";

/// Ordered element labels. Index 0 is always the dummy category, so a
/// vocabulary of `a` real elements has one-hot width `a + 1`.
class AtomVocab {
 public:
  AtomVocab() : symbols_{std::string(kDummySymbol)}, valences_{0} {}

  /// Builds a vocabulary from real element symbols (dummy is prepended).
  /// Valences come from the built-in organic table.
  static AtomVocab from_elements(std::span<const std::string> elements) {
    AtomVocab v;
    for (const auto& e : elements) {
      if (e == kDummySymbol) throw ValidationError("dummy symbol listed as an element");
      if (v.index_of(e) >= 0) throw ValidationError("duplicate element '" + e + "'");
      const int val = default_valence(e);
      if (val < 0) throw ValidationError("unknown element '" + e + "'");
      v.symbols_.push_back(e);
      v.valences_.push_back(val);
    }
    return v;
  }

  /// The fixed organic subset {C, N, O, S, P, F, Cl, Br, I}.
  static const AtomVocab& organic() {
    static const AtomVocab v = [] {
      const std::vector<std::string> e{"C", "N", "O", "S", "P", "F", "Cl", "Br", "I"};
      return from_elements(e);
    }();
    return v;
  }

  static int default_valence(std::string_view symbol) {
    static const std::map<std::string_view, int> table{
        {"C", 4}, {"N", 3}, {"O", 2}, {"S", 6}, {"P", 5},
        {"F", 1}, {"Cl", 1}, {"Br", 1}, {"I", 1}};
    auto it = table.find(symbol);
    return it == table.end() ? -1 : it->second;
  }

  /// Standard atomic mass in g/mol; 0 for the dummy category.
  static double standard_mass(std::string_view symbol) {
    static const std::map<std::string_view, double> table{
        {"C", 12.011}, {"N", 14.007}, {"O", 15.999}, {"S", 32.06}, {"P", 30.974},
        {"F", 18.998}, {"Cl", 35.45}, {"Br", 79.904}, {"I", 126.904}};
    auto it = table.find(symbol);
    return it == table.end() ? 0.0 : it->second;
  }

  std::size_t size() const noexcept { return symbols_.size(); }
  std::size_t real_count() const noexcept { return symbols_.size() - 1; }
  const std::string& symbol(Category c) const { return symbols_.at(c); }
  int valence(Category c) const { return valences_.at(c); }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }

  int index_of(std::string_view symbol) const {
    for (std::size_t i = 0; i < symbols_.size(); ++i)
      if (symbols_[i] == symbol) return static_cast<int>(i);
    return -1;
  }

  bool operator==(const AtomVocab&) const = default;

 private:
  std::vector<std::string> symbols_;
  std::vector<int> valences_;
};

enum class BondOrder : Category { None = 0, Single = 1, Double = 2, Triple = 3 };

/// Bond categories {NONE, SINGLE, DOUBLE, TRIPLE}; NONE doubles as the dummy bond.
struct BondVocab {
  static constexpr std::size_t kSize = 4;
  static constexpr int order_weight(Category c) { return static_cast<int>(c); }
};

enum class NodeTag : std::uint8_t { Product = 0, Group = 1, Dummy = 2 };

/// Dense categorical graph. Atoms and bonds are stored as category indices
/// (the one-hot encoding is implied). The bond matrix is kept symmetric with
/// a NONE diagonal by every mutator.
class MolGraph {
 public:
  MolGraph() = default;
  explicit MolGraph(std::size_t n, NodeTag tag = NodeTag::Product)
      : n_(n), atoms_(n, kDummyAtom), bonds_(n * n, 0), tags_(n, tag) {}

  std::size_t size() const noexcept { return n_; }
  bool empty() const noexcept { return n_ == 0; }

  Category atom(std::size_t i) const { return atoms_[i]; }
  void set_atom(std::size_t i, Category c) { atoms_.at(i) = c; }

  Category bond(std::size_t i, std::size_t j) const { return bonds_[i * n_ + j]; }
  void set_bond(std::size_t i, std::size_t j, Category c) {
    if (i >= n_ || j >= n_) throw ValidationError("bond index out of range");
    if (i == j) {
      if (c != 0) throw ValidationError("self-loop bond on node " + std::to_string(i));
      return;
    }
    bonds_[i * n_ + j] = c;
    bonds_[j * n_ + i] = c;
  }

  NodeTag tag(std::size_t i) const { return tags_[i]; }
  void set_tag(std::size_t i, NodeTag t) { tags_.at(i) = t; }

  const std::vector<Category>& atoms() const noexcept { return atoms_; }
  const std::vector<Category>& bond_matrix() const noexcept { return bonds_; }
  const std::vector<NodeTag>& tags() const noexcept { return tags_; }

  std::vector<std::size_t> neighbors(std::size_t i) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n_; ++j)
      if (j != i && bond(i, j) != 0) out.push_back(j);
    return out;
  }

  std::size_t degree(std::size_t i) const {
    std::size_t d = 0;
    for (std::size_t j = 0; j < n_; ++j) d += (j != i && bond(i, j) != 0);
    return d;
  }

  /// Sum of incident bond orders (implicit hydrogens excluded).
  int bond_order_sum(std::size_t i) const {
    int s = 0;
    for (std::size_t j = 0; j < n_; ++j)
      if (j != i) s += BondVocab::order_weight(bond(i, j));
    return s;
  }

  struct Edge {
    std::size_t u, v;
    Category order;
    bool operator==(const Edge&) const = default;
  };

  /// Non-NONE bonds with u < v, in row-major order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j)
        if (bond(i, j) != 0) out.push_back({i, j, bond(i, j)});
    return out;
  }

  std::size_t bond_count() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) c += bond(i, j) != 0;
    return c;
  }

  /// Node k of the result is node perm[k] of this graph.
  MolGraph permuted(std::span<const std::size_t> perm) const {
    if (perm.size() != n_) throw ValidationError("permutation size mismatch");
    MolGraph out(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      out.atoms_[k] = atoms_[perm[k]];
      out.tags_[k] = tags_[perm[k]];
      for (std::size_t l = 0; l < n_; ++l) out.bonds_[k * n_ + l] = bond(perm[k], perm[l]);
    }
    return out;
  }

  /// Induced subgraph on `nodes`, in the given order.
  MolGraph subgraph(std::span<const std::size_t> nodes) const {
    MolGraph out(nodes.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      out.atoms_[k] = atoms_.at(nodes[k]);
      out.tags_[k] = tags_[nodes[k]];
      for (std::size_t l = 0; l < nodes.size(); ++l)
        out.bonds_[k * nodes.size() + l] = k == l ? 0 : bond(nodes[k], nodes[l]);
    }
    return out;
  }

  /// Connected components, each sorted ascending, ordered by smallest member.
  std::vector<std::vector<std::size_t>> components() const {
    std::vector<int> comp(n_, -1);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < n_; ++s) {
      if (comp[s] >= 0) continue;
      const int id = static_cast<int>(out.size());
      out.emplace_back();
      std::vector<std::size_t> stack{s};
      comp[s] = id;
      while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        out.back().push_back(u);
        for (std::size_t v = 0; v < n_; ++v)
          if (v != u && bond(u, v) != 0 && comp[v] < 0) {
            comp[v] = id;
            stack.push_back(v);
          }
      }
      std::sort(out.back().begin(), out.back().end());
    }
    return out;
  }

  bool operator==(const MolGraph&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<Category> atoms_;
  std::vector<Category> bonds_;
  std::vector<NodeTag> tags_;
};

/// True iff every real atom's bond-order sum is within its valence and no
/// bond touches a dummy atom. Self-loops cannot be represented.
inline bool is_valid(const MolGraph& g, const AtomVocab& vocab) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Category a = g.atom(i);
    if (a >= vocab.size()) return false;
    if (a == kDummyAtom) {
      if (g.degree(i) != 0) return false;
      continue;
    }
    if (g.bond_order_sum(i) > vocab.valence(a)) return false;
  }
  return true;
}

struct CrossEdge {
  std::size_t u, v;
  Category order;
};

/// Disjoint union of `parts` (in order) plus `cross_edges`, which index the
/// concatenated node space. Node tags are preserved.
inline MolGraph splice(std::span<const MolGraph> parts, std::span<const CrossEdge> cross_edges) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  MolGraph out(n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      out.set_atom(offset + i, p.atom(i));
      out.set_tag(offset + i, p.tag(i));
      for (std::size_t j = i + 1; j < p.size(); ++j)
        if (p.bond(i, j) != 0) out.set_bond(offset + i, offset + j, p.bond(i, j));
    }
    offset += p.size();
  }
  for (const auto& e : cross_edges) {
    if (e.u >= n || e.v >= n) throw ValidationError("cross edge references a node out of range");
    if (e.u == e.v) throw ValidationError("cross edge is a self-loop");
    if (out.bond(e.u, e.v) != 0)
      throw ValidationError("cross edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                            ") duplicates an existing edge");
    out.set_bond(e.u, e.v, e.order);
  }
  return out;
}

inline MolGraph splice(const MolGraph& a, const MolGraph& b, std::span<const CrossEdge> cross = {}) {
  const std::array<MolGraph, 2> parts{a, b};
  return splice(std::span<const MolGraph>(parts), cross);
}

struct StripResult {
  MolGraph graph;
  /// kept[k] = original index of result node k.
  std::vector<std::size_t> kept;
  /// Non-NONE edges that touched a dummy node and were dropped.
  std::vector<MolGraph::Edge> inconsistencies;
};

/// Deletes dummy-category nodes and compacts indices preserving order.
inline StripResult strip_dummies(const MolGraph& g) {
  StripResult r;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.atom(i) != kDummyAtom) r.kept.push_back(i);
  for (const auto& e : g.edges())
    if (g.atom(e.u) == kDummyAtom || g.atom(e.v) == kDummyAtom) r.inconsistencies.push_back(e);
  r.graph = g.subgraph(r.kept);
  return r;
}

/// Translates atom categories from one vocabulary to another by symbol.
inline MolGraph remap_vocab(const MolGraph& g, const AtomVocab& from, const AtomVocab& to) {
  MolGraph out = g;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const int idx = to.index_of(from.symbol(g.atom(i)));
    if (idx < 0) throw ValidationError("element '" + from.symbol(g.atom(i)) + "' missing from target vocabulary");
    out.set_atom(i, static_cast<Category>(idx));
  }
  return out;
}

}  // namespace retrodiff
