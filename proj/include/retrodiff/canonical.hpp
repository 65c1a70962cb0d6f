#pragma once

// Canonical labeling by color refinement with individualization and
// exhaustive branch-and-bound over tie cells. Labels are atom categories and
// bond orders; node tags do not participate.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "retrodiff/molgraph.hpp"
#include "retrodiff/smiles.hpp"

namespace retrodiff {

struct CanonicalForm {
  std::string bytes;
  auto operator<=>(const CanonicalForm&) const = default;
};

namespace detail {

using Colors = std::vector<std::uint32_t>;

template <typename Key>
Colors rank_keys(const std::vector<Key>& keys) {
  std::vector<Key> sorted = keys;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  Colors out(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i)
    out[i] = static_cast<std::uint32_t>(std::lower_bound(sorted.begin(), sorted.end(), keys[i]) - sorted.begin());
  return out;
}

inline std::size_t color_count(const Colors& c) {
  return c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1;
}

/// Refines to the coarsest equitable partition finer than `c`.
inline Colors refine(const MolGraph& g, Colors c) {
  const std::size_t n = g.size();
  std::size_t count = color_count(c);
  while (true) {
    using Sig = std::pair<std::uint32_t, std::vector<std::uint64_t>>;
    std::vector<Sig> sigs(n);
    for (std::size_t i = 0; i < n; ++i) {
      sigs[i].first = c[i];
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && g.bond(i, j) != 0)
          sigs[i].second.push_back((static_cast<std::uint64_t>(c[j]) << 8) | g.bond(i, j));
      std::sort(sigs[i].second.begin(), sigs[i].second.end());
    }
    Colors next = rank_keys(sigs);
    const std::size_t next_count = color_count(next);
    if (next_count == count) return next;
    c = std::move(next);
    count = next_count;
  }
}

inline Colors individualize(const Colors& c, std::size_t v) {
  std::vector<std::pair<std::uint32_t, std::uint8_t>> keys(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) keys[i] = {c[i], i == v ? 0 : 1};
  return rank_keys(keys);
}

/// Cell sizes in color order: an isomorphism invariant of the search node.
inline std::vector<std::uint32_t> cell_sizes(const Colors& c) {
  std::vector<std::uint32_t> sizes(color_count(c), 0);
  for (auto x : c) ++sizes[x];
  return sizes;
}

inline std::string certificate(const MolGraph& g, const Colors& c) {
  const std::size_t n = g.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[c[i]] = i;
  std::string cert;
  cert.reserve(4 + n + n * (n - 1) / 2);
  for (int s = 0; s < 4; ++s) cert.push_back(static_cast<char>((n >> (8 * s)) & 0xff));
  for (std::size_t k = 0; k < n; ++k) cert.push_back(static_cast<char>(g.atom(order[k])));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = k + 1; l < n; ++l) cert.push_back(static_cast<char>(g.bond(order[k], order[l])));
  return cert;
}

class CanonicalSearch {
 public:
  explicit CanonicalSearch(const MolGraph& g) : g_(g) {}

  void run() {
    const std::size_t n = g_.size();
    std::vector<std::tuple<Category, std::size_t, std::vector<Category>>> init(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Category> orders;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i && g_.bond(i, j) != 0) orders.push_back(g_.bond(i, j));
      std::sort(orders.begin(), orders.end());
      init[i] = {g_.atom(i), orders.size(), std::move(orders)};
    }
    Colors c = refine(g_, rank_keys(init));
    path_.push_back(cell_sizes(c));
    descend(c);
  }

  const std::string& best_certificate() const { return best_cert_; }
  const Colors& best_colors() const { return best_colors_; }

 private:
  using Inv = std::vector<std::uint32_t>;

  // -1: current path prefix is smaller, 0: equal so far, +1: larger.
  int compare_prefix() const {
    if (!has_best_) return -1;
    const std::size_t m = std::min(path_.size(), best_path_.size());
    for (std::size_t k = 0; k < m; ++k) {
      if (path_[k] < best_path_[k]) return -1;
      if (best_path_[k] < path_[k]) return 1;
    }
    return path_.size() > best_path_.size() ? 1 : 0;
  }

  void descend(const Colors& c) {
    if (compare_prefix() > 0) return;
    const std::size_t n = g_.size();
    if (color_count(c) == n) {
      std::string cert = certificate(g_, c);
      const int cmp = compare_prefix();
      if (!has_best_ || cmp < 0 || path_.size() < best_path_.size() || cert < best_cert_) {
        has_best_ = true;
        best_path_ = path_;
        best_cert_ = std::move(cert);
        best_colors_ = c;
      }
      return;
    }
    // Target cell: the first color class with more than one member.
    const Inv sizes = cell_sizes(c);
    std::uint32_t target = 0;
    while (sizes[target] < 2) ++target;
    for (std::size_t v = 0; v < n; ++v) {
      if (c[v] != target) continue;
      Colors next = refine(g_, individualize(c, v));
      path_.push_back(cell_sizes(next));
      descend(next);
      path_.pop_back();
    }
  }

  const MolGraph& g_;
  std::vector<Inv> path_;
  std::vector<Inv> best_path_;
  bool has_best_ = false;
  std::string best_cert_;
  Colors best_colors_;
};

}  // namespace detail

/// order[k] is the node placed at canonical position k.
inline std::vector<std::size_t> canonical_order(const MolGraph& g) {
  if (g.empty()) return {};
  detail::CanonicalSearch s(g);
  s.run();
  std::vector<std::size_t> order(g.size());
  const auto& c = s.best_colors();
  for (std::size_t i = 0; i < g.size(); ++i) order[c[i]] = i;
  return order;
}

/// Permutation-invariant serialization; equal iff the labeled graphs are isomorphic.
inline CanonicalForm canonical_form(const MolGraph& g) {
  if (g.empty()) return CanonicalForm{std::string(4, '\0')};
  detail::CanonicalSearch s(g);
  s.run();
  return CanonicalForm{s.best_certificate()};
}

/// Writes the molecule after canonical relabeling, so isomorphic graphs
/// produce identical strings.
inline std::string write_canonical(const MolGraph& g, const AtomVocab& vocab) {
  const auto order = canonical_order(g);
  return write_molecule(g.permuted(order), vocab);
}

}  // namespace retrodiff
