#pragma once

// Reader and writer for a kekulized, neutral SMILES subset:
//
//   chain    := unit (bond? unit | '(' bond? chain ')' | ringbond)*
//   unit     := bare_atom | '[' element ('H' digit?)? (':' int)? ']'
//   bare     := C | N | O | S | P | F | Cl | Br | I
//   bond     := '-' | '=' | '#'
//   ringbond := bond? (digit | '%' digit digit)   (labels 1-99)
//
// Molecules are joined by '.'. Hydrogens are never materialized.

#include <array>
#include <cctype>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "retrodiff/error.hpp"
#include "retrodiff/molgraph.hpp"

namespace retrodiff {

struct ParsedMolecule {
  MolGraph graph;
  /// Atom-map number per node, 0 when unmapped.
  std::vector<int> atom_maps;
};

namespace detail {

class SmilesReader {
 public:
  SmilesReader(std::string_view text, const AtomVocab& vocab) : s_(text), vocab_(vocab) {}

  ParsedMolecule run() {
    bool component_has_atom = false;
    while (pos_ < s_.size()) {
      const char c = s_[pos_];
      if (c == '.') {
        if (!component_has_atom) throw ParseError("empty molecule before '.'", pos_);
        if (pending_) throw ParseError("bond symbol before '.'", pos_);
        if (!branches_.empty()) throw ParseError("'.' inside a branch", pos_);
        prev_.reset();
        component_has_atom = false;
        ++pos_;
      } else if (c == '-' || c == '=' || c == '#') {
        if (pending_) throw ParseError("two consecutive bond symbols", pos_);
        if (!prev_) throw ParseError("bond symbol without a preceding atom", pos_);
        pending_ = c == '-' ? Category{1} : c == '=' ? Category{2} : Category{3};
        pending_at_ = pos_++;
      } else if (c == '(') {
        if (!prev_) throw ParseError("branch without a preceding atom", pos_);
        if (pending_) throw ParseError("bond symbol before '('", pos_);
        branches_.push_back({*prev_, pos_});
        ++pos_;
      } else if (c == ')') {
        if (branches_.empty()) throw ParseError("unmatched ')'", pos_);
        if (pending_) throw ParseError("bond symbol before ')'", pos_);
        prev_ = branches_.back().atom;
        branches_.pop_back();
        ++pos_;
      } else if (c >= '0' && c <= '9') {
        ring_bond(c - '0', 1);
      } else if (c == '%') {
        if (!std::isdigit(static_cast<unsigned char>(peek(1))) || !std::isdigit(static_cast<unsigned char>(peek(2))))
          throw ParseError("'%' must be followed by two digits", pos_);
        ring_bond((peek(1) - '0') * 10 + (peek(2) - '0'), 3);
      } else if (c == '[') {
        add_atom(bracket_atom());
        component_has_atom = true;
      } else if (std::isupper(static_cast<unsigned char>(c))) {
        add_atom(bare_atom());
        component_has_atom = true;
      } else {
        reject_or_fail(c);
      }
    }
    if (pending_) throw ParseError("dangling bond symbol", *pending_at_);
    if (!branches_.empty()) throw ParseError("unmatched '('", branches_.back().offset);
    for (const auto& r : rings_)
      if (r) throw ParseError("unmatched ring closure", r->offset);
    if (!s_.empty() && !component_has_atom) throw ParseError("empty molecule after '.'", s_.size());

    ParsedMolecule out{MolGraph(atoms_.size()), maps_};
    for (std::size_t i = 0; i < atoms_.size(); ++i) out.graph.set_atom(i, atoms_[i]);
    for (const auto& b : bonds_) out.graph.set_bond(b.u, b.v, b.order);
    return out;
  }

 private:
  struct Branch {
    std::size_t atom;
    std::size_t offset;
  };
  struct OpenRing {
    std::size_t atom;
    std::optional<Category> order;
    std::size_t offset;
  };

  [[noreturn]] void reject_or_fail(char c) {
    if (c == 'c' || c == 'n' || c == 'o' || c == 's' || c == 'p' || c == 'b')
      throw ParseError("aromatic atoms are not supported (supply kekulized input)", pos_);
    if (c == '/' || c == '\\' || c == '@')
      throw ParseError("stereochemistry is not supported", pos_);
    if (c == ':') throw ParseError("aromatic bonds are not supported", pos_);
    if (c == '+') throw ParseError("charges are not supported", pos_);
    throw ParseError(std::string("unexpected character '") + c + "'", pos_);
  }

  Category element(std::string_view sym, std::size_t at) const {
    const int idx = vocab_.index_of(sym);
    if (idx <= 0) throw ParseError("unknown element '" + std::string(sym) + "'", at);
    return static_cast<Category>(idx);
  }

  std::pair<Category, int> bare_atom() {
    const std::size_t at = pos_;
    const char c = s_[pos_];
    if ((c == 'C' && peek(1) == 'l') || (c == 'B' && peek(1) == 'r')) {
      pos_ += 2;
      return {element(s_.substr(at, 2), at), 0};
    }
    static constexpr std::string_view kSingle = "CNOSPFI";
    if (kSingle.find(c) == std::string_view::npos)
      throw ParseError("unknown element '" + std::string(1, c) + "'", at);
    ++pos_;
    return {element(s_.substr(at, 1), at), 0};
  }

  std::pair<Category, int> bracket_atom() {
    const std::size_t open = pos_++;
    if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
      throw ParseError("isotopes are not supported", pos_);
    if (pos_ >= s_.size()) throw ParseError("unterminated bracket atom", open);
    if (std::islower(static_cast<unsigned char>(s_[pos_])))
      throw ParseError("aromatic atoms are not supported (supply kekulized input)", pos_);
    if (!std::isupper(static_cast<unsigned char>(s_[pos_]))) throw ParseError("expected element symbol", pos_);
    const std::size_t sym_at = pos_;
    std::size_t len = 1;
    if (std::islower(static_cast<unsigned char>(peek(1)))) len = 2;
    const Category elem = element(s_.substr(sym_at, len), sym_at);
    pos_ += len;
    if (peek(0) == 'H') {
      ++pos_;
      if (std::isdigit(static_cast<unsigned char>(peek(0)))) ++pos_;
    }
    if (peek(0) == '@') throw ParseError("stereochemistry is not supported", pos_);
    if (peek(0) == '+' || peek(0) == '-') throw ParseError("charges are not supported", pos_);
    int map = 0;
    if (peek(0) == ':') {
      ++pos_;
      if (!std::isdigit(static_cast<unsigned char>(peek(0)))) throw ParseError("expected atom-map number", pos_);
      while (std::isdigit(static_cast<unsigned char>(peek(0)))) {
        map = map * 10 + (s_[pos_] - '0');
        if (map > 1000000) throw ParseError("atom-map number too large", pos_);
        ++pos_;
      }
      if (map == 0) throw ParseError("atom-map number must be positive", pos_ - 1);
    }
    if (peek(0) != ']') {
      if (pos_ >= s_.size()) throw ParseError("unterminated bracket atom", open);
      throw ParseError(std::string("unexpected character '") + s_[pos_] + "' in bracket atom", pos_);
    }
    ++pos_;
    return {elem, map};
  }

  void add_atom(std::pair<Category, int> a) {
    const std::size_t idx = atoms_.size();
    atoms_.push_back(a.first);
    maps_.push_back(a.second);
    if (prev_) add_bond(*prev_, idx, pending_.value_or(1), pending_at_.value_or(pos_));
    pending_.reset();
    pending_at_.reset();
    prev_ = idx;
  }

  void add_bond(std::size_t u, std::size_t v, Category order, std::size_t at) {
    if (u == v) throw ParseError("ring closure onto the same atom", at);
    for (const auto& b : bonds_)
      if ((b.u == u && b.v == v) || (b.u == v && b.v == u)) throw ParseError("duplicate bond", at);
    bonds_.push_back({u, v, order});
  }

  void ring_bond(int label, std::size_t width) {
    const std::size_t at = pos_;
    if (!prev_) throw ParseError("ring closure without a preceding atom", at);
    if (label == 0) throw ParseError("ring closure label 0 is not supported", at);
    auto& slot = rings_[static_cast<std::size_t>(label)];
    if (!slot) {
      slot = OpenRing{*prev_, pending_, pending_at_.value_or(at)};
    } else {
      Category order = 1;
      if (slot->order && pending_ && *slot->order != *pending_)
        throw ParseError("conflicting ring-closure bond orders", at);
      if (slot->order) order = *slot->order;
      if (pending_) order = *pending_;
      add_bond(slot->atom, *prev_, order, at);
      slot.reset();
    }
    pending_.reset();
    pending_at_.reset();
    pos_ += width;
  }

  char peek(std::size_t ahead) const { return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0'; }

  std::string_view s_;
  const AtomVocab& vocab_;
  std::size_t pos_ = 0;
  std::vector<Category> atoms_;
  std::vector<int> maps_;
  std::vector<MolGraph::Edge> bonds_;
  std::optional<std::size_t> prev_;
  std::optional<Category> pending_;
  std::optional<std::size_t> pending_at_;
  std::vector<Branch> branches_;
  std::array<std::optional<OpenRing>, 100> rings_{};
};

}  // namespace detail

inline ParsedMolecule parse_molecule(std::string_view text, const AtomVocab& vocab = AtomVocab::organic()) {
  return detail::SmilesReader(text, vocab).run();
}

/// Writes `g` in node order: each component is a depth-first walk from its
/// lowest-index atom, neighbours visited in index order. Mapped atoms are
/// written as bracket atoms.
inline std::string write_molecule(const MolGraph& g, const AtomVocab& vocab, std::span<const int> atom_maps = {}) {
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i)
    if (g.atom(i) == kDummyAtom) throw ValidationError("cannot write a graph with dummy atoms");
  if (!atom_maps.empty() && atom_maps.size() != n) throw ValidationError("atom map size mismatch");

  std::vector<char> visited(n, 0);
  std::vector<std::size_t> parent(n, n);
  std::vector<std::vector<std::size_t>> children(n);
  struct Ring {
    std::size_t opener, closer;
    Category order;
  };
  std::vector<Ring> rings;
  std::vector<std::vector<std::size_t>> opens(n), closes(n);
  std::set<std::pair<std::size_t, std::size_t>> ring_edges;
  std::vector<std::size_t> roots;

  // Pass 1: spanning forest and ring-closure edges.
  auto dfs = [&](auto&& self, std::size_t v) -> void {
    visited[v] = 1;
    for (std::size_t w : g.neighbors(v)) {
      if (w == parent[v]) continue;
      if (!visited[w]) {
        parent[w] = v;
        children[v].push_back(w);
        self(self, w);
      } else {
        const auto key = std::minmax(v, w);
        if (ring_edges.insert(key).second) {
          // w is an ancestor of v: it is written first and opens the ring.
          opens[w].push_back(rings.size());
          closes[v].push_back(rings.size());
          rings.push_back({w, v, g.bond(v, w)});
        }
      }
    }
  };
  for (std::size_t s = 0; s < n; ++s)
    if (!visited[s]) {
      roots.push_back(s);
      dfs(dfs, s);
    }

  // Pass 2: emit in the same preorder.
  std::string out;
  std::array<bool, 100> digit_used{};
  std::vector<int> ring_digit(rings.size(), 0);
  auto label = [](int d) { return d < 10 ? std::to_string(d) : "%" + std::to_string(d); };
  auto bond_symbol = [](Category order) -> std::string_view {
    return order == 2 ? "=" : order == 3 ? "#" : "";
  };
  auto emit = [&](auto&& self, std::size_t v) -> void {
    const std::string& sym = vocab.symbol(g.atom(v));
    if (!atom_maps.empty() && atom_maps[v] > 0)
      out += "[" + sym + ":" + std::to_string(atom_maps[v]) + "]";
    else
      out += sym;
    for (std::size_t r : closes[v]) {
      out += label(ring_digit[r]);
      digit_used[static_cast<std::size_t>(ring_digit[r])] = false;
    }
    for (std::size_t r : opens[v]) {
      int d = 1;
      while (d <= 99 && digit_used[static_cast<std::size_t>(d)]) ++d;
      if (d > 99) throw ValidationError("more than 99 simultaneously open rings");
      digit_used[static_cast<std::size_t>(d)] = true;
      ring_digit[r] = d;
      out += bond_symbol(rings[r].order);
      out += label(d);
    }
    const auto& ch = children[v];
    for (std::size_t k = 0; k < ch.size(); ++k) {
      const bool last = k + 1 == ch.size();
      if (!last) out += '(';
      out += bond_symbol(g.bond(v, ch[k]));
      self(self, ch[k]);
      if (!last) out += ')';
    }
  };
  for (std::size_t k = 0; k < roots.size(); ++k) {
    if (k > 0) out += '.';
    emit(emit, roots[k]);
  }
  return out;
}

}  // namespace retrodiff
