#pragma once

// Atom-mapped reaction ingestion and the supervision the staged template
// needs: external-group atoms, external bonds, broken and changed product
// bonds, plus the group-size budget and dataset vocabulary.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "retrodiff/error.hpp"
#include "retrodiff/molgraph.hpp"
#include "retrodiff/smiles.hpp"

namespace retrodiff {

struct ReactionRecord {
  MolGraph product;
  std::vector<int> product_maps;
  MolGraph reactants;
  std::vector<int> reactant_maps;
  std::optional<int> class_label;
  std::size_t line = 0;
};

/// Parses "[class<TAB>]reactants>>product".
inline ReactionRecord parse_reaction(std::string_view text, const AtomVocab& vocab = AtomVocab::organic()) {
  ReactionRecord r;
  if (auto tab = text.find('\t'); tab != std::string_view::npos) {
    const std::string cls(text.substr(0, tab));
    try {
      std::size_t used = 0;
      const int c = std::stoi(cls, &used);
      if (used != cls.size() || c < 1 || c > 10) throw std::invalid_argument("range");
      r.class_label = c;
    } catch (const std::exception&) {
      throw DataError("invalid reaction class '" + cls + "'");
    }
    text.remove_prefix(tab + 1);
  }
  const auto arrow = text.find(">>");
  if (arrow == std::string_view::npos) throw DataError("missing '>>' in reaction");
  auto reactants = parse_molecule(text.substr(0, arrow), vocab);
  auto product = parse_molecule(text.substr(arrow + 2), vocab);
  r.reactants = std::move(reactants.graph);
  r.reactant_maps = std::move(reactants.atom_maps);
  r.product = std::move(product.graph);
  r.product_maps = std::move(product.atom_maps);
  for (std::size_t i = 0; i < r.reactants.size(); ++i) r.reactants.set_tag(i, NodeTag::Group);
  return r;
}

/// Reads a corpus, one reaction per line. Blank lines and lines starting
/// with '#' are skipped. Errors carry the 1-based line number.
inline std::vector<ReactionRecord> read_corpus(std::istream& in, const AtomVocab& vocab = AtomVocab::organic()) {
  std::vector<ReactionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      out.push_back(parse_reaction(line, vocab));
      out.back().line = lineno;
    } catch (const Error& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<ReactionRecord> read_corpus_file(const std::string& path,
                                                    const AtomVocab& vocab = AtomVocab::organic()) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus '" + path + "'");
  return read_corpus(in, vocab);
}

struct ExternalBond {
  std::size_t group_node;  ///< index into SupervisionTarget::group
  std::size_t product_node;
  Category order;
  auto operator<=>(const ExternalBond&) const = default;
};

struct ProductBond {
  std::size_t u, v;  ///< u < v
  auto operator<=>(const ProductBond&) const = default;
};

struct ChangedBond {
  std::size_t u, v;  ///< product indices, u < v
  Category product_order;
  Category reactant_order;
  auto operator<=>(const ChangedBond&) const = default;
};

struct SupervisionTarget {
  /// Reactant atoms with no product counterpart, ascending.
  std::vector<std::size_t> group_atoms;
  /// Induced reactant subgraph on group_atoms (one unconnected graph).
  MolGraph group;
  std::vector<ExternalBond> external_bonds;
  std::vector<ProductBond> broken_bonds;
  std::vector<ChangedBond> changed_bonds;
  std::vector<std::size_t> product_to_reactant;
  /// False when the site rules cannot recover the reactants from the
  /// group and external bonds alone (order changes, a broken bond with a
  /// bare-hydrogen end, or an intact bond between two sites).
  bool reconstructable = true;
};

/// Product bonds the site rule would break: both endpoints receive an
/// external bond.
inline std::vector<ProductBond> bonds_between_sites(const MolGraph& product, const std::set<std::size_t>& sites) {
  std::vector<ProductBond> out;
  for (const auto& e : product.edges())
    if (sites.count(e.u) && sites.count(e.v)) out.push_back({e.u, e.v});
  return out;
}

inline SupervisionTarget extract_supervision(const ReactionRecord& r) {
  const MolGraph& p = r.product;
  const MolGraph& y = r.reactants;
  std::map<int, std::size_t> reactant_by_map;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const int m = r.reactant_maps[i];
    if (m == 0) continue;
    if (!reactant_by_map.emplace(m, i).second)
      throw DataError("atom-map number " + std::to_string(m) + " appears twice in reactants");
  }
  SupervisionTarget t;
  t.product_to_reactant.resize(p.size());
  std::set<int> seen;
  std::vector<char> mapped(y.size(), 0);
  for (std::size_t u = 0; u < p.size(); ++u) {
    const int m = r.product_maps[u];
    if (m == 0) throw DataError("product atom " + std::to_string(u) + " is unmapped");
    if (!seen.insert(m).second) throw DataError("atom-map number " + std::to_string(m) + " appears twice in product");
    auto it = reactant_by_map.find(m);
    if (it == reactant_by_map.end())
      throw DataError("product atom-map number " + std::to_string(m) + " missing from reactants");
    if (y.atom(it->second) != p.atom(u))
      throw DataError("atom-map number " + std::to_string(m) + " changes element");
    t.product_to_reactant[u] = it->second;
    mapped[it->second] = 1;
  }
  std::vector<std::size_t> reactant_to_product(y.size(), p.size());
  for (std::size_t u = 0; u < p.size(); ++u) reactant_to_product[t.product_to_reactant[u]] = u;

  for (std::size_t i = 0; i < y.size(); ++i)
    if (!mapped[i]) t.group_atoms.push_back(i);
  t.group = y.subgraph(t.group_atoms);
  for (std::size_t k = 0; k < t.group.size(); ++k) t.group.set_tag(k, NodeTag::Group);

  for (std::size_t k = 0; k < t.group_atoms.size(); ++k)
    for (std::size_t i = 0; i < y.size(); ++i)
      if (mapped[i] && y.bond(t.group_atoms[k], i) != 0)
        t.external_bonds.push_back({k, reactant_to_product[i], y.bond(t.group_atoms[k], i)});
  std::sort(t.external_bonds.begin(), t.external_bonds.end());

  for (std::size_t u = 0; u < p.size(); ++u)
    for (std::size_t v = u + 1; v < p.size(); ++v) {
      const Category po = p.bond(u, v);
      const Category ro = y.bond(t.product_to_reactant[u], t.product_to_reactant[v]);
      if (po != 0 && ro == 0)
        t.broken_bonds.push_back({u, v});
      else if (po != ro)
        t.changed_bonds.push_back({u, v, po, ro});
    }

  std::set<std::size_t> sites;
  for (const auto& e : t.external_bonds) sites.insert(e.product_node);
  t.reconstructable = t.changed_bonds.empty() && bonds_between_sites(p, sites) == t.broken_bonds;
  return t;
}

/// Replays the full supervision (group, external bonds, broken and changed
/// bonds) onto the product. Always recovers the reactants up to isomorphism.
inline MolGraph reconstruct_reactants(const MolGraph& product, const SupervisionTarget& t) {
  std::vector<CrossEdge> cross;
  for (const auto& e : t.external_bonds) cross.push_back({e.product_node, product.size() + e.group_node, e.order});
  MolGraph g = splice(product, t.group, cross);
  for (const auto& b : t.broken_bonds) g.set_bond(b.u, b.v, 0);
  for (const auto& c : t.changed_bonds) g.set_bond(c.u, c.v, c.reactant_order);
  return g;
}

struct GroupBudget {
  std::size_t n_g = 0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t excluded_count = 0;
  /// retained[i] is false for samples dropped as outliers.
  std::vector<bool> retained;
};

/// Drops sizes farther than three (population) standard deviations from
/// the mean and returns the largest retained size. The outlier test is done
/// in exact integer arithmetic: |x - S/N| > 3 sigma  <=>  (N x - S)^2 > 9 (N Q - S^2).
inline GroupBudget compute_group_budget(std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw DataError("cannot compute a group budget from an empty dataset");
  __int128 n = static_cast<__int128>(sizes.size()), s = 0, q = 0;
  for (auto x : sizes) {
    s += x;
    q += static_cast<__int128>(x) * x;
  }
  GroupBudget b;
  b.mean = static_cast<double>(s) / static_cast<double>(n);
  const double var = static_cast<double>(n * q - s * s) / static_cast<double>(n * n);
  b.stddev = std::sqrt(std::max(0.0, var));
  const __int128 bound = 9 * (n * q - s * s);
  b.retained.resize(sizes.size());
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const __int128 dev = n * static_cast<__int128>(sizes[i]) - s;
    b.retained[i] = dev * dev <= bound;
    if (b.retained[i])
      b.n_g = std::max(b.n_g, sizes[i]);
    else
      ++b.excluded_count;
  }
  return b;
}

inline GroupBudget compute_group_budget(std::span<const SupervisionTarget> targets) {
  std::vector<std::size_t> sizes;
  sizes.reserve(targets.size());
  for (const auto& t : targets) sizes.push_back(t.group_atoms.size());
  return compute_group_budget(std::span<const std::size_t>(sizes));
}

/// Sorted set of element symbols observed in the dataset, dummy first.
inline AtomVocab build_vocab(std::span<const ReactionRecord> records, const AtomVocab& source = AtomVocab::organic()) {
  std::set<std::string> elements;
  for (const auto& r : records) {
    for (auto a : r.product.atoms())
      if (a != kDummyAtom) elements.insert(source.symbol(a));
    for (auto a : r.reactants.atoms())
      if (a != kDummyAtom) elements.insert(source.symbol(a));
  }
  const std::vector<std::string> sorted(elements.begin(), elements.end());
  return AtomVocab::from_elements(sorted);
}

inline ReactionRecord remap_vocab(const ReactionRecord& r, const AtomVocab& from, const AtomVocab& to) {
  ReactionRecord out = r;
  out.product = remap_vocab(r.product, from, to);
  out.reactants = remap_vocab(r.reactants, from, to);
  return out;
}

namespace detail {
inline std::string join_edges(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? ";" : "") + parts[i];
  return s.empty() ? "-" : s;
}
}  // namespace detail

/// One supervision record per line:
///   line<TAB>group=<sym,...><TAB>group_bonds=<i-j:o;...><TAB>ext=<g-p:o;...>
///   <TAB>broken=<u-v;...><TAB>changed=<u-v:po>ro;...><TAB>flag=<OK|UNRECONSTRUCTABLE>
/// Empty lists are written as '-'. Product atoms are referenced by index.
inline std::string format_supervision(const SupervisionTarget& t, const AtomVocab& vocab, std::size_t line) {
  std::ostringstream o;
  std::vector<std::string> parts;
  for (std::size_t k = 0; k < t.group.size(); ++k) parts.push_back(vocab.symbol(t.group.atom(k)));
  std::string group;
  for (std::size_t i = 0; i < parts.size(); ++i) group += (i ? "," : "") + parts[i];
  o << line << "\tgroup=" << (group.empty() ? "-" : group);
  parts.clear();
  for (const auto& e : t.group.edges())
    parts.push_back(std::to_string(e.u) + "-" + std::to_string(e.v) + ":" + std::to_string(e.order));
  o << "\tgroup_bonds=" << detail::join_edges(parts);
  parts.clear();
  for (const auto& e : t.external_bonds)
    parts.push_back(std::to_string(e.group_node) + "-" + std::to_string(e.product_node) + ":" + std::to_string(e.order));
  o << "\text=" << detail::join_edges(parts);
  parts.clear();
  for (const auto& b : t.broken_bonds) parts.push_back(std::to_string(b.u) + "-" + std::to_string(b.v));
  o << "\tbroken=" << detail::join_edges(parts);
  parts.clear();
  for (const auto& c : t.changed_bonds)
    parts.push_back(std::to_string(c.u) + "-" + std::to_string(c.v) + ":" + std::to_string(c.product_order) + ">" +
                    std::to_string(c.reactant_order));
  o << "\tchanged=" << detail::join_edges(parts);
  o << "\tflag=" << (t.reconstructable ? "OK" : "UNRECONSTRUCTABLE");
  return o.str();
}

/// Inverse of format_supervision (product_to_reactant and group_atoms are
/// not cached and come back empty).
inline SupervisionTarget parse_supervision(std::string_view line, const AtomVocab& vocab) {
  std::map<std::string, std::string> fields;
  std::size_t start = line.find('\t');
  if (start == std::string_view::npos) throw DataError("malformed supervision line");
  std::string rest(line.substr(start + 1));
  std::istringstream in(rest);
  std::string item;
  while (std::getline(in, item, '\t')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw DataError("malformed supervision field '" + item + "'");
    fields[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto field = [&](const std::string& k) -> const std::string& {
    auto it = fields.find(k);
    if (it == fields.end()) throw DataError("supervision line missing field '" + k + "'");
    return it->second;
  };
  auto split = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s == "-") return out;
    std::istringstream ss(s);
    std::string x;
    while (std::getline(ss, x, sep)) out.push_back(x);
    return out;
  };
  SupervisionTarget t;
  const auto syms = split(field("group"), ',');
  t.group = MolGraph(syms.size(), NodeTag::Group);
  for (std::size_t k = 0; k < syms.size(); ++k) {
    const int idx = vocab.index_of(syms[k]);
    if (idx <= 0) throw DataError("unknown element '" + syms[k] + "' in supervision cache");
    t.group.set_atom(k, static_cast<Category>(idx));
  }
  for (const auto& e : split(field("group_bonds"), ';')) {
    std::size_t u, v;
    int o;
    char d, c;
    std::istringstream es(e);
    if (!(es >> u >> d >> v >> c >> o)) throw DataError("malformed group bond '" + e + "'");
    t.group.set_bond(u, v, static_cast<Category>(o));
  }
  for (const auto& e : split(field("ext"), ';')) {
    std::size_t g, p;
    int o;
    char d, c;
    std::istringstream es(e);
    if (!(es >> g >> d >> p >> c >> o)) throw DataError("malformed external bond '" + e + "'");
    t.external_bonds.push_back({g, p, static_cast<Category>(o)});
  }
  for (const auto& e : split(field("broken"), ';')) {
    std::size_t u, v;
    char d;
    std::istringstream es(e);
    if (!(es >> u >> d >> v)) throw DataError("malformed broken bond '" + e + "'");
    t.broken_bonds.push_back({u, v});
  }
  for (const auto& e : split(field("changed"), ';')) {
    std::size_t u, v;
    int po, ro;
    char d, c, gt;
    std::istringstream es(e);
    if (!(es >> u >> d >> v >> c >> po >> gt >> ro)) throw DataError("malformed changed bond '" + e + "'");
    t.changed_bonds.push_back({u, v, static_cast<Category>(po), static_cast<Category>(ro)});
  }
  t.reconstructable = field("flag") == "OK";
  return t;
}

}  // namespace retrodiff
