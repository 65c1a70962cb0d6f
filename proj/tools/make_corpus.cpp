// Generates the synthetic, atom-mapped reaction corpora shipped in data/.
//
//   make_corpus <out_dir>
//
// writes toy20.rxn, corpus200.rxn and smiles200.txt. Output is a pure
// function of the built-in fragment tables and fixed seeds.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "retrodiff/canonical.hpp"
#include "retrodiff/molgraph.hpp"
#include "retrodiff/smiles.hpp"

using namespace retrodiff;

namespace {

const AtomVocab& V = AtomVocab::organic();

struct Fragment {
  MolGraph g;
  std::size_t attach = 0;
};

// The atom carrying map number 1 marks the attachment point (first atom otherwise).
Fragment fragment(const std::string& smiles) {
  auto p = parse_molecule(smiles);
  Fragment f{p.graph, 0};
  for (std::size_t i = 0; i < p.atom_maps.size(); ++i)
    if (p.atom_maps[i] == 1) f.attach = i;
  return f;
}

struct Reaction {
  MolGraph product;
  MolGraph reactants;
  std::vector<int> reactant_to_product;  // -1 for group atoms
  int cls;
};

// Product = a + b joined at their attachment atoms.
MolGraph join(const Fragment& a, const Fragment& b, Category order = 1) {
  const std::vector<CrossEdge> e{{a.attach, a.g.size() + b.attach, order}};
  return splice(a.g, b.g, e);
}

std::vector<int> identity_then_groups(std::size_t mapped, std::size_t total) {
  std::vector<int> m(total, -1);
  for (std::size_t i = 0; i < mapped; ++i) m[i] = static_cast<int>(i);
  return m;
}

// R1-R2 <= R1-X + R2-Y : leaving groups on both ends of the broken bond.
Reaction coupling(const Fragment& r1, const Fragment& r2, const Fragment& x, const Fragment& y, int cls) {
  Reaction r;
  r.product = join(r1, r2);
  const std::size_t n1 = r1.g.size(), n2 = r2.g.size(), nx = x.g.size();
  const std::array<MolGraph, 4> parts{r1.g, r2.g, x.g, y.g};
  const std::vector<CrossEdge> e{{r1.attach, n1 + n2 + x.attach, 1}, {n1 + r2.attach, n1 + n2 + nx + y.attach, 1}};
  r.reactants = splice(std::span<const MolGraph>(parts), e);
  r.reactant_to_product = identity_then_groups(n1 + n2, r.reactants.size());
  r.cls = cls;
  return r;
}

// R-H <= R-PG : one group, no broken bond.
Reaction deprotection(const Fragment& r, const Fragment& pg) {
  Reaction out;
  out.product = r.g;
  out.reactants = join(r, pg);
  out.reactant_to_product = identity_then_groups(r.g.size(), out.reactants.size());
  out.cls = 6;
  return out;
}

// Acyl-N <= Acyl-Cl + H-N : the amine end only gains hydrogen.
Reaction acylation(const Fragment& acyl, const Fragment& amine) {
  Reaction out;
  out.product = join(acyl, amine);
  const Fragment cl = fragment("Cl");
  const std::array<MolGraph, 3> parts{acyl.g, amine.g, cl.g};
  const std::vector<CrossEdge> e{{acyl.attach, acyl.g.size() + amine.g.size(), 1}};
  out.reactants = splice(std::span<const MolGraph>(parts), e);
  out.reactant_to_product = identity_then_groups(acyl.g.size() + amine.g.size(), out.reactants.size());
  out.cls = 2;
  return out;
}

// C-OH <= C=O : a bond-order change with no group.
Reaction reduction(const Fragment& alcohol) {
  Reaction out;
  out.product = alcohol.g;
  out.reactants = alcohol.g;
  const std::size_t o = alcohol.attach;
  const auto nb = alcohol.g.neighbors(o);
  out.reactants.set_bond(o, nb.at(0), 2);
  out.reactant_to_product = identity_then_groups(alcohol.g.size(), alcohol.g.size());
  out.cls = 7;
  return out;
}

bool valid(const Reaction& r) { return is_valid(r.product, V) && is_valid(r.reactants, V); }

std::string format(const Reaction& r, std::mt19937_64& rng, bool with_class) {
  const std::size_t np = r.product.size(), nr = r.reactants.size();
  // Shuffle both atom orders so file order carries no information.
  std::vector<std::size_t> pp(np), rp(nr);
  std::iota(pp.begin(), pp.end(), 0);
  std::iota(rp.begin(), rp.end(), 0);
  std::shuffle(pp.begin(), pp.end(), rng);
  std::shuffle(rp.begin(), rp.end(), rng);
  std::vector<int> map_of_product(np);
  std::vector<int> numbers(np);
  std::iota(numbers.begin(), numbers.end(), 1);
  std::shuffle(numbers.begin(), numbers.end(), rng);
  for (std::size_t i = 0; i < np; ++i) map_of_product[i] = numbers[i];

  std::vector<int> pmaps(np), rmaps(nr, 0);
  for (std::size_t k = 0; k < np; ++k) pmaps[k] = map_of_product[pp[k]];
  for (std::size_t k = 0; k < nr; ++k) {
    const int p = r.reactant_to_product[rp[k]];
    if (p >= 0) rmaps[k] = map_of_product[static_cast<std::size_t>(p)];
  }
  std::string line = with_class ? std::to_string(r.cls) + "\t" : "";
  line += write_molecule(r.reactants.permuted(rp), V, rmaps);
  line += ">>";
  line += write_molecule(r.product.permuted(pp), V, pmaps);
  return line;
}

std::vector<Fragment> fragments(const std::vector<std::string>& s) {
  std::vector<Fragment> out;
  for (const auto& x : s) out.push_back(fragment(x));
  return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
  std::cout << "wrote " << lines.size() << " lines to " << path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_corpus <out_dir>\n";
    return 2;
  }
  const std::string dir = argv[1];

  const auto carbon = fragments({
      "C[CH2:1]", "CC(C)[CH2:1]", "[C:1]1=CC=CC=C1", "[C:1]1=CC=C(C)C=C1", "[C:1]1=CC=C(OC)C=C1",
      "[C:1]1=CC=C(F)C=C1", "[C:1]1=CC=CN=C1", "[C:1]1=CC=C(C#N)C=C1", "[C:1]1=CSC=C1",
      "[CH2:1]C1=CC=CC=C1", "C1CC[CH:1]CC1", "[CH:1]=CC", "[C:1]#CC", "[C:1]1=CC=C(Cl)C=C1",
      "[C:1]1=NC=CC=C1", "CC(=O)[C:1]1=CC=CC=C1",
  });
  const auto nitrogen = fragments({
      "C[NH:1]C1=CC=CC=C1", "C1CC[NH:1]CC1", "C1COCC[NH:1]1", "[NH2:1]CC1=CC=CC=C1", "[NH2:1]C1=CC=CC=C1",
      "C[NH:1]C", "[NH2:1]CCO", "C1CC[NH:1]C1", "[NH2:1]C1=CC=C(F)C=C1", "CC(C)[NH2:1]",
  });
  const auto oxygen = fragments({
      "[OH:1]C1=CC=CC=C1", "[OH:1]CC", "[OH:1]C(=O)CC", "[OH:1]CC1=CC=CC=C1", "[OH:1]C1CCCCC1",
      "[OH:1]C(=O)C1=CC=CC=C1",
  });
  const auto leaving = fragments({"Br", "I", "Cl", "OS(=O)(=O)C", "OS(=O)(=O)C(F)(F)F", "P(=O)(OC)OC"});
  const auto protecting = fragments({
      "C(=O)OC(C)(C)C", "C(=O)OCC1=CC=CC=C1", "C(=O)C", "CC1=CC=CC=C1", "C", "C(=O)C(F)(F)F",
      "CC1=CC=C(OC)C=C1", "S(=O)(=O)C1=CC=C(C)C=C1",
  });
  const auto acyl = fragments({"[C:1](=O)C", "[C:1](=O)C1=CC=CC=C1", "[C:1](=O)CC", "[C:1](=O)C1CC1", "[C:1](=O)OC"});
  const auto alcohols = fragments({
      "CC([OH:1])C", "[OH:1]CC1=CC=CC=C1", "CC([OH:1])C1=CC=CC=C1", "[OH:1]C1CCCCC1", "CCC([OH:1])CC",
      "[OH:1]CC1=CC=C(Cl)C=C1", "CC([OH:1])C1=CC=CN=C1", "[OH:1]C1CCN(C)CC1",
  });

  std::mt19937_64 rng(20240601);
  std::set<std::string> seen;
  std::vector<std::string> lines;
  auto add = [&](const Reaction& r, int budget_line) {
    (void)budget_line;
    if (!valid(r)) return false;
    const auto key = canonical_form(r.product).bytes + "|" + canonical_form(r.reactants).bytes;
    if (!seen.insert(key).second) return false;
    lines.push_back(format(r, rng, true));
    return true;
  };

  // 200-reaction corpus: couplings, deprotections, acylations, reductions.
  auto pick = [&](const std::vector<Fragment>& v) -> const Fragment& { return v[rng() % v.size()]; };
  int coupl = 0, deprot = 0, acyls = 0, reds = 0;
  while (coupl < 80) {
    const bool hetero = rng() % 4 == 0;
    const Fragment& a = pick(carbon);
    const Fragment& b = hetero ? pick(nitrogen) : pick(carbon);
    coupl += add(coupling(a, b, pick(leaving), pick(leaving), hetero ? 1 : 3), 0);
  }
  while (deprot < 60) {
    const bool onN = rng() % 3 != 0;
    deprot += add(deprotection(onN ? pick(nitrogen) : pick(oxygen), pick(protecting)), 0);
  }
  while (acyls < 40) acyls += add(acylation(pick(acyl), pick(nitrogen)), 0);
  for (const auto& a : alcohols) reds += add(reduction(a), 0);
  // Fill the remainder with further couplings onto oxygen nucleophiles.
  while (static_cast<int>(lines.size()) < 200) add(coupling(pick(carbon), pick(oxygen), pick(leaving), pick(leaving), 1), 0);
  write_lines(dir + "/corpus200.rxn", lines);

  // 20-reaction toy corpus: small, fully reconstructable reactions.
  const auto small_c = fragments({"C[CH2:1]", "[CH:1]=CC", "[C:1]#CC", "CC(C)[CH2:1]", "C1CC[CH:1]C1", "[CH2:1]CO"});
  const auto small_n = fragments({"C1CC[NH:1]C1", "C[NH:1]C", "[NH2:1]CCO", "CC(C)[NH2:1]", "C1CC[NH:1]CC1",
                                  "[OH:1]CC", "[OH:1]C1CCC1", "C[NH:1]CC=C", "[OH:1]CC#C", "[NH2:1]CC(F)F",
                                  "[OH:1]C(=O)CC", "C1COC[NH:1]1"});
  const auto small_lg = fragments({"Br", "I", "Cl"});
  const auto small_pg = fragments({"C(=O)C", "C", "CC"});
  std::mt19937_64 toy_rng(7);
  seen.clear();
  lines.clear();
  std::vector<std::string> toy;
  auto add_toy = [&](const Reaction& r) {
    if (!valid(r)) return false;
    const auto key = canonical_form(r.product).bytes;
    if (!seen.insert(key).second) return false;
    toy.push_back(format(r, toy_rng, false));
    return true;
  };
  int toy_c = 0;
  while (toy_c < 10) {
    const Fragment& a = small_c[toy_rng() % small_c.size()];
    const Fragment& b = small_c[toy_rng() % small_c.size()];
    toy_c += add_toy(coupling(a, b, small_lg[toy_rng() % 3], small_lg[toy_rng() % 3], 3));
  }
  int toy_d = 0;
  while (toy_d < 10) {
    const Fragment& a = small_n[toy_rng() % small_n.size()];
    toy_d += add_toy(deprotection(a, small_pg[toy_rng() % small_pg.size()]));
  }
  write_lines(dir + "/toy20.rxn", toy);

  // 200 SMILES strings: every distinct molecule above, written from a
  // shuffled atom order, topped up with fragment combinations.
  std::mt19937_64 srng(99);
  std::set<std::string> mols;
  std::vector<std::string> smiles;
  auto add_mol = [&](const MolGraph& g) {
    for (const auto& comp : g.components()) {
      const MolGraph m = g.subgraph(comp);
      if (!mols.insert(canonical_form(m).bytes).second) continue;
      std::vector<std::size_t> perm(m.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), srng);
      smiles.push_back(write_molecule(m.permuted(perm), V));
      if (smiles.size() == 200) return;
    }
  };
  for (const auto* set : {&carbon, &nitrogen, &oxygen, &leaving, &protecting, &acyl, &alcohols})
    for (const auto& f : *set) add_mol(f.g);
  for (const auto& a : carbon)
    for (const auto& b : carbon) {
      if (smiles.size() == 200) break;
      add_mol(join(a, b));
    }
  for (const auto& a : carbon)
    for (const auto& b : nitrogen) {
      if (smiles.size() == 200) break;
      add_mol(join(a, b));
    }
  write_lines(dir + "/smiles200.txt", smiles);
  return 0;
}
