#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "retrodiff/canonical.hpp"
#include "retrodiff/molgraph.hpp"
#include "retrodiff/smiles.hpp"
#include "support/oracles.hpp"

using namespace retrodiff;

namespace {

Category el(const char* sym) { return static_cast<Category>(AtomVocab::organic().index_of(sym)); }

MolGraph parse(const char* s) { return parse_molecule(s).graph; }

}  // namespace

TEST(Parse, LinearChain) {
  const auto g = parse("CCO");
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g.atom(0), el("C"));
  EXPECT_EQ(g.atom(1), el("C"));
  EXPECT_EQ(g.atom(2), el("O"));
  EXPECT_EQ(g.bond(0, 1), 1);
  EXPECT_EQ(g.bond(1, 2), 1);
  EXPECT_EQ(g.bond(0, 2), 0);
}

TEST(Parse, RingClosure) {
  const auto g = parse("C1CC1");
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g.bond_count(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(g.degree(i), 2u);
}

TEST(Parse, BracketAtomsKeepMaps) {
  const auto p = parse_molecule("[CH3:1][OH:2]");
  ASSERT_EQ(p.graph.size(), 2u);
  EXPECT_EQ(p.graph.atom(0), el("C"));
  EXPECT_EQ(p.graph.atom(1), el("O"));
  EXPECT_EQ(p.atom_maps, (std::vector<int>{1, 2}));
  EXPECT_EQ(p.graph.bond(0, 1), 1);
}

TEST(Parse, BondOrdersBranchesAndTwoLetterElements) {
  const auto g = parse("ClC(=O)C#N");
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g.atom(0), el("Cl"));
  EXPECT_EQ(g.bond(1, 2), 2);
  EXPECT_EQ(g.bond(1, 3), 1);
  EXPECT_EQ(g.bond(3, 4), 3);
  const auto b = parse("BrCC=1CCC1");
  EXPECT_EQ(b.atom(0), el("Br"));
  EXPECT_EQ(b.bond(2, 5), 2);
}

TEST(Parse, DotSeparatedMolecules) {
  const auto g = parse("C.CO");
  EXPECT_EQ(g.size(), 3u);
  EXPECT_EQ(g.bond_count(), 1u);
  EXPECT_EQ(g.components().size(), 2u);
}

TEST(Parse, EmptyStringIsEmptyGraph) { EXPECT_TRUE(parse("").empty()); }

TEST(Parse, RejectsDeclaredNonSubsetFeatures) {
  auto message = [](const char* s) {
    try {
      parse_molecule(s);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("c1ccccc1").find("aromatic"), std::string::npos);
  EXPECT_NE(message("C[N+](C)C").find("charge"), std::string::npos);
  EXPECT_NE(message("C/C=C/C").find("stereo"), std::string::npos);
  EXPECT_NE(message("[C@H](C)O").find("stereo"), std::string::npos);
  EXPECT_NE(message("[13C]").find("isotope"), std::string::npos);
}

TEST(Parse, ReportsStructuralErrorsWithOffsets) {
  auto offset_of = [](const char* s) -> long {
    try {
      parse_molecule(s);
    } catch (const ParseError& e) {
      return static_cast<long>(e.offset());
    }
    return -1;
  };
  EXPECT_EQ(offset_of("C1CC"), 1);      // unmatched ring closure
  EXPECT_EQ(offset_of("CC(C"), 2);      // unmatched '('
  EXPECT_EQ(offset_of("CC)C"), 2);      // unmatched ')'
  EXPECT_EQ(offset_of("CXC"), 1);       // unknown element
  EXPECT_EQ(offset_of("CC="), 2);       // dangling bond
  EXPECT_EQ(offset_of("C11"), 2);       // ring onto itself
  EXPECT_EQ(offset_of("C12CC12"), 6);   // duplicate bond
  EXPECT_EQ(offset_of("[C"), 0);        // unterminated bracket
  EXPECT_GE(offset_of("B"), 0);         // boron outside the element set
  EXPECT_GE(offset_of("..C"), 0);
}

TEST(Write, SimpleCases) {
  const auto& v = AtomVocab::organic();
  EXPECT_EQ(write_molecule(parse("C1CC1"), v), "C1CC1");
  EXPECT_EQ(write_molecule(parse("O"), v), "O");
  EXPECT_EQ(write_molecule(parse("C.C"), v), "C.C");
  EXPECT_EQ(write_molecule(parse("CC(=O)Cl"), v), "CC(=O)Cl");
}

TEST(Write, MapsAndDummyRejection) {
  const auto& v = AtomVocab::organic();
  const auto p = parse_molecule("[CH3:1][OH:2]");
  EXPECT_EQ(write_molecule(p.graph, v, p.atom_maps), "[C:1][O:2]");
  MolGraph g(2);
  g.set_atom(0, el("C"));
  EXPECT_THROW(write_molecule(g, v), ValidationError);
}

TEST(Write, RoundTripOnFusedRings) {
  const auto& v = AtomVocab::organic();
  for (const char* s : {"C1=CC=C2C(=C1)C=CC=C2", "C12C3C1C23", "C1CC2CCC1C2", "N#CC1=CC(Br)=CC=C1"}) {
    const auto g = parse(s);
    const auto back = parse(write_molecule(g, v).c_str());
    EXPECT_EQ(canonical_form(g), canonical_form(back)) << s << " -> " << write_molecule(g, v);
    EXPECT_TRUE(oracle::isomorphic(g, back)) << s;
  }
}

TEST(Write, TwoDigitRingLabels) {
  const auto& v = AtomVocab::organic();
  EXPECT_EQ(parse("C%12CC%12").bond_count(), 3u);
  // Complete graph on 12 atoms keeps more than nine rings open at once.
  MolGraph k(12);
  for (std::size_t i = 0; i < 12; ++i) {
    k.set_atom(i, el("C"));
    for (std::size_t j = 0; j < i; ++j) k.set_bond(i, j, 1);
  }
  const std::string text = write_molecule(k, v);
  EXPECT_NE(text.find('%'), std::string::npos);
  EXPECT_TRUE(oracle::isomorphic(parse(text.c_str()), k));
  EXPECT_THROW(parse("C%1CC%1"), ParseError);
}

TEST(Canonical, PermutationInvariance) {
  std::mt19937_64 rng(7);
  for (const char* s : {"CCO", "C1CC1", "CC(C)(C)C(=O)OC", "C1=CC=CC=C1Cl", "C1CC2CCC1C2"}) {
    const auto g = parse(s);
    const auto ref = canonical_form(g);
    for (int k = 0; k < 100; ++k) {
      const auto perm = oracle::random_permutation(rng, g.size());
      EXPECT_EQ(canonical_form(g.permuted(perm)), ref) << s;
    }
  }
}

TEST(Canonical, DistinguishesNonIsomorphic) {
  EXPECT_NE(canonical_form(parse("CCO")), canonical_form(parse("COC")));
  EXPECT_NE(canonical_form(parse("C=CC")), canonical_form(parse("CCC")));
  EXPECT_EQ(canonical_form(parse("C=CC")), canonical_form(parse("CC=C")));
}

TEST(Canonical, AgreesWithBruteForceIsomorphism) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 8);
  std::uniform_real_distribution<double> dens(0.15, 0.6);
  int iso = 0, non = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = static_cast<std::size_t>(size(rng));
    const auto a = oracle::random_graph(rng, n, 2, dens(rng), 2);
    MolGraph b;
    if (trial % 2 == 0) {
      // Isomorphic copy, optionally with one edge flipped to make near-misses.
      b = a.permuted(oracle::random_permutation(rng, n));
      if (trial % 4 == 0 && n >= 2) {
        const std::size_t i = rng() % n, j = (i + 1 + rng() % (n - 1)) % n;
        b.set_bond(i, j, b.bond(i, j) ? 0 : 1);
      }
    } else {
      b = oracle::random_graph(rng, n, 2, dens(rng), 2);
    }
    const bool truth = oracle::isomorphic(a, b);
    (truth ? iso : non)++;
    ASSERT_EQ(canonical_form(a) == canonical_form(b), truth) << "trial " << trial;
  }
  EXPECT_GT(iso, 100);
  EXPECT_GT(non, 100);
}

TEST(Validity, ValenceRules) {
  const auto& v = AtomVocab::organic();
  EXPECT_FALSE(is_valid(parse("CO(C)C"), v));
  EXPECT_TRUE(is_valid(parse("C=C=C"), v));
  EXPECT_TRUE(is_valid(MolGraph{}, v));
  EXPECT_FALSE(is_valid(parse("C(C)(C)(C)(C)C"), v));
  EXPECT_TRUE(is_valid(parse("OS(=O)(=O)O"), v));
  MolGraph g(2);
  g.set_atom(0, el("C"));
  g.set_bond(0, 1, 1);  // node 1 is dummy
  EXPECT_FALSE(is_valid(g, v));
}

TEST(Validity, PermutationInvariant) {
  const auto& v = AtomVocab::organic();
  std::mt19937_64 rng(3);
  for (int t = 0; t < 200; ++t) {
    auto g = oracle::random_graph(rng, 6, 3, 0.4, 3);
    const bool ref = is_valid(g, v);
    EXPECT_EQ(is_valid(g.permuted(oracle::random_permutation(rng, 6)), v), ref);
  }
}

TEST(Splice, DisjointUnionAndCrossEdges) {
  const auto x = parse("CCO");
  auto grp = parse("Cl");
  grp.set_tag(0, NodeTag::Group);
  const auto u = splice(x, grp);
  EXPECT_EQ(u.size(), 4u);
  EXPECT_EQ(u.components().size(), 2u);
  EXPECT_EQ(u.tag(3), NodeTag::Group);
  const std::vector<CrossEdge> cross{{1, 3, 1}};
  const auto c = splice(x, grp, cross);
  EXPECT_EQ(c.bond_count(), x.bond_count() + 1);
  EXPECT_EQ(c.bond(1, 3), 1);
  const std::vector<CrossEdge> dup{{0, 1, 1}};
  EXPECT_THROW(splice(x, grp, dup), ValidationError);
}

TEST(Splice, AllDummyGroupStripsBackToProduct) {
  const auto x = parse("CC(=O)O");
  MolGraph dummies(4, NodeTag::Dummy);
  const auto s = strip_dummies(splice(x, dummies));
  EXPECT_EQ(s.graph, x);
  EXPECT_TRUE(s.inconsistencies.empty());
}

TEST(Splice, RemovingCrossEdgesRecoversParts) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const auto a = oracle::random_graph(rng, 4, 3, 0.5, 2);
    const auto b = oracle::random_graph(rng, 3, 3, 0.5, 2);
    std::vector<CrossEdge> cross{{rng() % 4, 4 + rng() % 3, 1}};
    const std::array<MolGraph, 2> parts{a, b};
    auto g = splice(std::span<const MolGraph>(parts), cross);
    for (const auto& e : cross) g.set_bond(e.u, e.v, 0);
    const std::vector<std::size_t> first{0, 1, 2, 3}, second{4, 5, 6};
    EXPECT_TRUE(oracle::isomorphic(g.subgraph(first), a));
    EXPECT_TRUE(oracle::isomorphic(g.subgraph(second), b));
  }
}

TEST(Strip, RemovesDummiesAndReportsInconsistentEdges) {
  MolGraph g(10);
  g.set_atom(0, el("C"));
  g.set_atom(4, el("O"));
  g.set_atom(9, el("N"));
  g.set_bond(0, 4, 1);
  auto s = strip_dummies(g);
  EXPECT_EQ(s.graph.size(), 3u);
  EXPECT_EQ(s.kept, (std::vector<std::size_t>{0, 4, 9}));
  EXPECT_EQ(s.graph.bond(0, 1), 1);

  EXPECT_EQ(strip_dummies(MolGraph(5)).graph.size(), 0u);

  MolGraph h(2);
  h.set_atom(0, el("C"));
  h.set_bond(0, 1, 1);
  s = strip_dummies(h);
  EXPECT_EQ(s.graph.size(), 1u);
  EXPECT_EQ(s.inconsistencies.size(), 1u);
  EXPECT_EQ(s.graph.bond_count(), 0u);
}

TEST(Corpus, ParserRoundTripOnStringCorpus) {
  std::ifstream in(RETRODIFF_DATA_DIR "/smiles200.txt");
  ASSERT_TRUE(in) << "missing data/smiles200.txt";
  const auto& v = AtomVocab::organic();
  std::string line;
  int count = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++count;
    const auto g = parse(line.c_str());
    const auto once = write_canonical(g, v);
    const auto g2 = parse(once.c_str());
    EXPECT_EQ(canonical_form(g2), canonical_form(g)) << line;
    EXPECT_EQ(write_canonical(g2, v), once) << line;
  }
  EXPECT_EQ(count, 200);
}
