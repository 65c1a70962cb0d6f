#include <gtest/gtest.h>

#include <chrono>
#include <limits>
#include <random>

#include "retrodiff/graph_features.hpp"
#include "retrodiff/smiles.hpp"
#include "support/oracles.hpp"

using namespace retrodiff;

namespace {

std::vector<std::vector<int>> dense(const MolGraph& g) {
  std::vector<std::vector<int>> a(g.size(), std::vector<int>(g.size(), 0));
  for (const auto& e : g.edges()) a[e.u][e.v] = a[e.v][e.u] = 1;
  return a;
}

MolGraph ring(std::size_t n) {
  MolGraph g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.set_atom(i, 1);
    g.set_bond(i, (i + 1) % n, 1);
  }
  return g;
}

MolGraph from_mask(std::size_t n, std::uint32_t mask) {
  MolGraph g(n);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    g.set_atom(i, 1);
    for (std::size_t j = i + 1; j < n; ++j, ++bit)
      if (mask >> bit & 1u) g.set_bond(i, j, 1);
  }
  return g;
}

void expect_cycles_match(const MolGraph& g, double& worst) {
  const auto c = cycle_counts(adjacency(g).A);
  const auto census = oracle::enumerate_cycles(dense(g), 6);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    worst = std::max({worst, std::abs(c.X3[k] - census.per_node[3][i]), std::abs(c.X4[k] - census.per_node[4][i]),
                      std::abs(c.X5[k] - census.per_node[5][i])});
  }
  worst = std::max({worst, std::abs(c.y3 - census.per_graph[3]), std::abs(c.y4 - census.per_graph[4]),
                    std::abs(c.y5 - census.per_graph[5]), std::abs(c.y6 - census.per_graph[6])});
}

}  // namespace

TEST(Adjacency, DegreesIgnoreBondOrder) {
  const auto a = adjacency(parse_molecule("C1CC1").graph);
  EXPECT_EQ(a.d, Eigen::Vector3d(2, 2, 2));
  EXPECT_EQ(adjacency(MolGraph()).A.size(), 0);
  const auto b = adjacency(parse_molecule("C=O").graph);
  EXPECT_EQ(b.A(0, 1), 1.0);
  EXPECT_EQ(b.d, Eigen::Vector2d(1, 1));
}

TEST(Spectrum, ClosedFormCases) {
  const auto p2 = laplacian_spectrum(adjacency(parse_molecule("CC").graph).A);
  EXPECT_NEAR(p2.values[0], 0.0, 1e-12);
  EXPECT_NEAR(p2.values[1], 2.0, 1e-12);
  const auto f = compute_features(parse_molecule("CC.CC").graph, AtomVocab::organic(), 0.0);
  EXPECT_EQ(f.graph_extra[0], 2.0);
}

TEST(Spectrum, EigenpairsAndComponentCount) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    const MolGraph g = oracle::random_graph(rng, n, 3, 0.1 + 0.5 * (trial % 5) / 4.0);
    const auto A = adjacency(g).A;
    const auto s = laplacian_spectrum(A);
    Eigen::MatrixXd L = -A;
    L.diagonal() += A.rowwise().sum();
    for (Eigen::Index k = 0; k < s.values.size(); ++k) {
      EXPECT_LT((L * s.vectors.col(k) - s.values[k] * s.vectors.col(k)).cwiseAbs().maxCoeff(), 1e-8);
      if (k > 0) {
        EXPECT_LE(s.values[k - 1], s.values[k]);
      }
    }
    EXPECT_LT((s.vectors.transpose() * s.vectors - Eigen::MatrixXd::Identity(A.rows(), A.rows())).cwiseAbs().maxCoeff(),
              1e-8);
    const auto f = compute_features(g, AtomVocab::organic(), 0.5);
    EXPECT_EQ(static_cast<std::size_t>(f.graph_extra[0]), oracle::component_count(dense(g)));
  }
}

TEST(Spectrum, NonFiniteInputFailsToConverge) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(3, 3);
  m(0, 1) = m(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(symmetric_eigen(m), NumericError);
}

TEST(Cycles, NamedExamples) {
  const auto k3 = cycle_counts(adjacency(ring(3)).A);
  EXPECT_EQ(k3.X3, Eigen::Vector3d(1, 1, 1));
  EXPECT_DOUBLE_EQ(k3.y3, 1.0);
  const auto c4 = cycle_counts(adjacency(ring(4)).A);
  EXPECT_EQ(c4.X4, Eigen::Vector4d(1, 1, 1, 1));
  EXPECT_DOUBLE_EQ(c4.y4, 1.0);
  EXPECT_DOUBLE_EQ(cycle_counts(adjacency(ring(6)).A).y6, 1.0);
  const auto tree = cycle_counts(adjacency(parse_molecule("CC(C)C(CC)CN").graph).A);
  EXPECT_EQ(tree.X3.cwiseAbs().sum() + tree.X4.cwiseAbs().sum() + tree.X5.cwiseAbs().sum(), 0.0);
  EXPECT_EQ(std::abs(tree.y3) + std::abs(tree.y4) + std::abs(tree.y5) + std::abs(tree.y6), 0.0);
}

TEST(Cycles, ExhaustiveSmallGraphsAndRandomSeven) {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t connected = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    const std::uint32_t edges = static_cast<std::uint32_t>(n * (n - 1) / 2);
    for (std::uint32_t mask = 0; mask < (1u << edges); ++mask) {
      const MolGraph g = from_mask(n, mask);
      if (oracle::component_count(dense(g)) != 1) continue;
      ++connected;
      expect_cycles_match(g, worst);
    }
  }
  // Labeled connected graphs on 1..6 nodes (OEIS A001187).
  EXPECT_EQ(connected, 1u + 1u + 4u + 38u + 728u + 26704u);
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) expect_cycles_match(oracle::random_graph(rng, 7, 1, 0.2 + 0.6 * (trial % 7) / 6.0), worst);
  EXPECT_LT(worst, 1e-6);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 120.0);
}

TEST(Chemical, ValencyAndWeight) {
  const auto g = parse_molecule("C=CC").graph;
  const auto f = chemical_features(g, AtomVocab::organic());
  EXPECT_EQ(f.valency[1], 3.0);
  const auto co2 = chemical_features(parse_molecule("O=C=O").graph, AtomVocab::organic());
  EXPECT_NEAR(co2.weight, 12.011 + 2 * 15.999, 1e-12);
  EXPECT_NEAR(co2.weight, 44.01, 1e-2);
  MolGraph d = g;
  d.set_atom(2, kDummyAtom);
  EXPECT_NEAR(chemical_features(d, AtomVocab::organic()).weight, 2 * 12.011, 1e-12);
}

TEST(Features, LayoutAndPadding) {
  const auto g = parse_molecule("CC(C)O.N").graph;
  const auto f = compute_features(g, AtomVocab::organic(), 0.25);
  ASSERT_EQ(f.node_extra.rows(), 5);
  ASSERT_EQ(f.node_extra.cols(), static_cast<Eigen::Index>(kNodeExtra));
  ASSERT_EQ(f.graph_extra.size(), static_cast<Eigen::Index>(kGraphExtra));
  EXPECT_EQ(f.graph_extra[0], 2.0);
  EXPECT_EQ(f.graph_extra[11], 0.25);
  // Star K_{1,3} plus an isolated node: nonzero eigenvalues 1, 1, 4 then padding.
  EXPECT_NEAR(f.graph_extra[1], 1.0, 1e-9);
  EXPECT_NEAR(f.graph_extra[2], 1.0, 1e-9);
  EXPECT_NEAR(f.graph_extra[3], 4.0, 1e-9);
  EXPECT_EQ(f.graph_extra[4], 0.0);
  EXPECT_EQ(f.graph_extra[5], 0.0);
  for (Eigen::Index i = 0; i < 4; ++i) EXPECT_EQ(f.node_extra(i, 3), 1.0);
  EXPECT_EQ(f.node_extra(4, 3), 0.0);
  EXPECT_EQ(f.node_extra(1, 6), 3.0);
  EXPECT_TRUE(f.node_extra.allFinite());
  // The degenerate eigenvalue-1 eigenspace has weight 2/3 on each leaf of the star.
  for (Eigen::Index leaf : {0, 2, 3}) EXPECT_NEAR(f.node_extra(leaf, 4), 2.0 / 3.0, 1e-9);
}

TEST(Features, PermutationEquivariance) {
  std::mt19937_64 rng(99);
  std::vector<MolGraph> graphs = {ring(6), ring(5), parse_molecule("C1=CC=CC=C1").graph,
                                  parse_molecule("CC(C)(C)C").graph, parse_molecule("C1CC2CCC1C2.CC.CC").graph};
  for (int i = 0; i < 20; ++i) graphs.push_back(oracle::random_graph(rng, 4 + rng() % 9, 4, 0.3, 3));
  double worst = 0;
  for (const auto& g : graphs) {
    const auto base = compute_features(g, AtomVocab::organic(), 0.3);
    for (int trial = 0; trial < 100; ++trial) {
      const auto perm = oracle::random_permutation(rng, g.size());
      const auto f = compute_features(g.permuted(perm), AtomVocab::organic(), 0.3);
      worst = std::max(worst, (f.graph_extra - base.graph_extra).cwiseAbs().maxCoeff());
      for (std::size_t k = 0; k < g.size(); ++k)
        worst = std::max(worst, (f.node_extra.row(static_cast<Eigen::Index>(k)) -
                                 base.node_extra.row(static_cast<Eigen::Index>(perm[k])))
                                    .cwiseAbs()
                                    .maxCoeff());
    }
  }
  EXPECT_LT(worst, 1e-6);
}
