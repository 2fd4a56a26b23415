#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vbfi/clustering.hpp"

using namespace vbfi;

namespace {

oracle::Rows to_rows(const Matrix& s) {
  oracle::Rows out;
  for (std::size_t i = 0; i < s.rows(); ++i) out.emplace_back(s.row(i).begin(), s.row(i).end());
  return out;
}

Matrix line_points(const std::vector<double>& xs) {
  Matrix m(xs.size(), 1);
  for (std::size_t i = 0; i < xs.size(); ++i) m(i, 0) = xs[i];
  return m;
}

// Tight groups around well separated centers; returns the features and the
// planted group of each point.
std::pair<Matrix, std::vector<std::size_t>> planted(Rng& rng, const std::vector<std::vector<double>>& centers,
                                                    const std::vector<std::size_t>& sizes, double radius) {
  const std::size_t dim = centers.front().size();
  std::size_t n = 0;
  for (auto s : sizes) n += s;
  Matrix m(n, dim);
  std::vector<std::size_t> group;
  std::size_t i = 0;
  for (std::size_t g = 0; g < centers.size(); ++g) {
    for (std::size_t k = 0; k < sizes[g]; ++k, ++i) {
      for (std::size_t f = 0; f < dim; ++f) m(i, f) = centers[g][f] + rng.uniform(-radius, radius);
      group.push_back(g);
    }
  }
  return {m, group};
}

bool same_partition(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) {
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
    }
  }
  return true;
}

}  // namespace

TEST(Similarity, NegativeSquaredDistanceWithMedianDiagonal) {
  const auto s = similarity_matrix(line_points({0, 1, 3}));
  EXPECT_EQ(s(0, 1), -1.0);
  EXPECT_EQ(s(1, 2), -4.0);
  EXPECT_EQ(s(0, 2), -9.0);
  EXPECT_EQ(s(2, 0), -9.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(s(i, i), -4.0);
}

TEST(Similarity, PreferenceVariants) {
  const auto pts = line_points({0, 1, 3, 7});
  EXPECT_EQ(similarity_matrix(pts, Preference::minimum())(0, 0), -49.0);
  EXPECT_EQ(similarity_matrix(pts, Preference::fixed(-2.5))(3, 3), -2.5);
  // Off-diagonal values sorted: 1,4,9,16,36,49 (each twice); median of 12 is (9+16)/2.
  EXPECT_EQ(similarity_matrix(pts)(1, 1), -12.5);
  EXPECT_EQ(Preference::parse("min").kind, Preference::Kind::kMinimum);
  EXPECT_EQ(Preference::parse("-3").value, -3.0);
  EXPECT_THROW(Preference::parse("nope"), std::invalid_argument);
}

TEST(AffinityPropagation, SingleItem) {
  const auto r = affinity_propagation(similarity_matrix(line_points({5})));
  ASSERT_EQ(r.clusters.size(), 1u);
  EXPECT_EQ(r.exemplar_of, (std::vector<std::size_t>{0}));
}

TEST(AffinityPropagation, IdenticalPairFormsOneCluster) {
  const auto r = affinity_propagation(similarity_matrix(line_points({2, 2})));
  ASSERT_EQ(r.clusters.size(), 1u);
  EXPECT_EQ(r.clusters[0].members, (std::vector<std::size_t>{0, 1}));
}

TEST(AffinityPropagation, SixPointsMatchBruteForce) {
  const auto s = similarity_matrix(line_points({0, 0.1, 0.2, 10, 10.1, 10.2}));
  const auto r = affinity_propagation(s);
  ASSERT_EQ(r.clusters.size(), 2u);
  EXPECT_EQ(r.exemplar_of, (std::vector<std::size_t>{1, 1, 1, 4, 4, 4}));
  EXPECT_NEAR(net_similarity(s, r.exemplar_of), oracle::best_net_similarity(to_rows(s)), 1e-9);
}

TEST(AffinityPropagation, ExemplarsAreTheirOwnExemplar) {
  Rng rng(3);
  Matrix pts(30, 2);
  for (std::size_t i = 0; i < 30; ++i) pts(i, 0) = rng.normal(), pts(i, 1) = rng.normal();
  const auto r = affinity_propagation(similarity_matrix(pts));
  std::size_t covered = 0;
  for (const auto& c : r.clusters) {
    EXPECT_EQ(r.exemplar_of[c.exemplar], c.exemplar);
    for (auto m : c.members) EXPECT_EQ(r.exemplar_of[m], c.exemplar);
    covered += c.members.size();
  }
  EXPECT_EQ(covered, 30u);
  for (std::size_t c = 1; c < r.clusters.size(); ++c) {
    EXPECT_GE(r.clusters[c - 1].members.size(), r.clusters[c].members.size());
  }
}

TEST(AffinityPropagation, PermutationInvariantOnSeparatedData) {
  Rng rng(4);
  auto [pts, group] = planted(rng, {{0, 0}, {20, 0}, {10, 17}}, {4, 3, 5}, 0.5);
  const auto a = affinity_propagation(similarity_matrix(pts));
  std::vector<std::size_t> perm(pts.rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int trial = 0; trial < 10; ++trial) {
    rng.shuffle(perm);
    const auto b = affinity_propagation(similarity_matrix(pts.select_rows(perm)));
    std::vector<std::size_t> mapped(pts.rows());
    for (std::size_t i = 0; i < perm.size(); ++i) mapped[perm[i]] = perm[b.exemplar_of[i]];
    EXPECT_EQ(mapped, a.exemplar_of);
  }
}

TEST(AffinityPropagation, RecoversPlantedGroups) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t a = 2 + rng.index(3), b = 2 + rng.index(3);
    auto [pts, group] = planted(rng, {{0, 0, 0}, {15, 0, 0}}, {a, b}, 0.5);
    const auto s = similarity_matrix(pts);
    const auto r = affinity_propagation(s);
    EXPECT_TRUE(same_partition(r.exemplar_of, group)) << "trial " << trial;
    EXPECT_NEAR(net_similarity(s, r.exemplar_of), oracle::best_net_similarity(to_rows(s)), 1e-9);
  }
}

TEST(AffinityPropagation, DeterministicForASeed) {
  Rng rng(6);
  Matrix pts(25, 3);
  for (std::size_t i = 0; i < 25; ++i)
    for (std::size_t f = 0; f < 3; ++f) pts(i, f) = rng.normal();
  ApConfig cfg;
  cfg.noise_seed = 9;
  const auto s = similarity_matrix(pts);
  EXPECT_EQ(affinity_propagation(s, cfg).exemplar_of, affinity_propagation(s, cfg).exemplar_of);
}

TEST(AffinityPropagation, RejectsBadInput) {
  EXPECT_THROW(affinity_propagation(Matrix(0, 0)), std::invalid_argument);
  EXPECT_THROW(affinity_propagation(Matrix(2, 3)), std::invalid_argument);
  ApConfig cfg;
  cfg.damping = 0.2;
  EXPECT_THROW(affinity_propagation(Matrix(2, 2), cfg), std::invalid_argument);
}
