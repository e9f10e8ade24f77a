#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "test_util.hpp"
#include "tsdf/fidelity.hpp"

namespace tsdf::fidelity {
namespace {

using nn::Tensor;

std::vector<double> draws(std::size_t n, std::uint64_t seed, double mean = 0.0, double sd = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = mean + sd * rng.normal();
  return v;
}

std::vector<double> integers(std::size_t n, int range, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = double(rng.uniform_index(0, std::size_t(range)));
  return v;
}

// sup over every sample point of |F_a - F_b| with F(x) = #{v <= x} / n.
double brute_ks(const std::vector<double>& a, const std::vector<double>& b) {
  auto cdf = [](const std::vector<double>& s, double x) {
    return double(std::count_if(s.begin(), s.end(), [&](double v) { return v <= x; })) / double(s.size());
  };
  double best = 0;
  for (const auto* s : {&a, &b}) {
    for (double x : *s) best = std::max(best, std::abs(cdf(a, x) - cdf(b, x)));
  }
  return best;
}

TEST(Ks, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t n = 1 + seed * 3 % 100, m = 1 + seed * 7 % 100;
    // Small integer support forces ties within and across samples.
    const auto a = integers(n, 12, seed), b = integers(m, 15, seed + 1000);
    EXPECT_NEAR(pooled_ks(a, b), brute_ks(a, b), 1e-12) << "seed " << seed;
    const auto c = draws(n, seed), d = draws(m, seed + 50, 0.3);
    EXPECT_NEAR(pooled_ks(c, d), brute_ks(c, d), 1e-12) << "seed " << seed;
  }
}

TEST(Ks, DisjointSupportsAndIdenticalSamples) {
  const auto a = draws(200, 1);
  std::vector<double> b(a);
  for (auto& v : b) v += 100.0;
  EXPECT_EQ(pooled_ks(a, b), 1.0);
  EXPECT_EQ(pooled_ks(a, a), 0.0);
}

TEST(Wasserstein, EqualSizesMatchOptimalAssignment) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = draws(6, seed), b = draws(6, seed + 100, 0.5, 2.0);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    double best = 1e300;
    do {
      double cost = 0;
      for (std::size_t i = 0; i < 6; ++i) cost += std::abs(a[i] - b[perm[i]]);
      best = std::min(best, cost / 6);
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(pooled_wasserstein(a, b), best, 1e-9);
  }
}

// Replicating each real value m times and each synthetic value n times gives
// equal-size samples with the same two ECDFs.
TEST(Wasserstein, UnequalSizesMatchReplicatedAssignment) {
  const auto a = integers(4, 9, 3), b = draws(6, 4, 2.0, 3.0);
  std::vector<double> ra, rb;
  for (double v : a) ra.insert(ra.end(), 6, v);
  for (double v : b) rb.insert(rb.end(), 4, v);
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  double expect = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) expect += std::abs(ra[i] - rb[i]);
  expect /= double(ra.size());
  EXPECT_NEAR(pooled_wasserstein(a, b), expect, 1e-12);
  EXPECT_NEAR(pooled_wasserstein(b, a), expect, 1e-12);
}

TEST(Wasserstein, ShiftByConstant) {
  const auto a = draws(500, 7);
  for (double c : {0.25, 3.0, -8.0}) {
    std::vector<double> b(a);
    for (auto& v : b) v += c;
    EXPECT_NEAR(pooled_wasserstein(a, b), std::abs(c), 1e-12);
  }
  const auto shorter = std::vector<double>(a.begin(), a.begin() + 499);
  std::vector<double> shifted(shorter);
  for (auto& v : shifted) v += 2.0;
  EXPECT_NEAR(pooled_wasserstein(shorter, shifted), 2.0, 1e-12);
  EXPECT_EQ(pooled_wasserstein(a, a), 0.0);
}

TEST(Kl, GaussianShiftMatchesClosedForm) {
  // KL(N(0,1) || N(0.5,1)) = 0.5^2 / 2.
  const auto p = draws(50000, 11), q = draws(50000, 12, 0.5);
  EXPECT_NEAR(pooled_kl(p, q), 0.125, 0.15 * 0.125);
}

TEST(Kl, ZeroForIdenticalAndAsymmetric) {
  const auto a = draws(2000, 5);
  EXPECT_EQ(pooled_kl(a, a), 0.0);
  const auto narrow = draws(5000, 6, 0.0, 0.5), wide = draws(5000, 7, 0.0, 2.0);
  const double pq = pooled_kl(narrow, wide), qp = pooled_kl(wide, narrow);
  EXPECT_GT(pq, 0.0);
  EXPECT_GT(qp, 0.0);
  EXPECT_GT(std::abs(pq - qp), 0.1);
}

TEST(Metrics, InvariantToSampleOrder) {
  auto a = draws(300, 8), b = draws(250, 9, 0.2);
  const auto before = compare(1, a, b);
  Rng rng(3);
  rng.shuffle(a.begin(), a.end());
  rng.shuffle(b.begin(), b.end());
  const auto after = compare(1, a, b);
  EXPECT_EQ(before.kl, after.kl);
  EXPECT_NEAR(before.wd, after.wd, 1e-12);
  EXPECT_EQ(before.ks, after.ks);
  EXPECT_EQ(after.n_real, 300u);
  EXPECT_EQ(after.n_synth, 250u);
}

TEST(Metrics, Errors) {
  const std::vector<double> empty, one{1.0}, flat{2.0, 2.0};
  EXPECT_THROW(pooled_ks(empty, one), ContractError);
  EXPECT_THROW(pooled_wasserstein(one, empty), ContractError);
  EXPECT_THROW(pooled_kl(flat, flat), ContractError);
  EXPECT_THROW(pooled_kl(one, std::vector<double>{0.0}, {.bins = 0}), ConfigError);
}

TEST(Pooled, FlattensEveryValue) {
  const std::vector<Tensor<double>> series{testing::random_tensor({4, 3}, 1), testing::random_tensor({4, 3}, 2)};
  const auto v = pooled_values(series);
  ASSERT_EQ(v.size(), 24u);
  EXPECT_EQ(v[0], series[0][0]);
  EXPECT_EQ(v[12], series[1][0]);
  Tensor<double> stacked({2, 4, 3});
  std::copy(v.begin(), v.end(), stacked.data());
  EXPECT_EQ(pooled_values(stacked), v);
  EXPECT_THROW(pooled_values(std::span<const Tensor<double>>{}), ContractError);
}

TEST(Pooled, PreprocessedCohortIsStandardized) {
  data::ToyGenConfig cfg;
  cfg.n_per_class = 10;
  const auto cohort = data::generate_toy_cohort(cfg);
  for (int c : {0, 1}) {
    const auto v = pooled_values(cohort, c);
    EXPECT_EQ(v.size(), 10u * 64u * 8u);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    // Each ROI contributes L - 1 to the sum of squares.
    EXPECT_NEAR(ss, 10.0 * 8.0 * 63.0, 1e-8);
  }
  const data::Cohort only0({{"a", 0, Tensor<double>({4, 2}, 1.0)}});
  EXPECT_THROW(pooled_values(only0, 1), ContractError);
}

TEST(Pca, RecoversDominantAxis) {
  const std::vector<double> u{0.5, -0.5, 0.5, -0.5};
  Rng rng(21);
  Tensor<double> pts({400, 4});
  for (std::size_t i = 0; i < 400; ++i) {
    const double big = 10.0 * rng.normal();
    for (std::size_t c = 0; c < 4; ++c) pts(i, c) = big * u[c] + rng.normal() + 3.0;
  }
  const auto p = pca_project({{"real", 0, pts}});
  double cos = 0;
  for (std::size_t c = 0; c < 4; ++c) cos += p.components[0][c] * u[c];
  EXPECT_GT(std::abs(cos), 0.99);
  EXPECT_GT(p.explained[0], 0.9);
  EXPECT_LE(p.explained[0] + p.explained[1], 1.0 + 1e-12);
  for (const auto& comp : p.components) {
    const auto it = std::max_element(comp.begin(), comp.end(),
                                     [](double a, double b) { return std::abs(a) < std::abs(b); });
    EXPECT_GT(*it, 0.0);
  }
  double dot = 0;
  for (std::size_t c = 0; c < 4; ++c) dot += p.components[0][c] * p.components[1][c];
  EXPECT_NEAR(dot, 0.0, 1e-10);
}

TEST(Pca, KeepsGroupOrderAndTags) {
  const auto real = testing::random_tensor({2, 5, 3}, 1);
  const auto synth = testing::random_tensor({7, 3}, 2);
  const auto p = pca_project({{"real", 1, real}, {"synthetic", 0, synth}});
  ASSERT_EQ(p.points.size(), 17u);
  EXPECT_EQ(p.points[9].source, "real");
  EXPECT_EQ(p.points[9].label, 1);
  EXPECT_EQ(p.points[10].source, "synthetic");
  EXPECT_EQ(p.points[10].label, 0);
  double mean = 0;
  for (const auto& pt : p.points) mean += pt.pc1;
  EXPECT_NEAR(mean, 0.0, 1e-10);
  std::ostringstream out;
  write_projection_csv(out, p);
  EXPECT_EQ(out.str().rfind("# explained_variance,", 0), 0u);
  EXPECT_NE(out.str().find("\npc1,pc2,source,class\n"), std::string::npos);
}

TEST(Pca, Errors) {
  EXPECT_THROW(pca_project({{"real", 0, testing::random_tensor({2, 3}, 1)}}), ContractError);
  EXPECT_THROW(pca_project({{"real", 0, testing::random_tensor({5, 1}, 1)}}), ContractError);
  EXPECT_THROW(pca_project({{"real", 0, Tensor<double>({5, 3}, 2.0)}}), ContractError);
  EXPECT_THROW(pca_project({{"real", 0, testing::random_tensor({5, 3}, 1)}, {"synthetic", 0, testing::random_tensor({5, 4}, 2)}}),
               DimensionError);
}

TEST(FidelityCsv, Layout) {
  FidelityReport r;
  r.classes = {{0, 0.5, 0.25, 0.125, 10, 20}};
  std::ostringstream out;
  write_fidelity_csv(out, r);
  EXPECT_EQ(out.str(), "class,kl,wd,ks,n_real,n_synth\n0,0.5,0.25,0.125,10,20\n");
}

}  // namespace
}  // namespace tsdf::fidelity
