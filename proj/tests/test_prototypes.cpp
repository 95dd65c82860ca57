#include <gtest/gtest.h>

#include <algorithm>
#include <limits>

#include "depthpose/prototypes.hpp"

using namespace depthpose;

namespace {

std::vector<PoseVector> gaussian_points(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t blobs) {
  Rng rng(seed);
  std::vector<std::vector<double>> centres(blobs, std::vector<double>(d));
  for (auto &c : centres)
    for (auto &x : c)
      x = 5.0 * standard_normal(rng);
  std::vector<PoseVector> pts;
  for (std::size_t i = 0; i < n; ++i) {
    PoseVector p{centres[i % blobs]};
    for (auto &x : p.values)
      x += standard_normal(rng);
    pts.push_back(p);
  }
  return pts;
}

double sse_of(const std::vector<PoseVector> &pts, const std::vector<std::size_t> &labels, std::size_t k) {
  const std::size_t d = pts.front().size();
  std::vector<std::vector<double>> mean(k, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++count[labels[i]];
    for (std::size_t j = 0; j < d; ++j)
      mean[labels[i]][j] += pts[i][j];
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double m = mean[labels[i]][j] / static_cast<double>(count[labels[i]]);
      sse += (pts[i][j] - m) * (pts[i][j] - m);
    }
  return sse;
}

} // namespace

TEST(KMeans, FourPointsMatchBruteForceOptimum) {
  const std::vector<PoseVector> pts{{{0, 0}}, {{0, 1}}, {{10, 0}}, {{10, 1}}};
  // Exhaustive search over all non-trivial 2-partitions.
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_labels;
  for (unsigned mask = 1; mask < 15; ++mask) {
    std::vector<std::size_t> labels(4);
    for (std::size_t i = 0; i < 4; ++i)
      labels[i] = (mask >> i) & 1u;
    const double s = sse_of(pts, labels, 2);
    if (s < best) {
      best = s;
      best_labels = labels;
    }
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto res = kmeans(pts, {2, seed});
    ASSERT_TRUE(res.converged);
    EXPECT_NEAR(res.sse_history.back(), best, 1e-12);
    auto c = res.centroids;
    std::sort(c.begin(), c.end());
    EXPECT_EQ(c[0], (std::vector<double>{0, 0.5}));
    EXPECT_EQ(c[1], (std::vector<double>{10, 0.5}));
  }
}

TEST(KMeans, OneClusterIsTheMean) {
  const auto pts = gaussian_points(1, 57, 6, 3);
  const auto res = kmeans(pts, {1, 3});
  for (std::size_t j = 0; j < 6; ++j) {
    double m = 0.0;
    for (const auto &p : pts)
      m += p[j];
    EXPECT_NEAR(res.centroids[0][j], m / 57.0, 1e-9);
  }
}

TEST(KMeans, KEqualsNReturnsThePoints) {
  const auto pts = gaussian_points(2, 9, 4, 9);
  const auto res = kmeans(pts, {9, 1});
  auto c = res.centroids;
  std::vector<std::vector<double>> p;
  for (const auto &x : pts)
    p.push_back(x.values);
  std::sort(c.begin(), c.end());
  std::sort(p.begin(), p.end());
  EXPECT_EQ(c, p);
}

TEST(KMeans, ObjectiveNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pts = gaussian_points(seed, 300, 10, 7);
    KMeansOptions opt{12, seed};
    opt.check_monotone = true;
    const auto res = kmeans(pts, opt);
    for (std::size_t i = 1; i < res.sse_history.size(); ++i)
      EXPECT_LE(res.sse_history[i], res.sse_history[i - 1] * (1 + 1e-12));
  }
}

TEST(KMeans, DeterministicAndInsideBoundingBox) {
  const auto pts = gaussian_points(4, 200, 5, 4);
  const auto a = kmeans(pts, {8, 42});
  const auto b = kmeans(pts, {8, 42});
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.assignment, b.assignment);
  for (std::size_t j = 0; j < 5; ++j) {
    double lo = 1e300, hi = -1e300;
    for (const auto &p : pts) {
      lo = std::min(lo, p[j]);
      hi = std::max(hi, p[j]);
    }
    for (const auto &c : a.centroids) {
      EXPECT_GE(c[j], lo);
      EXPECT_LE(c[j], hi);
    }
  }
}

TEST(KMeans, NoEmptyClustersOnDuplicateHeavyData) {
  std::vector<PoseVector> pts(40, PoseVector{{1.0, 1.0}});
  for (int i = 0; i < 6; ++i)
    pts.push_back(PoseVector{{static_cast<double>(i), -3.0}});
  const auto res = kmeans(pts, {6, 9});
  std::vector<std::size_t> count(6, 0);
  for (auto a : res.assignment)
    ++count[a];
  for (auto c : count)
    EXPECT_GT(c, 0u);
}

TEST(KMeans, Errors) {
  const auto pts = gaussian_points(5, 4, 3, 2);
  EXPECT_THROW(kmeans(pts, {5, 0}), ValidationError);
  EXPECT_THROW(kmeans(pts, {0, 0}), ValidationError);
  auto bad = pts;
  bad[1][0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(kmeans(bad, {2, 0}), ValidationError);
  const std::vector<PoseVector> same(5, PoseVector{{1.0, 2.0}});
  EXPECT_THROW(kmeans(same, {2, 0}), ValidationError);
}

TEST(Prototypes, LearnStoresColumns) {
  const auto pts = gaussian_points(6, 100, 6, 3);
  const Normalizer n{std::vector<double>(6, 0.0), std::vector<double>(6, 1.0)};
  const auto set = learn_prototypes(pts, {3, 1}, n, "toy");
  EXPECT_EQ(set.k, 3u);
  EXPECT_EQ(set.rows, 6u);
  const auto km = kmeans(pts, {3, 1});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t r = 0; r < 6; ++r)
      EXPECT_EQ(set.at(r, i), km.centroids[i][r]);
}

TEST(Prototypes, MergeUnionAndDedup) {
  const Normalizer n{std::vector<double>(6, 0.0), std::vector<double>(6, 1.0)};
  const auto a = learn_prototypes(gaussian_points(7, 200, 6, 10), {70 / 10, 1}, n, "itop15");
  const auto b = learn_prototypes(gaussian_points(8, 200, 6, 10), {70 / 10, 2}, n, "itop15");
  std::size_t dropped = 99;
  const auto ab = merge_prototypes(a, b, &dropped);
  EXPECT_EQ(ab.k, a.k + b.k);
  EXPECT_EQ(dropped, 0u);

  const auto aa = merge_prototypes(a, a, &dropped);
  EXPECT_EQ(aa, a);
  EXPECT_EQ(dropped, a.k);

  const PrototypeSet empty{"itop15", n, 6, 0, {}};
  EXPECT_EQ(merge_prototypes(a, empty), a);
  EXPECT_EQ(merge_prototypes(empty, a), a);

  auto other = b;
  other.skeleton = "ubc3v18";
  EXPECT_THROW(merge_prototypes(a, other), ValidationError);
}

TEST(Prototypes, MergeSeventyAndSeventy) {
  const Normalizer n{std::vector<double>(45, 0.0), std::vector<double>(45, 1.0)};
  const auto a = learn_prototypes(gaussian_points(9, 400, 45, 20), {70, 1}, n, "itop15");
  const auto b = learn_prototypes(gaussian_points(10, 400, 45, 20), {70, 2}, n, "itop15");
  EXPECT_EQ(merge_prototypes(a, b).k, 140u);
}
