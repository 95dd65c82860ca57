#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <memory>
#include <set>

#include "depthpose/evalstats.hpp"
#include "depthpose/random.hpp"

using namespace depthpose;

namespace {

SkeletonPtr ubc() { return std::make_shared<const Skeleton>(ubc3v_skeleton()); }

Pose random_pose(Rng &rng, const SkeletonPtr &sk) {
  std::vector<Vec3> j(sk->joint_count());
  for (auto &p : j)
    p = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, 1, 4)};
  return Pose(sk, std::move(j));
}

// Brute-force oracles written independently of the library code.
double oracle_map(const std::vector<double> &d, double t) {
  double hits = 0;
  for (double x : d)
    if (x <= t)
      hits += 1;
  return hits / static_cast<double>(d.size());
}

double oracle_auc(const std::vector<double> &d, double t_max, double step) {
  std::vector<double> ts;
  for (int i = 0;; ++i) {
    const double t = i * step;
    if (t >= t_max - 1e-9 * t_max)
      break;
    ts.push_back(t);
  }
  ts.push_back(t_max);
  double area = 0;
  for (std::size_t i = 1; i < ts.size(); ++i)
    area += 0.5 * (oracle_map(d, ts[i - 1]) + oracle_map(d, ts[i])) * (ts[i] - ts[i - 1]);
  return area / t_max;
}

// Every 5-subset of ranks 1..10 as group a.
std::vector<std::vector<double>> five_of_ten() {
  std::vector<std::vector<double>> out;
  for (unsigned mask = 0; mask < 1024; ++mask) {
    if (__builtin_popcount(mask) != 5)
      continue;
    std::vector<double> a;
    for (int r = 0; r < 10; ++r)
      if (mask & (1u << r))
        a.push_back(r + 1);
    out.push_back(a);
  }
  return out;
}

std::vector<double> complement(const std::vector<double> &a) {
  std::vector<double> b;
  for (int r = 1; r <= 10; ++r)
    if (std::find(a.begin(), a.end(), r) == a.end())
      b.push_back(r);
  return b;
}

double pairwise_u(const std::vector<double> &a, const std::vector<double> &b) {
  double u = 0;
  for (double x : a)
    for (double y : b)
      u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  return u;
}

} // namespace

TEST(JointErrors, ThreeFourFive) {
  const auto sk = ubc();
  Rng rng(1);
  const Pose gt = random_pose(rng, sk);
  EXPECT_EQ(joint_errors(gt, gt), std::vector<double>(sk->joint_count(), 0.0));
  Pose pred = gt;
  pred.joints[4] = pred.joints[4] + Vec3{0.03, 0.04, 0.0};
  const auto e = joint_errors(pred, gt);
  EXPECT_NEAR(e[4], 5.0, 1e-9);
  for (std::size_t j = 0; j < e.size(); ++j)
    if (j != 4)
      EXPECT_EQ(e[j], 0.0);
}

TEST(JointErrors, MatchesScalarOracle) {
  const auto sk = ubc();
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Pose a = random_pose(rng, sk), b = random_pose(rng, sk);
    const auto e = joint_errors(a, b);
    for (std::size_t j = 0; j < e.size(); ++j) {
      const double dx = a.joints[j].x - b.joints[j].x, dy = a.joints[j].y - b.joints[j].y,
                   dz = a.joints[j].z - b.joints[j].z;
      EXPECT_NEAR(e[j], 100.0 * std::sqrt(dx * dx + dy * dy + dz * dz), 1e-9);
    }
  }
}

TEST(MeanAveragePrecision, Counting) {
  const std::vector<double> d{2, 12, 5};
  EXPECT_DOUBLE_EQ(map_at_threshold(d, 10), 2.0 / 3.0);
  EXPECT_EQ(map_at_threshold(d, 0), 0.0);
  EXPECT_EQ(map_at_threshold(d, std::numeric_limits<double>::infinity()), 1.0);
  EXPECT_EQ(map_at_threshold(d, 5), 2.0 / 3.0); // inclusive
  EXPECT_THROW(map_at_threshold(d, -1), ValidationError);
}

TEST(Auc, Extremes) {
  const std::vector<double> zeros(30, 0.0);
  const auto c = map_curve_and_auc(zeros);
  for (double p : c.precision)
    EXPECT_EQ(p, 1.0);
  EXPECT_DOUBLE_EQ(c.auc, 1.0);
  EXPECT_EQ(c.thresholds_cm.front(), 0.0);
  EXPECT_EQ(c.thresholds_cm.back(), 20.0);
  EXPECT_EQ(c.thresholds_cm.size(), 41u);
  const std::vector<double> far(30, 25.0);
  EXPECT_EQ(map_curve_and_auc(far).auc, 0.0);
}

TEST(Auc, SingleStepClosedForm) {
  // One distance d = t_max / 2 on the grid: precision is 0 below d and 1 from
  // d on. The trapezoid over [d - step, d] contributes step / 2 on top of the
  // exact step integral (t_max - d) / t_max.
  const double t_max = 20, step = 0.5;
  const std::vector<double> d{10.0};
  const auto c = map_curve_and_auc(d, t_max, step);
  EXPECT_NEAR(c.auc, (t_max - 10.0) / t_max + step / (2.0 * t_max), 1e-12);
  EXPECT_NEAR(c.auc, 0.5125, 1e-12);
}

TEST(Auc, MatchesBruteForceOnRandomSets) {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    const auto n = 1 + uniform_index(rng, 60);
    std::vector<double> d(n);
    for (auto &x : d)
      x = uniform01(rng) < 0.1 ? std::round(uniform(rng, 0, 24) * 2) / 2 : uniform(rng, 0, 30);
    const double t_max = t % 3 == 0 ? 20.0 : uniform(rng, 5, 30);
    const double step = t % 3 == 0 ? 0.5 : uniform(rng, 0.1, 2.0);
    const auto c = map_curve_and_auc(d, t_max, step);
    EXPECT_NEAR(c.auc, oracle_auc(d, t_max, step), 1e-9);
    for (std::size_t i = 0; i < c.thresholds_cm.size(); ++i) {
      EXPECT_NEAR(c.precision[i], oracle_map(d, c.thresholds_cm[i]), 1e-9);
      if (i > 0)
        EXPECT_GE(c.precision[i], c.precision[i - 1]);
    }
    double area = 0;
    for (std::size_t i = 1; i < c.thresholds_cm.size(); ++i)
      area += 0.5 * (c.precision[i] + c.precision[i - 1]) * (c.thresholds_cm[i] - c.thresholds_cm[i - 1]);
    EXPECT_NEAR(c.auc, area / t_max, 1e-12);
  }
}

TEST(JointGroups, Classification) {
  EXPECT_EQ(joint_group("head"), JointGroup::Upper);
  EXPECT_EQ(joint_group("L-Hand"), JointGroup::Upper);
  EXPECT_EQ(joint_group("r-elbow"), JointGroup::Upper);
  EXPECT_EQ(joint_group("Torso"), JointGroup::Torso);
  EXPECT_EQ(joint_group("spine-mid"), JointGroup::Torso);
  EXPECT_EQ(joint_group("R-Knee"), JointGroup::Lower);
  EXPECT_EQ(joint_group("l-foot"), JointGroup::Lower);
}

TEST(Evaluate, ReportConsistency) {
  const auto sk = ubc();
  Rng rng(4);
  std::vector<Pose> gts, preds;
  for (int i = 0; i < 20; ++i) {
    gts.push_back(random_pose(rng, sk));
    Pose p = gts.back();
    for (auto &j : p.joints)
      j = j + Vec3{0.1 * standard_normal(rng), 0.1 * standard_normal(rng), 0.1 * standard_normal(rng)};
    preds.push_back(p);
  }
  const auto r = evaluate(preds, gts);
  EXPECT_EQ(r.samples, 20u);
  std::vector<double> all;
  for (std::size_t i = 0; i < gts.size(); ++i)
    for (double e : joint_errors(preds[i], gts[i]))
      all.push_back(e);
  double mean = 0;
  for (double e : all)
    mean += e;
  mean /= static_cast<double>(all.size());
  EXPECT_NEAR(r.average_error_cm, mean, 1e-9);
  EXPECT_NEAR(r.precision_at_10cm, oracle_map(all, 10.0), 1e-12);
  double per_joint_avg = 0;
  for (double m : r.per_joint_mean_cm)
    per_joint_avg += m;
  EXPECT_NEAR(per_joint_avg / static_cast<double>(r.per_joint_mean_cm.size()), mean, 1e-9);
  ASSERT_TRUE(r.groups.count("full") && r.groups.count("upper") && r.groups.count("lower"));
  EXPECT_NEAR(r.groups.at("full").average_error_cm, mean, 1e-9);
  const auto j = to_json(r);
  EXPECT_EQ(j["samples"], 20);
  EXPECT_EQ(j["auc_range_cm"][1], 20.0);
  EXPECT_EQ(curve_to_csv(r.curve).rfind("threshold_cm,precision\n", 0), 0u);
  EXPECT_NE(curve_to_svg(r.curve).find("<svg"), std::string::npos);
  EXPECT_THROW(evaluate(std::span<const Pose>(preds).first(3), gts), ValidationError);
}

TEST(MannWhitney, SeparatedGroups) {
  const std::vector<double> a{1, 2, 3, 4, 5}, b{6, 7, 8, 9, 10};
  const auto r = mann_whitney_u(a, b);
  EXPECT_EQ(r.method, UTestMethod::Exact);
  EXPECT_EQ(r.u, 0.0);
  EXPECT_NEAR(r.p, 2.0 / 252.0, 1e-15);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.4f", r.p);
  EXPECT_STREQ(buf, "0.0079");
}

TEST(MannWhitney, IdenticalGroupsGiveOne) {
  const std::vector<double> a{0.31, 0.28, 0.35, 0.30, 0.33};
  const std::vector<double> b{0.35, 0.30, 0.31, 0.33, 0.28};
  const auto r = mann_whitney_u(a, b);
  EXPECT_EQ(r.u, 12.5);
  EXPECT_EQ(r.p, 1.0);
  EXPECT_EQ(r.method, UTestMethod::NormalApprox); // ties
}

TEST(MannWhitney, ExhaustiveFiveByFive) {
  const std::set<std::string> expected{"0.0079", "0.0159", "0.0317", "0.0556", "0.0952", "0.1508", "0.2222",
                                       "0.3095", "0.4206", "0.5476", "0.6905", "0.8413", "1.0000"};
  const auto arrangements = five_of_ten();
  ASSERT_EQ(arrangements.size(), 252u);
  // Null distribution of U by enumeration.
  std::vector<double> us;
  for (const auto &a : arrangements)
    us.push_back(pairwise_u(a, complement(a)));
  std::set<std::string> seen;
  for (std::size_t i = 0; i < arrangements.size(); ++i) {
    const auto b = complement(arrangements[i]);
    const auto r = mann_whitney_u(arrangements[i], b);
    ASSERT_EQ(r.method, UTestMethod::Exact);
    EXPECT_EQ(r.u, us[i]);
    double le = 0, ge = 0;
    for (double u : us) {
      le += u <= us[i];
      ge += u >= us[i];
    }
    EXPECT_NEAR(r.p, std::min(1.0, 2.0 * std::min(le, ge) / 252.0), 1e-12);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.4f", r.p);
    seen.insert(buf);
  }
  EXPECT_EQ(seen, expected);
}

TEST(MannWhitney, SymmetryAndUSum) {
  Rng rng(6);
  for (int t = 0; t < 200; ++t) {
    const auto n1 = 1 + uniform_index(rng, 12), n2 = 1 + uniform_index(rng, 12);
    std::vector<double> a(n1), b(n2);
    for (auto &x : a)
      x = t % 2 ? std::round(uniform(rng, 0, 5)) : uniform(rng, 0, 1);
    for (auto &x : b)
      x = t % 2 ? std::round(uniform(rng, 0, 5)) : uniform(rng, 0.2, 1.2);
    const auto ab = mann_whitney_u(a, b), ba = mann_whitney_u(b, a);
    EXPECT_NEAR(ab.u + ba.u, static_cast<double>(n1 * n2), 1e-9);
    EXPECT_NEAR(ab.u, pairwise_u(a, b), 1e-9);
    EXPECT_NEAR(ab.p, ba.p, 1e-12);
    EXPECT_GT(ab.p, 0.0);
    EXPECT_LE(ab.p, 1.0);
  }
  EXPECT_THROW(mann_whitney_u(std::vector<double>{}, std::vector<double>{1.0}), ValidationError);
}

TEST(MannWhitney, NormalApproximationAgreesWithExact) {
  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(10), b(10);
    const double shift = uniform(rng, 0, 1.5);
    for (auto &x : a)
      x = standard_normal(rng);
    for (auto &x : b)
      x = standard_normal(rng) + shift;
    const auto exact = mann_whitney_u(a, b);
    ASSERT_EQ(exact.method, UTestMethod::Exact);
    // The same statistic through the normal path (n1 + n2 > 20 forces it
    // only by size, so compute it directly here).
    const double mu = 50.0, sd = std::sqrt(100.0 * 21.0 / 12.0);
    const double z = std::max(0.0, std::abs(exact.u - mu) - 0.5) / sd;
    EXPECT_NEAR(std::erfc(z / std::sqrt(2.0)), exact.p, 0.02);
  }
}

TEST(SelectHyperparameter, DominatingConfig) {
  const std::vector<std::pair<std::string, std::vector<double>>> runs{
      {"K=20", {0.10, 0.11, 0.12, 0.13, 0.14}},
      {"K=60", {0.20, 0.21, 0.22, 0.23, 0.24}},
      {"K=100", {0.30, 0.31, 0.32, 0.33, 0.34}}};
  const auto s = select_hyperparameter(runs);
  EXPECT_EQ(s.configs[s.chosen], "K=20");
  EXPECT_TRUE(s.tied.empty());
  for (std::size_t j = 1; j < 3; ++j)
    EXPECT_NEAR(s.p_values[0][j], 2.0 / 252.0, 1e-15);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(std::isnan(s.p_values[i][i]));
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j)
        EXPECT_EQ(s.p_values[i][j], s.p_values[j][i]);
  }
  const auto csv = pvalues_to_csv(s);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "config,K=20,K=60,K=100,mean_score");
  EXPECT_NE(csv.find("K=20,-,0.0079,0.0079,0.12"), std::string::npos);
}

TEST(SelectHyperparameter, IdenticalScoresAreTied) {
  const std::vector<double> s{0.5, 0.4, 0.45, 0.47, 0.41};
  const auto sel = select_hyperparameter({{"a", s}, {"b", s}});
  EXPECT_EQ(sel.p_values[0][1], 1.0);
  ASSERT_EQ(sel.tied.size(), 1u);
  EXPECT_THROW(select_hyperparameter({{"a", s}}), ValidationError);
  EXPECT_THROW(select_hyperparameter({{"a", s}, {"b", {1.0}}}), ValidationError);
}
