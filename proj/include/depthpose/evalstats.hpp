#pragma once

// Pose-estimation metrics (average joint error, precision at threshold, AUC)
// and the Mann-Whitney U test used to compare hyperparameter settings.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthpose/core.hpp"

namespace depthpose {

/// Per-joint Euclidean distance in centimeters.
inline std::vector<double> joint_errors(const Pose &pred, const Pose &gt) {
  detail::require(pred.joint_count() == gt.joint_count(), "joint_errors: joint count mismatch");
  std::vector<double> e(pred.joint_count());
  for (std::size_t j = 0; j < e.size(); ++j)
    e[j] = 100.0 * norm(pred.joints[j] - gt.joints[j]);
  return e;
}

/// Fraction of distances <= t_cm (a distance equal to the threshold counts
/// as correct).
inline double map_at_threshold(std::span<const double> distances_cm, double t_cm) {
  detail::require(t_cm >= 0.0, "map_at_threshold: threshold must be >= 0");
  if (distances_cm.empty())
    return 0.0;
  const auto hits = std::count_if(distances_cm.begin(), distances_cm.end(), [t_cm](double d) { return d <= t_cm; });
  return static_cast<double>(hits) / static_cast<double>(distances_cm.size());
}

struct PrecisionCurve {
  std::vector<double> thresholds_cm;
  std::vector<double> precision;
  double auc = 0.0; ///< trapezoidal area divided by t_max, in [0, 1]
  double t_max_cm = 20.0;
  double step_cm = 0.5;
};

/// Precision sampled at 0, step, 2*step, ... up to t_max (t_max is always the
/// last sample), with its normalized trapezoidal AUC.
inline PrecisionCurve map_curve_and_auc(std::span<const double> distances_cm, double t_max_cm = 20.0,
                                        double step_cm = 0.5) {
  detail::require(t_max_cm > 0.0 && step_cm > 0.0, "map_curve_and_auc: t_max and step must be > 0");
  PrecisionCurve c;
  c.t_max_cm = t_max_cm;
  c.step_cm = step_cm;
  std::vector<double> sorted(distances_cm.begin(), distances_cm.end());
  std::sort(sorted.begin(), sorted.end());
  auto precision_at = [&](double t) {
    if (sorted.empty())
      return 0.0;
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
  };
  for (std::size_t i = 0;; ++i) {
    const double t = static_cast<double>(i) * step_cm;
    if (t >= t_max_cm - 1e-9 * t_max_cm)
      break;
    c.thresholds_cm.push_back(t);
  }
  c.thresholds_cm.push_back(t_max_cm);
  for (double t : c.thresholds_cm)
    c.precision.push_back(precision_at(t));
  double area = 0.0;
  for (std::size_t i = 1; i < c.thresholds_cm.size(); ++i)
    area += 0.5 * (c.precision[i] + c.precision[i - 1]) * (c.thresholds_cm[i] - c.thresholds_cm[i - 1]);
  c.auc = area / t_max_cm;
  return c;
}

// ---------------------------------------------------------------------------
// Reports.

enum class JointGroup { Upper, Torso, Lower };

/// Upper body: head, neck, shoulders, elbows and hands (wrists); torso:
/// torso/spine joints; lower body: everything else.
inline JointGroup joint_group(std::string name) {
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  for (const char *key : {"head", "neck", "shoulder", "elbow", "hand", "wrist"})
    if (name.find(key) != std::string::npos)
      return JointGroup::Upper;
  for (const char *key : {"torso", "spine"})
    if (name.find(key) != std::string::npos)
      return JointGroup::Torso;
  return JointGroup::Lower;
}

struct GroupSummary {
  double average_error_cm = 0.0;
  double precision_at_10cm = 0.0;
  double auc = 0.0;
};

struct EvalReport {
  std::vector<std::string> joints;
  std::vector<double> per_joint_mean_cm;
  std::vector<double> per_joint_std_cm;
  double average_error_cm = 0.0;
  PrecisionCurve curve;
  double precision_at_10cm = 0.0;
  std::size_t samples = 0;
  std::map<std::string, GroupSummary> groups; ///< "full", "upper", "lower"
  std::map<std::string, double> extras;       ///< free-form comparison numbers
};

inline EvalReport evaluate(std::span<const Pose> preds, std::span<const Pose> gts, double t_max_cm = 20.0,
                           double step_cm = 0.5) {
  detail::require(preds.size() == gts.size(), "evaluate: prediction and ground-truth counts differ");
  detail::require(!preds.empty(), "evaluate: no samples");
  const auto &sk = *gts.front().skeleton;
  const std::size_t nj = sk.joint_count();
  EvalReport r;
  r.joints = sk.joints;
  r.samples = preds.size();
  std::vector<std::vector<double>> per_joint(nj);
  std::vector<double> all, upper, lower;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto e = joint_errors(preds[i], gts[i]);
    for (std::size_t j = 0; j < nj; ++j) {
      per_joint[j].push_back(e[j]);
      all.push_back(e[j]);
      const auto g = joint_group(sk.joints[j]);
      if (g == JointGroup::Upper)
        upper.push_back(e[j]);
      else if (g == JointGroup::Lower)
        lower.push_back(e[j]);
    }
  }
  for (const auto &v : per_joint) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v)
      var += (x - mean) * (x - mean);
    r.per_joint_mean_cm.push_back(mean);
    r.per_joint_std_cm.push_back(std::sqrt(var / static_cast<double>(v.size())));
  }
  r.average_error_cm = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
  r.curve = map_curve_and_auc(all, t_max_cm, step_cm);
  r.precision_at_10cm = map_at_threshold(all, 10.0);
  auto summarize = [&](const std::vector<double> &v) {
    GroupSummary s;
    if (v.empty())
      return s;
    s.average_error_cm = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    s.precision_at_10cm = map_at_threshold(v, 10.0);
    s.auc = map_curve_and_auc(v, t_max_cm, step_cm).auc;
    return s;
  };
  r.groups["full"] = summarize(all);
  if (!upper.empty())
    r.groups["upper"] = summarize(upper);
  if (!lower.empty())
    r.groups["lower"] = summarize(lower);
  return r;
}

inline nlohmann::json to_json(const EvalReport &r) {
  nlohmann::json j;
  j["samples"] = r.samples;
  j["average_error_cm"] = r.average_error_cm;
  j["precision_at_10cm"] = r.precision_at_10cm;
  j["auc"] = r.curve.auc;
  j["auc_range_cm"] = {0.0, r.curve.t_max_cm};
  j["auc_step_cm"] = r.curve.step_cm;
  j["curve"] = {{"threshold_cm", r.curve.thresholds_cm}, {"precision", r.curve.precision}};
  nlohmann::json joints = nlohmann::json::array();
  for (std::size_t i = 0; i < r.joints.size(); ++i)
    joints.push_back({{"name", r.joints[i]}, {"mean_cm", r.per_joint_mean_cm[i]}, {"std_cm", r.per_joint_std_cm[i]}});
  j["joints"] = joints;
  for (const auto &[name, g] : r.groups)
    j["groups"][name] = {{"average_error_cm", g.average_error_cm},
                         {"precision_at_10cm", g.precision_at_10cm},
                         {"auc", g.auc}};
  for (const auto &[k, v] : r.extras)
    j[k] = v;
  return j;
}

inline std::string curve_to_csv(const PrecisionCurve &c) {
  std::ostringstream os;
  os.precision(10);
  os << "threshold_cm,precision\n";
  for (std::size_t i = 0; i < c.thresholds_cm.size(); ++i)
    os << c.thresholds_cm[i] << ',' << c.precision[i] << '\n';
  return os.str();
}

/// Minimal SVG line plot of a precision curve.
inline std::string curve_to_svg(const PrecisionCurve &c, const std::string &title = "precision vs threshold") {
  const double W = 480, H = 320, L = 50, R = 20, T = 30, B = 40;
  auto px = [&](double t) { return L + (W - L - R) * t / c.t_max_cm; };
  auto py = [&](double p) { return H - B - (H - T - B) * p; };
  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title
     << " (AUC " << c.auc << ")</text>\n"
     << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << px(c.t_max_cm) << "\" y2=\"" << py(0)
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"12\">threshold (cm)</text>\n"
     << "<text x=\"12\" y=\"" << H / 2 << "\" font-size=\"12\" transform=\"rotate(-90 12 " << H / 2
     << ")\" text-anchor=\"middle\">precision</text>\n"
     << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < c.thresholds_cm.size(); ++i)
    os << px(c.thresholds_cm[i]) << ',' << py(c.precision[i]) << ' ';
  os << "\"/>\n</svg>\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Mann-Whitney U.

enum class UTestMethod { Exact, NormalApprox };

struct UTestResult {
  double u = 0.0; ///< U of the first sample
  double p = 1.0; ///< two-sided
  UTestMethod method = UTestMethod::Exact;
  std::size_t n1 = 0, n2 = 0;
};

namespace detail {

/// counts[u] = number of arrangements of m + n distinct values in which the
/// first group's U statistic equals u.
inline std::vector<double> u_null_counts(std::size_t m, std::size_t n) {
  // table[i][j] holds the distribution for group sizes (i, j).
  std::vector<std::vector<std::vector<double>>> table(m + 1, std::vector<std::vector<double>>(n + 1));
  for (std::size_t i = 0; i <= m; ++i)
    for (std::size_t j = 0; j <= n; ++j) {
      auto &cur = table[i][j];
      cur.assign(i * j + 1, 0.0);
      if (i == 0 || j == 0) {
        cur[0] = 1.0;
        continue;
      }
      // Largest value belongs to group 1 (beats all j of group 2) or group 2.
      const auto &a = table[i - 1][j];
      for (std::size_t u = 0; u < a.size(); ++u)
        cur[u + j] += a[u];
      const auto &b = table[i][j - 1];
      for (std::size_t u = 0; u < b.size(); ++u)
        cur[u] += b[u];
    }
  return table[m][n];
}

} // namespace detail

/// Two-sided Mann-Whitney U test with mid-ranks. Uses the exact null
/// distribution when n1 + n2 <= 20 and there are no ties; otherwise the
/// normal approximation with tie and continuity corrections.
inline UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  detail::require(!a.empty() && !b.empty(), "mann_whitney_u: both groups must be non-empty");
  const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
  std::vector<std::pair<double, int>> all;
  all.reserve(n);
  for (double v : a)
    all.emplace_back(v, 0);
  for (double v : b)
    all.emplace_back(v, 1);
  std::sort(all.begin(), all.end(), [](const auto &x, const auto &y) { return x.first < y.first; });
  double rank_sum_a = 0.0, tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && all[j + 1].first == all[i].first)
      ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) {
      ties = true;
      tie_term += t * t * t - t;
    }
    for (std::size_t k = i; k <= j; ++k)
      if (all[k].second == 0)
        rank_sum_a += mid;
    i = j + 1;
  }
  UTestResult res;
  res.n1 = n1;
  res.n2 = n2;
  res.u = rank_sum_a - 0.5 * static_cast<double>(n1 * (n1 + 1));
  const double prod = static_cast<double>(n1 * n2);

  if (!ties && n <= 20) {
    res.method = UTestMethod::Exact;
    const auto counts = detail::u_null_counts(n1, n2);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const auto u = static_cast<std::size_t>(std::llround(res.u));
    double lower = 0.0, upper = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (k <= u)
        lower += counts[k];
      if (k >= u)
        upper += counts[k];
    }
    res.p = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    return res;
  }

  res.method = UTestMethod::NormalApprox;
  const double mu = 0.5 * prod;
  const double nn = static_cast<double>(n);
  const double var = prod / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
  if (var <= 0.0) {
    res.p = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::abs(res.u - mu) - 0.5) / std::sqrt(var);
  res.p = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

struct HyperparameterSelection {
  std::vector<std::string> configs;
  std::vector<double> mean_scores;
  std::vector<std::vector<double>> p_values; ///< symmetric; NaN on the diagonal
  std::size_t chosen = 0;
  std::vector<std::string> tied; ///< not significantly different from the chosen one (p >= alpha)
};

/// Picks the configuration with the lowest mean score (lower is better) and
/// lists the ones whose scores cannot be told apart from it at `alpha`.
inline HyperparameterSelection select_hyperparameter(const std::vector<std::pair<std::string, std::vector<double>>> &runs,
                                                     double alpha = 0.05) {
  detail::require(runs.size() >= 2, "select_hyperparameter: need at least 2 configurations");
  HyperparameterSelection sel;
  for (const auto &[name, scores] : runs) {
    detail::require(scores.size() >= 2, "select_hyperparameter: '" + name + "' needs at least 2 scores");
    sel.configs.push_back(name);
    sel.mean_scores.push_back(std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size()));
  }
  const std::size_t n = runs.size();
  sel.p_values.assign(n, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      sel.p_values[i][j] = sel.p_values[j][i] = mann_whitney_u(runs[i].second, runs[j].second).p;
  sel.chosen = static_cast<std::size_t>(std::min_element(sel.mean_scores.begin(), sel.mean_scores.end()) -
                                        sel.mean_scores.begin());
  for (std::size_t j = 0; j < n; ++j)
    if (j != sel.chosen && sel.p_values[sel.chosen][j] >= alpha)
      sel.tied.push_back(sel.configs[j]);
  return sel;
}

/// p-value matrix as CSV, 4 decimals, "-" on the diagonal.
inline std::string pvalues_to_csv(const HyperparameterSelection &s) {
  std::ostringstream os;
  os << "config";
  for (const auto &c : s.configs)
    os << ',' << c;
  os << ",mean_score\n";
  char buf[32];
  for (std::size_t i = 0; i < s.configs.size(); ++i) {
    os << s.configs[i];
    for (std::size_t j = 0; j < s.configs.size(); ++j) {
      if (i == j) {
        os << ",-";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.4f", s.p_values[i][j]);
      os << ',' << buf;
    }
    std::snprintf(buf, sizeof buf, "%.6g", s.mean_scores[i]);
    os << ',' << buf << '\n';
  }
  return os.str();
}

} // namespace depthpose
