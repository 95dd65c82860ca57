#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "depthpose/core.hpp"
#include "depthpose/random.hpp"

namespace depthpose {

/// Dictionary of K prototype poses in normalized pose space. Stored
/// column-major: column i (prototype i) is values[i*rows .. (i+1)*rows).
struct PrototypeSet {
  std::string skeleton;
  Normalizer normalizer;
  std::size_t rows = 0;
  std::size_t k = 0;
  std::vector<double> values;

  std::span<const double> column(std::size_t i) const { return {values.data() + i * rows, rows}; }
  double at(std::size_t row, std::size_t col) const { return values[col * rows + row]; }

  void validate() const {
    detail::require(values.size() == rows * k, "prototype matrix size mismatch");
    detail::require(rows == normalizer.size() || normalizer.size() == 0,
                    "prototype rows do not match the normalizer");
  }

  friend bool operator==(const PrototypeSet &, const PrototypeSet &) = default;
};

struct KMeansOptions {
  std::size_t k = 1;
  std::uint64_t seed = 0;
  std::size_t max_iters = 300;
  double tol = 1e-6;
  bool check_monotone = false; ///< throw std::logic_error if the SSE ever increases
};

struct KMeansResult {
  std::size_t dims = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignment;
  std::vector<double> sse_history; ///< within-cluster SSE after each assignment step
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

} // namespace detail

/// Lloyd's algorithm with k-means++ seeding. Ties in assignment go to the
/// lowest centroid index; an emptied cluster is re-seeded at the point
/// farthest from its own centroid (taken from a cluster with >= 2 members).
inline KMeansResult kmeans(std::span<const PoseVector> points, const KMeansOptions &opt) {
  const std::size_t n = points.size();
  detail::require(opt.k >= 1, "kmeans: K must be >= 1");
  detail::require(opt.k <= n, "kmeans: K = " + std::to_string(opt.k) + " exceeds the number of points (" +
                                  std::to_string(n) + ")");
  const std::size_t d = points.front().size();
  for (const auto &p : points) {
    detail::require(p.size() == d, "kmeans: points of different lengths");
    for (double v : p.values)
      detail::require(std::isfinite(v), "kmeans: non-finite input");
  }

  KMeansResult res;
  res.dims = d;
  Rng rng = make_rng(opt.seed, "kmeans");

  // k-means++ seeding.
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(uniform_index(rng, n));
  res.centroids.push_back(points[first].values);
  while (res.centroids.size() < opt.k) {
    const auto &last = res.centroids.back();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist2[i] = std::min(dist2[i], detail::squared_distance(points[i].values, last));
      total += dist2[i];
    }
    detail::require(total > 0.0, "kmeans: fewer than K distinct points");
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (dist2[i] <= 0.0)
        continue;
      acc += dist2[i];
      pick = i;
      if (acc > target)
        break;
    }
    res.centroids.push_back(points[pick].values);
  }

  res.assignment.assign(n, 0);
  std::vector<double> point_d2(n, 0.0);
  auto assign = [&] {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < opt.k; ++c) {
        const double dd = detail::squared_distance(points[i].values, res.centroids[c]);
        if (dd < best) {
          best = dd;
          arg = c;
        }
      }
      res.assignment[i] = arg;
      point_d2[i] = best;
      sse += best;
    }
    if (opt.check_monotone && !res.sse_history.empty() &&
        sse > res.sse_history.back() * (1.0 + 1e-12) + 1e-300)
      throw std::logic_error("kmeans: within-cluster SSE increased");
    res.sse_history.push_back(sse);
  };

  assign();
  for (res.iterations = 0; res.iterations < opt.max_iters;) {
    ++res.iterations;
    std::vector<std::size_t> counts(opt.k, 0);
    for (std::size_t i = 0; i < n; ++i)
      ++counts[res.assignment[i]];
    for (std::size_t c = 0; c < opt.k; ++c) {
      if (counts[c] != 0)
        continue;
      double far = -1.0;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (counts[res.assignment[i]] >= 2 && point_d2[i] > far) {
          far = point_d2[i];
          arg = i;
        }
      --counts[res.assignment[arg]];
      res.assignment[arg] = c;
      point_d2[arg] = 0.0;
      counts[c] = 1;
    }
    // Fixed-order reduction: points are summed in index order.
    std::vector<std::vector<double>> next(opt.k, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      auto &s = next[res.assignment[i]];
      for (std::size_t j = 0; j < d; ++j)
        s[j] += points[i][j];
    }
    double max_shift = 0.0;
    for (std::size_t c = 0; c < opt.k; ++c) {
      for (std::size_t j = 0; j < d; ++j)
        next[c][j] /= static_cast<double>(counts[c]);
      max_shift = std::max(max_shift, std::sqrt(detail::squared_distance(next[c], res.centroids[c])));
    }
    res.centroids = std::move(next);
    assign();
    if (max_shift < opt.tol) {
      res.converged = true;
      break;
    }
  }
  return res;
}

/// Learns prototypes from normalized pose vectors.
inline PrototypeSet learn_prototypes(std::span<const PoseVector> normalized_vectors, const KMeansOptions &opt,
                                     const Normalizer &normalizer, const std::string &skeleton) {
  const KMeansResult km = kmeans(normalized_vectors, opt);
  PrototypeSet set{skeleton, normalizer, km.dims, opt.k, {}};
  set.values.reserve(km.dims * opt.k);
  for (const auto &c : km.centroids)
    set.values.insert(set.values.end(), c.begin(), c.end());
  set.validate();
  return set;
}

/// Column-wise union of two prototype sets sharing a skeleton and normalizer.
/// Columns within 1e-9 (L2) of an earlier column are dropped; the number of
/// dropped columns is reported through `dropped` when given.
inline PrototypeSet merge_prototypes(const PrototypeSet &a, const PrototypeSet &b,
                                     std::size_t *dropped = nullptr) {
  if (a.k == 0)
    return b;
  if (b.k == 0)
    return a;
  if (a.skeleton != b.skeleton)
    throw ValidationError("merge_prototypes: skeleton mismatch ('" + a.skeleton + "' vs '" + b.skeleton + "')");
  detail::require(a.rows == b.rows, "merge_prototypes: row count mismatch");
  detail::require(a.normalizer == b.normalizer, "merge_prototypes: sets use different normalizers");
  PrototypeSet out = a;
  std::size_t n_dropped = 0;
  for (std::size_t i = 0; i < b.k; ++i) {
    const auto col = b.column(i);
    bool dup = false;
    for (std::size_t c = 0; c < out.k && !dup; ++c)
      dup = std::sqrt(detail::squared_distance(col, out.column(c))) <= 1e-9;
    if (dup) {
      ++n_dropped;
      continue;
    }
    out.values.insert(out.values.end(), col.begin(), col.end());
    ++out.k;
  }
  if (dropped)
    *dropped = n_dropped;
  return out;
}

} // namespace depthpose
