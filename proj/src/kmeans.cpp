#include "bikelab/kmeans.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "bikelab/error.hpp"
#include "bikelab/rng.hpp"

namespace bikelab {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

int nearest_centroid(std::span<const double> x, std::span<const Point> centroids) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    double d = squared_distance(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::size_t count_distinct(std::span<const Point> points) {
  std::set<Point> s(points.begin(), points.end());
  return s.size();
}

namespace {

std::vector<Point> seed_plus_plus(std::span<const Point> points, int k, Rng& rng) {
  const std::size_t n = points.size();
  std::vector<Point> centroids;
  centroids.push_back(points[uniform_index(rng, n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = squared_distance(points[i], centroids[nearest_centroid(points[i], centroids)]);
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = uniform01(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > r && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
      // Floating-point residue can land on an already-chosen point.
      if (d2[pick] == 0.0) {
        pick = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
      }
    } else {
      pick = uniform_index(rng, n);
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

KMeansResult lloyd(std::span<const Point> points, std::vector<Point> centroids, int max_iter) {
  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  const std::size_t k = centroids.size();
  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int c = nearest_centroid(points[i], centroids);
      if (c != assign[i]) {
        assign[i] = c;
        changed = true;
      }
    }
    std::vector<Point> sums(k, Point(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = sums[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) s[d] += points[i][d];
      ++counts[assign[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster at the point farthest from its centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = squared_distance(points[i], centroids[assign[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids[c] = points[far];
        changed = true;
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) {
        centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
    if (!changed) break;
  }
  KMeansResult r;
  r.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.assignment[i] = nearest_centroid(points[i], centroids);
    r.inertia += squared_distance(points[i], centroids[r.assignment[i]]);
  }
  r.centroids = std::move(centroids);
  return r;
}

}  // namespace

KMeansResult kmeans(std::span<const Point> points, const KMeansOptions& options) {
  if (options.k < 1) throw Error(ErrorCode::kConfig, "k-means needs k >= 1");
  if (points.empty()) throw Error(ErrorCode::kDegenerateInput, "k-means on empty input");
  if (count_distinct(points) < static_cast<std::size_t>(options.k)) {
    throw Error(ErrorCode::kDegenerateInput,
                "fewer than " + std::to_string(options.k) + " distinct points");
  }
  Rng rng = make_rng(options.seed, "kmeans");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, options.restarts); ++r) {
    auto result = lloyd(points, seed_plus_plus(points, options.k, rng), options.max_iterations);
    if (result.inertia < best.inertia) best = std::move(result);
  }
  return best;
}

}  // namespace bikelab
