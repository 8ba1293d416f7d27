#pragma once
// Lloyd's k-means with k-means++ seeding and best-of-N restarts. Shared by
// persona clustering and the oversampling baseline.

#include <cstdint>
#include <span>
#include <vector>

namespace bikelab {

using Point = std::vector<double>;

struct KMeansResult {
  std::vector<Point> centroids;
  std::vector<int> assignment;
  double inertia = 0.0;
};

struct KMeansOptions {
  int k = 4;
  int restarts = 20;
  int max_iterations = 300;
  std::uint64_t seed = 0;
};

/// Deterministic for a fixed seed. Requires k <= number of distinct points.
KMeansResult kmeans(std::span<const Point> points, const KMeansOptions& options);

double squared_distance(std::span<const double> a, std::span<const double> b);

/// Index of the nearest centroid; ties go to the lowest index.
int nearest_centroid(std::span<const double> x, std::span<const Point> centroids);

std::size_t count_distinct(std::span<const Point> points);

}  // namespace bikelab
