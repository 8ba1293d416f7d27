#pragma once

#include <optional>
#include <span>

namespace bikelab::stats {

double mean(std::span<const double> xs);
/// Sample variance with the n-1 denominator; 0 for fewer than two values.
double sample_variance(std::span<const double> xs);
double median(std::span<const double> xs);
/// Pearson correlation; nullopt when either side has zero variance or n < 2.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

}  // namespace bikelab::stats
