#pragma once
// Persona indicators from comfort profiles, four-way clustering into the
// cyclist typology, and within-participant rating variance.

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bikelab/core.hpp"

namespace bikelab::persona {

struct Indicators {
  double mean_low = 0.0;
  double mean_medium = 0.0;
  double mean_high = 0.0;
  double mean_overall = 0.0;
  double gradient = 0.0;  // mean_high - mean_low
};

/// Protection groupings. Sidewalks belong to none of them.
const std::vector<InfrastructureType>& low_protection_types();
const std::vector<InfrastructureType>& medium_protection_types();
const std::vector<InfrastructureType>& high_protection_types();

/// Throws Error(kInvalidProfile) on a missing or out-of-range rating.
Indicators compute_indicators(const ComfortProfile& profile);

/// Clustering features: [mean_low, mean_medium, mean_high, gradient].
using Features = std::array<double, 4>;
Features to_features(const Indicators& ind);

/// The label rule's inputs for one cluster.
struct CentroidSummary {
  double mean_overall = 0.0;
  double gradient = 0.0;
};

/// NWNH = lowest mean_overall; of the rest IBC = largest gradient, SF =
/// smallest gradient, EC = the remaining cluster. Ties go to the lower index.
std::array<Persona, 4> assign_labels(std::span<const CentroidSummary, 4> clusters);

struct ClusterModel {
  std::array<Features, 4> centroids{};  // standardized space
  Features feature_mean{};
  Features feature_stddev{};
  std::array<CentroidSummary, 4> summaries{};
  std::array<Persona, 4> label_map{};
  std::uint64_t seed = 0;
  int restarts = 20;
};

void to_json(json& j, const ClusterModel& m);
void from_json(const json& j, ClusterModel& m);

inline constexpr int kDefaultRestarts = 20;

/// k-means (k=4) on standardized features. Throws Error(kDegenerateInput)
/// when fewer than 4 distinct feature vectors exist.
ClusterModel fit_personas(std::span<const ComfortProfile> profiles, std::uint64_t seed,
                          int restarts = kDefaultRestarts);

/// Lower-level entry on raw feature rows; overall means are carried
/// separately because they are not a clustering feature.
ClusterModel fit_features(std::span<const Features> features,
                          std::span<const double> mean_overall, std::uint64_t seed,
                          int restarts = kDefaultRestarts);

/// Nearest centroid in standardized space; ties go to the lowest index.
int nearest_cluster(const Features& raw, const ClusterModel& model);
Persona classify(const ComfortProfile& profile, const ClusterModel& model);

struct ParticipantVariance {
  double mean_rating = 0.0;
  double variance = 0.0;
  std::size_t n = 0;
};

struct VarianceReport {
  RatingDimension dimension = RatingDimension::kWillingness;
  std::map<std::string, ParticipantVariance> per_participant;
  double median_variance = 0.0;
  double min_variance = 0.0;
  double max_variance = 0.0;
  std::optional<double> corr_mean_variance;  // undefined with < 2 points or zero spread
  std::vector<std::string> warnings;
};

void to_json(json& j, const VarianceReport& r);

/// Sample (n-1) variance per participant; participants with one assessment
/// are excluded and named in warnings.
VarianceReport variance_analysis(std::span<const SegmentAssessment> assessments,
                                 RatingDimension dimension = RatingDimension::kWillingness);

}  // namespace bikelab::persona
