#include "bikelab/persona.hpp"

#include <algorithm>
#include <cmath>

#include "bikelab/kmeans.hpp"
#include "bikelab/stats.hpp"

namespace bikelab::persona {

using IT = InfrastructureType;

const std::vector<InfrastructureType>& low_protection_types() {
  static const std::vector<IT> kTypes = {IT::kNoBikeLanes, IT::kSharedLanesSharrows};
  return kTypes;
}

const std::vector<InfrastructureType>& medium_protection_types() {
  static const std::vector<IT> kTypes = {IT::kStripedBikeLanes, IT::kRoadwayShoulders,
                                         IT::kOffStreetPaths};
  return kTypes;
}

const std::vector<InfrastructureType>& high_protection_types() {
  static const std::vector<IT> kTypes = {IT::kBufferedBikeLanes, IT::kProtectedBikeLanes};
  return kTypes;
}

Indicators compute_indicators(const ComfortProfile& profile) {
  auto report = validate(profile);
  if (!report.ok()) {
    throw Error(ErrorCode::kInvalidProfile,
                "invalid comfort profile '" + profile.participant_id + "': " + report.summary());
  }
  auto mean_over = [&](const std::vector<IT>& types) {
    double s = 0.0;
    for (auto t : types) s += profile.ratings.at(t);
    return s / static_cast<double>(types.size());
  };
  Indicators ind;
  ind.mean_low = mean_over(low_protection_types());
  ind.mean_medium = mean_over(medium_protection_types());
  ind.mean_high = mean_over(high_protection_types());
  double total = 0.0;
  for (const auto& [t, v] : profile.ratings) total += v;
  ind.mean_overall = total / kInfrastructureTypeCount;
  ind.gradient = ind.mean_high - ind.mean_low;
  return ind;
}

Features to_features(const Indicators& ind) {
  return {ind.mean_low, ind.mean_medium, ind.mean_high, ind.gradient};
}

std::array<Persona, 4> assign_labels(std::span<const CentroidSummary, 4> clusters) {
  std::array<Persona, 4> labels{};
  std::array<bool, 4> used{};
  int nwnh = 0;
  for (int c = 1; c < 4; ++c) {
    if (clusters[c].mean_overall < clusters[nwnh].mean_overall) nwnh = c;
  }
  labels[nwnh] = Persona::kNWNH;
  used[nwnh] = true;

  int ibc = -1;
  int sf = -1;
  for (int c = 0; c < 4; ++c) {
    if (used[c]) continue;
    if (ibc < 0 || clusters[c].gradient > clusters[ibc].gradient) ibc = c;
  }
  labels[ibc] = Persona::kIBC;
  used[ibc] = true;
  for (int c = 0; c < 4; ++c) {
    if (used[c]) continue;
    if (sf < 0 || clusters[c].gradient < clusters[sf].gradient) sf = c;
  }
  labels[sf] = Persona::kSF;
  used[sf] = true;
  for (int c = 0; c < 4; ++c) {
    if (!used[c]) labels[c] = Persona::kEC;
  }
  return labels;
}

namespace {

Point standardize(const Features& raw, const Features& mean, const Features& sd) {
  Point p(4);
  for (int d = 0; d < 4; ++d) p[d] = (raw[d] - mean[d]) / sd[d];
  return p;
}

}  // namespace

ClusterModel fit_features(std::span<const Features> features,
                          std::span<const double> mean_overall, std::uint64_t seed,
                          int restarts) {
  if (features.size() != mean_overall.size()) {
    throw Error(ErrorCode::kAlignment, "features and overall means differ in length");
  }
  const std::size_t n = features.size();
  ClusterModel model;
  model.seed = seed;
  model.restarts = restarts;
  for (int d = 0; d < 4; ++d) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = features[i][d];
    double m = stats::mean(col);
    double var = 0.0;
    for (double x : col) var += (x - m) * (x - m);
    double sd = n ? std::sqrt(var / static_cast<double>(n)) : 0.0;
    model.feature_mean[d] = m;
    model.feature_stddev[d] = sd > 0.0 ? sd : 1.0;
  }

  std::vector<Point> points;
  points.reserve(n);
  for (const auto& f : features) {
    points.push_back(standardize(f, model.feature_mean, model.feature_stddev));
  }
  if (count_distinct(points) < 4) {
    throw Error(ErrorCode::kDegenerateInput,
                "persona clustering needs at least 4 distinct indicator vectors");
  }

  KMeansOptions opts;
  opts.k = 4;
  opts.restarts = restarts;
  opts.seed = seed;
  auto result = kmeans(points, opts);

  std::array<double, 4> sum_mean{}, sum_grad{};
  std::array<std::size_t, 4> counts{};
  for (std::size_t i = 0; i < n; ++i) {
    int c = result.assignment[i];
    sum_mean[c] += mean_overall[i];
    sum_grad[c] += features[i][3];
    ++counts[c];
  }
  for (int c = 0; c < 4; ++c) {
    for (int d = 0; d < 4; ++d) model.centroids[c][d] = result.centroids[c][d];
    if (counts[c]) {
      model.summaries[c].mean_overall = sum_mean[c] / static_cast<double>(counts[c]);
      model.summaries[c].gradient = sum_grad[c] / static_cast<double>(counts[c]);
    }
  }
  model.label_map = assign_labels(std::span<const CentroidSummary, 4>(model.summaries));
  return model;
}

ClusterModel fit_personas(std::span<const ComfortProfile> profiles, std::uint64_t seed,
                          int restarts) {
  std::vector<Features> features;
  std::vector<double> overall;
  features.reserve(profiles.size());
  for (const auto& p : profiles) {
    auto ind = compute_indicators(p);
    features.push_back(to_features(ind));
    overall.push_back(ind.mean_overall);
  }
  return fit_features(features, overall, seed, restarts);
}

int nearest_cluster(const Features& raw, const ClusterModel& model) {
  Point x = standardize(raw, model.feature_mean, model.feature_stddev);
  int best = 0;
  double best_d = squared_distance(x, model.centroids[0]);
  for (int c = 1; c < 4; ++c) {
    double d = squared_distance(x, model.centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

Persona classify(const ComfortProfile& profile, const ClusterModel& model) {
  return model.label_map[nearest_cluster(to_features(compute_indicators(profile)), model)];
}

void to_json(json& j, const ClusterModel& m) {
  json clusters = json::array();
  for (int c = 0; c < 4; ++c) {
    clusters.push_back(json{{"centroid", m.centroids[c]},
                            {"mean_overall", m.summaries[c].mean_overall},
                            {"gradient", m.summaries[c].gradient},
                            {"persona", m.label_map[c]}});
  }
  j = json{{"v", kSchemaVersion},
           {"features", {"mean_low", "mean_medium", "mean_high", "gradient"}},
           {"feature_mean", m.feature_mean},
           {"feature_stddev", m.feature_stddev},
           {"clusters", clusters},
           {"seed", m.seed},
           {"restarts", m.restarts}};
}

void from_json(const json& j, ClusterModel& m) {
  m.feature_mean = j.at("feature_mean").get<Features>();
  m.feature_stddev = j.at("feature_stddev").get<Features>();
  const auto& clusters = j.at("clusters");
  if (clusters.size() != 4) throw ParseError("cluster model needs exactly 4 clusters", 0);
  std::array<bool, 4> seen{};
  for (int c = 0; c < 4; ++c) {
    const auto& cl = clusters.at(c);
    m.centroids[c] = cl.at("centroid").get<Features>();
    m.summaries[c].mean_overall = cl.at("mean_overall").get<double>();
    m.summaries[c].gradient = cl.at("gradient").get<double>();
    m.label_map[c] = cl.at("persona").get<Persona>();
    seen[static_cast<int>(m.label_map[c])] = true;
  }
  if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
    throw ParseError("cluster label map is not a bijection onto the four personas", 0);
  }
  m.seed = j.value("seed", std::uint64_t{0});
  m.restarts = j.value("restarts", kDefaultRestarts);
}

VarianceReport variance_analysis(std::span<const SegmentAssessment> assessments,
                                 RatingDimension dimension) {
  std::map<std::string, std::vector<double>> by_participant;
  for (const auto& a : assessments) {
    by_participant[a.participant_id].push_back(a.ratings.get(dimension));
  }
  VarianceReport rep;
  rep.dimension = dimension;
  std::vector<double> means, variances;
  for (const auto& [id, values] : by_participant) {
    if (values.size() < 2) {
      rep.warnings.push_back("participant " + id + " excluded: only " +
                             std::to_string(values.size()) + " assessment");
      continue;
    }
    ParticipantVariance pv{stats::mean(values), stats::sample_variance(values), values.size()};
    rep.per_participant[id] = pv;
    means.push_back(pv.mean_rating);
    variances.push_back(pv.variance);
  }
  if (!variances.empty()) {
    rep.median_variance = stats::median(variances);
    rep.min_variance = *std::min_element(variances.begin(), variances.end());
    rep.max_variance = *std::max_element(variances.begin(), variances.end());
  }
  rep.corr_mean_variance = stats::pearson(means, variances);
  if (!rep.corr_mean_variance) {
    rep.warnings.push_back("mean/variance correlation undefined");
  }
  return rep;
}

void to_json(json& j, const VarianceReport& r) {
  json per = json::object();
  for (const auto& [id, pv] : r.per_participant) {
    per[id] = json{{"mean_rating", pv.mean_rating}, {"variance", pv.variance}, {"n", pv.n}};
  }
  j = json{{"v", kSchemaVersion},
           {"dimension", to_string(r.dimension)},
           {"per_participant", per},
           {"median_variance", r.median_variance},
           {"min_variance", r.min_variance},
           {"max_variance", r.max_variance},
           {"corr_mean_variance",
            r.corr_mean_variance ? json(*r.corr_mean_variance) : json(nullptr)},
           {"warnings", r.warnings}};
}

}  // namespace bikelab::persona
