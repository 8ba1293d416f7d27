#pragma once
// Cluster-wise minority oversampling, a CART random forest, and the tag-pool
// factor predictor used as the comparison baseline.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bikelab/core.hpp"
#include "bikelab/kmeans.hpp"
#include "bikelab/rng.hpp"

namespace bikelab::baseline {

// ---- features ------------------------------------------------------------

struct FeatureSchema {
  std::vector<std::string> detector_classes;
  /// OSM key -> known categories; each key also gets an "unknown" slot.
  std::vector<std::pair<std::string, std::vector<std::string>>> osm_categories;
  std::size_t latent_dim = 0;

  std::size_t dimension() const;
  std::vector<std::string> names() const;

  bool operator==(const FeatureSchema&) const = default;
};

void to_json(json& j, const FeatureSchema& s);
void from_json(const json& j, FeatureSchema& s);

FeatureSchema default_schema(std::size_t latent_dim);

/// One precomputed feature-file row.
struct FeatureRecord {
  std::string image_id;
  std::map<std::string, int> detections;
  AttributeSet attributes;
  std::vector<double> latent;
};

void to_json(json& j, const FeatureRecord& r);
void from_json(const json& j, FeatureRecord& r);

/// Layout: detector counts (unlisted classes go to the last, "other",
/// class), one-hot OSM blocks with an unknown slot per key, a count of keys
/// outside the schema, then the latent vector. Throws Error(kSchema) on a
/// latent size mismatch and ValidationError on a negative count.
std::vector<double> assemble_features(const FeatureSchema& schema,
                                      const std::map<std::string, int>& detections,
                                      const AttributeSet& attrs, std::span<const double> latent);

// ---- oversampling --------------------------------------------------------

struct SmoteOptions {
  int k = 8;
  double imbalance_threshold = 2.0;
  int nn = 5;
  std::uint64_t seed = 0;
};

struct SmoteResult {
  std::vector<Point> x;  // originals first, in input order
  std::vector<int> y;
  std::size_t n_original = 0;
  /// For each synthetic row, the two originals it interpolates.
  std::vector<std::pair<std::size_t, std::size_t>> parents;
};

/// Brings every class up to the majority count. A cluster is eligible for
/// class c when it holds >= 2 samples of c and (n_other + 1) / (n_c + 1) <=
/// imbalance_threshold; if none qualify, every cluster with >= 2 samples of c
/// is used. New samples are allotted by minority sparsity and interpolate
/// toward one of the `nn` nearest same-cluster neighbours. Throws
/// Error(kCannotOversample) when no cluster holds two samples of a class that
/// needs oversampling.
SmoteResult kmeans_smote(std::span<const Point> x, std::span<const int> y,
                         const SmoteOptions& options = {});

// ---- random forest -------------------------------------------------------

struct ForestOptions {
  int trees = 500;
  int max_depth = 0;  // 0 = unlimited
  int min_samples_split = 2;
  std::size_t max_features = 0;  // 0 = floor(sqrt(d))
  std::uint64_t seed = 0;
};

void to_json(json& j, const ForestOptions& o);
void from_json(const json& j, ForestOptions& o);

class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 for a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = 0;
  };

  void fit(std::span<const Point> x, std::span<const int> y, std::span<const std::size_t> rows,
           const ForestOptions& options, Rng& rng);
  int predict(std::span<const double> x) const;

  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& nodes() { return nodes_; }

 private:
  int build(std::span<const Point> x, std::span<const int> y, std::vector<std::size_t>& rows,
            std::size_t begin, std::size_t end, int depth, const ForestOptions& options,
            std::size_t n_classes, Rng& rng);

  std::vector<Node> nodes_;
};

class RandomForest {
 public:
  void fit(std::span<const Point> x, std::span<const int> y, const ForestOptions& options);
  /// Majority vote; ties go to the smallest label. Throws Error(kSchema) on a
  /// dimension mismatch.
  int predict(std::span<const double> x) const;
  /// Vote share per label.
  std::map<int, double> vote_share(std::span<const double> x) const;

  std::size_t dimension() const { return dimension_; }
  const std::vector<int>& classes() const { return classes_; }

  friend void to_json(json& j, const RandomForest& f);
  friend void from_json(const json& j, RandomForest& f);

 private:
  std::vector<DecisionTree> trees_;
  std::vector<int> classes_;
  std::size_t dimension_ = 0;
};

// ---- tags ----------------------------------------------------------------

struct TagPool {
  std::vector<std::string> tags;                  // canonical, sorted
  std::map<std::string, std::string> alias_map;  // raw tag key -> canonical

  /// Canonical tag for a raw tag, or nullopt when unseen.
  std::optional<std::string> canonical(std::string_view raw) const;
};

void to_json(json& j, const TagPool& p);
void from_json(const json& j, TagPool& p);

/// Deterministic normalizer: lowercase, punctuation stripped, whitespace
/// collapsed, final word singularized.
std::string normalize_tag(std::string_view raw);

/// Pool over the training tags. `overrides` (raw -> canonical, e.g. from an
/// external normalizer) take precedence over normalize_tag.
TagPool build_tag_pool(std::span<const FactorTagList> lists,
                       const std::map<std::string, std::string>& overrides = {});

struct TagModel {
  TagPool pool;
  std::vector<RandomForest> classifiers;  // parallel to pool.tags
};

void to_json(json& j, const TagModel& m);
void from_json(const json& j, TagModel& m);

/// One-vs-rest forests over canonical tags. Throws Error(kConfig) for an
/// empty pool.
TagModel train_tags(std::span<const Point> x, std::span<const FactorTagList> labels,
                    const TagPool& pool, const ForestOptions& options);

/// Tags whose positive vote share exceeds 0.5, in pool order.
FactorTagList predict_tags(const TagModel& model, std::span<const double> x);

// ---- full baseline -------------------------------------------------------

struct BaselineConfig {
  SmoteOptions smote;
  ForestOptions forest;
  bool with_tags = true;  // false = rating-only variant
};

void to_json(json& j, const BaselineConfig& c);
void from_json(const json& j, BaselineConfig& c);

struct BaselineModel {
  FeatureSchema schema;
  std::array<RandomForest, 3> rating;  // safety, comfort, willingness
  std::optional<TagModel> tags;
};

void to_json(json& j, const BaselineModel& m);
void from_json(const json& j, BaselineModel& m);

/// Independent heads: each rating dimension is balanced and fitted
/// separately; tag classifiers see the unbalanced features.
BaselineModel train_baseline(const FeatureSchema& schema, std::span<const Point> x,
                             std::span<const RatingTriple> ratings,
                             std::span<const FactorTagList> factors, const BaselineConfig& config);

struct BaselinePrediction {
  RatingTriple ratings;
  FactorTagList factors;
};

BaselinePrediction predict(const BaselineModel& model, std::span<const double> x);

}  // namespace bikelab::baseline
