#include "bikelab/baseline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "bikelab/dataset.hpp"

namespace bikelab::baseline {

// ---- features ------------------------------------------------------------

std::size_t FeatureSchema::dimension() const {
  std::size_t d = detector_classes.size() + 1 + latent_dim;
  for (const auto& [key, cats] : osm_categories) d += cats.size() + 1;
  return d;
}

std::vector<std::string> FeatureSchema::names() const {
  std::vector<std::string> out;
  for (const auto& c : detector_classes) out.push_back("det:" + c);
  for (const auto& [key, cats] : osm_categories) {
    for (const auto& c : cats) out.push_back("osm:" + key + "=" + c);
    out.push_back("osm:" + key + "=unknown");
  }
  out.push_back("osm:unknown_keys");
  for (std::size_t i = 0; i < latent_dim; ++i) out.push_back("latent:" + std::to_string(i));
  return out;
}

void to_json(json& j, const FeatureSchema& s) {
  json osm = json::array();
  for (const auto& [key, cats] : s.osm_categories) osm.push_back({{"key", key}, {"categories", cats}});
  j = json{{"detector_classes", s.detector_classes}, {"osm", osm}, {"latent_dim", s.latent_dim}};
}

void from_json(const json& j, FeatureSchema& s) {
  s.detector_classes = j.at("detector_classes").get<std::vector<std::string>>();
  s.osm_categories.clear();
  for (const auto& o : j.at("osm")) {
    s.osm_categories.emplace_back(o.at("key").get<std::string>(),
                                  o.at("categories").get<std::vector<std::string>>());
  }
  s.latent_dim = j.at("latent_dim").get<std::size_t>();
}

FeatureSchema default_schema(std::size_t latent_dim) {
  FeatureSchema s;
  s.detector_classes = {"bike_lane_marking", "buffer",     "bollard",    "traffic_signal",
                        "street_furniture",  "greenery",   "parked_car", "bus",
                        "truck",             "pedestrian", "other"};
  s.osm_categories = {
      {"highway", {"primary", "secondary", "tertiary", "residential"}},
      {"cycleway", {"none", "shared_lane", "striped_lane", "buffered_lane", "protected_lane"}},
      {"lanes", {"1", "2", "3", "4"}},
      {"maxspeed", {"25 mph", "35 mph", "45 mph"}},
  };
  s.latent_dim = latent_dim;
  return s;
}

void to_json(json& j, const FeatureRecord& r) {
  j = json{{"v", kSchemaVersion}, {"image_id", r.image_id}, {"detections", r.detections},
           {"attributes", r.attributes}, {"latent", r.latent}};
}

void from_json(const json& j, FeatureRecord& r) {
  j.at("image_id").get_to(r.image_id);
  r.detections = j.value("detections", json::object()).get<std::map<std::string, int>>();
  r.attributes = j.value("attributes", json::array()).get<AttributeSet>();
  r.latent = j.value("latent", json::array()).get<std::vector<double>>();
}

std::vector<double> assemble_features(const FeatureSchema& schema,
                                      const std::map<std::string, int>& detections,
                                      const AttributeSet& attrs, std::span<const double> latent) {
  if (latent.size() != schema.latent_dim) {
    throw Error(ErrorCode::kSchema, "latent dimension " + std::to_string(latent.size()) +
                                        " does not match schema dimension " +
                                        std::to_string(schema.latent_dim));
  }
  std::vector<double> out;
  out.reserve(schema.dimension());
  std::vector<double> counts(schema.detector_classes.size(), 0.0);
  for (const auto& [cls, n] : detections) {
    if (n < 0) throw ValidationError("detections." + cls, "count must be >= 0");
    auto it = std::find(schema.detector_classes.begin(), schema.detector_classes.end(), cls);
    const std::size_t slot = it != schema.detector_classes.end()
                                 ? static_cast<std::size_t>(it - schema.detector_classes.begin())
                                 : counts.size() - 1;
    counts[slot] += n;
  }
  out.insert(out.end(), counts.begin(), counts.end());

  std::set<std::string> known_keys;
  for (const auto& [key, cats] : schema.osm_categories) {
    known_keys.insert(key);
    std::vector<double> block(cats.size() + 1, 0.0);
    auto value = attrs.get(key);
    auto it = value ? std::find(cats.begin(), cats.end(), *value) : cats.end();
    block[it != cats.end() ? static_cast<std::size_t>(it - cats.begin()) : cats.size()] = 1.0;
    out.insert(out.end(), block.begin(), block.end());
  }
  double unknown_keys = 0;
  for (const auto& [key, value] : attrs.attributes) unknown_keys += known_keys.count(key) == 0;
  out.push_back(unknown_keys);
  out.insert(out.end(), latent.begin(), latent.end());
  return out;
}

// ---- oversampling --------------------------------------------------------

SmoteResult kmeans_smote(std::span<const Point> x, std::span<const int> y,
                         const SmoteOptions& options) {
  if (x.size() != y.size()) throw Error(ErrorCode::kAlignment, "features and labels differ in length");
  if (options.k < 1 || options.nn < 1) throw Error(ErrorCode::kConfig, "k and nn must be >= 1");
  std::map<int, std::size_t> counts;
  for (int label : y) ++counts[label];
  if (counts.size() < 2) throw Error(ErrorCode::kConfig, "oversampling needs at least two classes");

  SmoteResult out;
  out.x.assign(x.begin(), x.end());
  out.y.assign(y.begin(), y.end());
  out.n_original = x.size();
  std::size_t majority = 0;
  for (const auto& [label, n] : counts) majority = std::max(majority, n);
  if (std::all_of(counts.begin(), counts.end(), [&](const auto& c) { return c.second == majority; })) {
    return out;
  }

  KMeansOptions km;
  km.k = static_cast<int>(std::min<std::size_t>(options.k, count_distinct(x)));
  km.restarts = 10;
  km.seed = options.seed;
  const auto clusters = kmeans(x, km);

  for (const auto& [label, n_c] : counts) {
    if (n_c == majority) continue;
    const std::size_t need = majority - n_c;
    std::vector<std::vector<std::size_t>> members(km.k);
    std::vector<std::size_t> others(km.k, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const int c = clusters.assignment[i];
      if (y[i] == label) {
        members[c].push_back(i);
      } else {
        ++others[c];
      }
    }
    std::vector<int> eligible;
    for (int c = 0; c < km.k; ++c) {
      const double ir = (static_cast<double>(others[c]) + 1.0) /
                        (static_cast<double>(members[c].size()) + 1.0);
      if (members[c].size() >= 2 && ir <= options.imbalance_threshold) eligible.push_back(c);
    }
    if (eligible.empty()) {
      for (int c = 0; c < km.k; ++c) {
        if (members[c].size() >= 2) eligible.push_back(c);
      }
    }
    if (eligible.empty()) {
      throw Error(ErrorCode::kCannotOversample,
                  "class " + std::to_string(label) + " has fewer than 2 samples in every cluster");
    }

    // Sparser minority clusters receive more synthetic samples.
    std::vector<double> weights;
    for (int c : eligible) {
      const auto& m = members[c];
      double sum = 0;
      std::size_t pairs = 0;
      for (std::size_t a = 0; a < m.size(); ++a) {
        for (std::size_t b = a + 1; b < m.size(); ++b) {
          sum += std::sqrt(squared_distance(x[m[a]], x[m[b]]));
          ++pairs;
        }
      }
      weights.push_back(sum / static_cast<double>(pairs));
    }
    if (std::all_of(weights.begin(), weights.end(), [](double w) { return w == 0; })) {
      std::fill(weights.begin(), weights.end(), 1.0);
    }
    const auto alloc = dataset::apportion(need, weights);

    Rng rng = make_rng(options.seed, "smote-class-" + std::to_string(label));
    for (std::size_t e = 0; e < eligible.size(); ++e) {
      const auto& m = members[eligible[e]];
      for (std::size_t g = 0; g < alloc[e]; ++g) {
        const std::size_t i = m[uniform_index(rng, m.size())];
        std::vector<std::size_t> neighbours;
        for (auto j : m) {
          if (j != i) neighbours.push_back(j);
        }
        std::stable_sort(neighbours.begin(), neighbours.end(), [&](std::size_t a, std::size_t b) {
          return squared_distance(x[i], x[a]) < squared_distance(x[i], x[b]);
        });
        neighbours.resize(std::min<std::size_t>(neighbours.size(), options.nn));
        const std::size_t j = neighbours[uniform_index(rng, neighbours.size())];
        const double u = uniform01(rng);
        Point p(x[i].size());
        for (std::size_t d = 0; d < p.size(); ++d) p[d] = x[i][d] + u * (x[j][d] - x[i][d]);
        out.x.push_back(std::move(p));
        out.y.push_back(label);
        out.parents.emplace_back(i, j);
      }
    }
  }
  return out;
}

// ---- random forest -------------------------------------------------------

void to_json(json& j, const ForestOptions& o) {
  j = json{{"trees", o.trees}, {"max_depth", o.max_depth}, {"min_samples_split", o.min_samples_split},
           {"max_features", o.max_features}, {"seed", o.seed}};
}

void from_json(const json& j, ForestOptions& o) {
  const ForestOptions d;
  o.trees = j.value("trees", d.trees);
  o.max_depth = j.value("max_depth", d.max_depth);
  o.min_samples_split = j.value("min_samples_split", d.min_samples_split);
  o.max_features = j.value("max_features", d.max_features);
  o.seed = j.value("seed", d.seed);
}

namespace {

double gini_sum(const std::vector<double>& counts, double n) {
  if (n == 0) return 0.0;
  double s = 0;
  for (double c : counts) s += c * c;
  return n - s / n;  // n * (1 - sum p^2)
}

int majority_label(std::span<const int> y, const std::vector<std::size_t>& rows, std::size_t begin,
                   std::size_t end, std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (std::size_t r = begin; r < end; ++r) ++counts[y[rows[r]]];
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

void DecisionTree::fit(std::span<const Point> x, std::span<const int> y,
                       std::span<const std::size_t> rows, const ForestOptions& options, Rng& rng) {
  nodes_.clear();
  std::vector<std::size_t> work(rows.begin(), rows.end());
  const int n_classes = y.empty() ? 1 : *std::max_element(y.begin(), y.end()) + 1;
  build(x, y, work, 0, work.size(), 0, options, static_cast<std::size_t>(n_classes), rng);
}

int DecisionTree::build(std::span<const Point> x, std::span<const int> y,
                        std::vector<std::size_t>& rows, std::size_t begin, std::size_t end,
                        int depth, const ForestOptions& options, std::size_t n_classes, Rng& rng) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].label = majority_label(y, rows, begin, end, n_classes);

  const std::size_t n = end - begin;
  bool pure = true;
  for (std::size_t r = begin + 1; r < end && pure; ++r) pure = y[rows[r]] == y[rows[begin]];
  if (pure || n < static_cast<std::size_t>(std::max(2, options.min_samples_split)) ||
      (options.max_depth > 0 && depth >= options.max_depth)) {
    return id;
  }

  const std::size_t d = x[rows[begin]].size();
  std::size_t m = options.max_features ? std::min(options.max_features, d)
                                       : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d))));
  std::vector<std::size_t> features(d);
  std::iota(features.begin(), features.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    std::swap(features[i], features[i + uniform_index(rng, d - i)]);
  }

  std::vector<double> total(n_classes, 0.0);
  for (std::size_t r = begin; r < end; ++r) total[y[rows[r]]] += 1;

  double best_score = std::numeric_limits<double>::infinity();
  int best_feature = -1;
  double best_threshold = 0;
  std::vector<std::pair<double, int>> column(n);
  for (std::size_t fi = 0; fi < m; ++fi) {
    const std::size_t f = features[fi];
    for (std::size_t r = 0; r < n; ++r) column[r] = {x[rows[begin + r]][f], y[rows[begin + r]]};
    std::sort(column.begin(), column.end());
    if (column.front().first == column.back().first) continue;
    std::vector<double> left(n_classes, 0.0), right = total;
    for (std::size_t r = 0; r + 1 < n; ++r) {
      left[column[r].second] += 1;
      right[column[r].second] -= 1;
      if (column[r].first == column[r + 1].first) continue;
      const double nl = static_cast<double>(r + 1), nr = static_cast<double>(n - r - 1);
      const double score = gini_sum(left, nl) + gini_sum(right, nr);
      if (score < best_score) {
        best_score = score;
        best_feature = static_cast<int>(f);
        best_threshold = 0.5 * (column[r].first + column[r + 1].first);
      }
    }
  }
  if (best_feature < 0) return id;

  auto mid = std::partition(rows.begin() + begin, rows.begin() + end, [&](std::size_t r) {
    return x[r][best_feature] <= best_threshold;
  });
  const std::size_t split = static_cast<std::size_t>(mid - rows.begin());
  const int left = build(x, y, rows, begin, split, depth + 1, options, n_classes, rng);
  const int right = build(x, y, rows, split, end, depth + 1, options, n_classes, rng);
  nodes_[id].feature = best_feature;
  nodes_[id].threshold = best_threshold;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

int DecisionTree::predict(std::span<const double> x) const {
  int i = 0;
  while (nodes_[i].feature >= 0) {
    i = x[nodes_[i].feature] <= nodes_[i].threshold ? nodes_[i].left : nodes_[i].right;
  }
  return nodes_[i].label;
}

void RandomForest::fit(std::span<const Point> x, std::span<const int> y,
                       const ForestOptions& options) {
  if (x.size() != y.size() || x.empty()) {
    throw Error(ErrorCode::kAlignment, "random forest needs aligned, non-empty training data");
  }
  if (options.trees < 1) throw Error(ErrorCode::kConfig, "trees must be >= 1");
  dimension_ = x[0].size();
  for (const auto& row : x) {
    if (row.size() != dimension_) throw Error(ErrorCode::kSchema, "ragged feature matrix");
  }
  std::set<int> labels(y.begin(), y.end());
  classes_.assign(labels.begin(), labels.end());
  trees_.clear();
  if (classes_.size() == 1) return;  // constant predictor

  std::vector<int> encoded(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    encoded[i] = static_cast<int>(std::lower_bound(classes_.begin(), classes_.end(), y[i]) -
                                  classes_.begin());
  }
  trees_.resize(options.trees);
  for (int t = 0; t < options.trees; ++t) {
    Rng rng = make_rng(mix_seed(options.seed, static_cast<std::uint64_t>(t)), "tree");
    std::vector<std::size_t> rows(x.size());
    for (auto& r : rows) r = uniform_index(rng, x.size());
    trees_[t].fit(x, encoded, rows, options, rng);
  }
}

std::map<int, double> RandomForest::vote_share(std::span<const double> x) const {
  if (classes_.empty()) throw Error(ErrorCode::kConfig, "forest is not trained");
  if (x.size() != dimension_) {
    throw Error(ErrorCode::kSchema, "feature dimension " + std::to_string(x.size()) +
                                        " does not match model dimension " +
                                        std::to_string(dimension_));
  }
  std::map<int, double> share;
  if (trees_.empty()) {
    share[classes_[0]] = 1.0;
    return share;
  }
  for (int c : classes_) share[c] = 0.0;
  for (const auto& t : trees_) share[classes_[t.predict(x)]] += 1.0;
  for (auto& [c, v] : share) v /= static_cast<double>(trees_.size());
  return share;
}

int RandomForest::predict(std::span<const double> x) const {
  auto share = vote_share(x);
  int best = share.begin()->first;
  for (const auto& [c, v] : share) {
    if (v > share[best]) best = c;
  }
  return best;
}

void to_json(json& j, const RandomForest& f) {
  json trees = json::array();
  for (const auto& t : f.trees_) {
    json nodes = json::array();
    for (const auto& n : t.nodes()) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.label});
    trees.push_back(std::move(nodes));
  }
  j = json{{"dimension", f.dimension_}, {"classes", f.classes_}, {"trees", std::move(trees)}};
}

void from_json(const json& j, RandomForest& f) {
  f.dimension_ = j.at("dimension").get<std::size_t>();
  f.classes_ = j.at("classes").get<std::vector<int>>();
  f.trees_.clear();
  for (const auto& nodes : j.at("trees")) {
    DecisionTree t;
    for (const auto& n : nodes) {
      t.nodes().push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                           n.at(3).get<int>(), n.at(4).get<int>()});
    }
    f.trees_.push_back(std::move(t));
  }
}

// ---- tags ----------------------------------------------------------------

std::string normalize_tag(std::string_view raw) {
  std::string cleaned;
  for (char ch : raw) {
    unsigned char c = static_cast<unsigned char>(ch);
    cleaned += std::isalnum(c) ? static_cast<char>(std::tolower(c)) : ' ';
  }
  std::vector<std::string> words;
  std::string cur;
  for (char ch : cleaned + " ") {
    if (ch == ' ') {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (words.empty()) return {};
  std::string& last = words.back();
  auto ends = [&](std::string_view suffix) {
    return last.size() >= suffix.size() &&
           last.compare(last.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (last.size() > 4 && ends("ies")) {
    last = last.substr(0, last.size() - 3) + "y";
  } else if (last.size() > 3 && ends("s") && !ends("ss") && !ends("us") && !ends("is")) {
    last.pop_back();
  }
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) out += (i ? " " : "") + words[i];
  return out;
}

std::optional<std::string> TagPool::canonical(std::string_view raw) const {
  auto it = alias_map.find(tag_key(raw));
  if (it == alias_map.end()) return std::nullopt;
  return it->second;
}

void to_json(json& j, const TagPool& p) { j = json{{"tags", p.tags}, {"alias_map", p.alias_map}}; }

void from_json(const json& j, TagPool& p) {
  p.tags = j.at("tags").get<std::vector<std::string>>();
  p.alias_map = j.at("alias_map").get<std::map<std::string, std::string>>();
}

TagPool build_tag_pool(std::span<const FactorTagList> lists,
                       const std::map<std::string, std::string>& overrides) {
  TagPool pool;
  std::set<std::string> canon;
  for (const auto& list : lists) {
    for (const auto& raw : list.tags) {
      const std::string key = tag_key(raw);
      std::string c;
      if (auto it = overrides.find(raw); it != overrides.end()) {
        c = it->second;
      } else if (auto it2 = overrides.find(key); it2 != overrides.end()) {
        c = it2->second;
      } else {
        c = normalize_tag(raw);
      }
      if (c.empty()) continue;
      pool.alias_map[key] = c;
      canon.insert(c);
    }
  }
  pool.tags.assign(canon.begin(), canon.end());
  return pool;
}

void to_json(json& j, const TagModel& m) {
  j = json{{"pool", m.pool}, {"classifiers", m.classifiers}};
}

void from_json(const json& j, TagModel& m) {
  m.pool = j.at("pool").get<TagPool>();
  m.classifiers = j.at("classifiers").get<std::vector<RandomForest>>();
}

TagModel train_tags(std::span<const Point> x, std::span<const FactorTagList> labels,
                    const TagPool& pool, const ForestOptions& options) {
  if (pool.tags.empty()) throw Error(ErrorCode::kConfig, "empty tag pool");
  if (x.size() != labels.size()) throw Error(ErrorCode::kAlignment, "features and tag lists differ in length");
  TagModel model;
  model.pool = pool;
  for (std::size_t t = 0; t < pool.tags.size(); ++t) {
    std::vector<int> y(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (const auto& raw : labels[i].tags) {
        if (pool.canonical(raw) == pool.tags[t]) y[i] = 1;
      }
    }
    ForestOptions o = options;
    o.seed = mix_seed(options.seed, stable_hash(pool.tags[t]));
    RandomForest f;
    f.fit(x, y, o);
    model.classifiers.push_back(std::move(f));
  }
  return model;
}

FactorTagList predict_tags(const TagModel& model, std::span<const double> x) {
  if (model.pool.tags.empty()) throw Error(ErrorCode::kConfig, "empty tag pool");
  std::vector<std::string> out;
  for (std::size_t t = 0; t < model.pool.tags.size(); ++t) {
    auto share = model.classifiers[t].vote_share(x);
    auto it = share.find(1);
    if (it != share.end() && it->second > 0.5) out.push_back(model.pool.tags[t]);
  }
  return make_tags(out);
}

// ---- full baseline -------------------------------------------------------

void to_json(json& j, const BaselineConfig& c) {
  j = json{{"k", c.smote.k},
           {"imbalance_threshold", c.smote.imbalance_threshold},
           {"nn", c.smote.nn},
           {"seed", c.smote.seed},
           {"forest", c.forest},
           {"with_tags", c.with_tags}};
}

void from_json(const json& j, BaselineConfig& c) {
  const BaselineConfig d;
  c.smote.k = j.value("k", d.smote.k);
  c.smote.imbalance_threshold = j.value("imbalance_threshold", d.smote.imbalance_threshold);
  c.smote.nn = j.value("nn", d.smote.nn);
  c.smote.seed = j.value("seed", d.smote.seed);
  c.forest = j.value("forest", json::object()).get<ForestOptions>();
  c.forest.seed = j.contains("forest") && j.at("forest").contains("seed") ? c.forest.seed : c.smote.seed;
  c.with_tags = j.value("with_tags", d.with_tags);
}

void to_json(json& j, const BaselineModel& m) {
  j = json{{"v", kSchemaVersion}, {"schema", m.schema}, {"rating", m.rating}};
  j["tags"] = m.tags ? json(*m.tags) : json(nullptr);
}

void from_json(const json& j, BaselineModel& m) {
  m.schema = j.at("schema").get<FeatureSchema>();
  m.rating = j.at("rating").get<std::array<RandomForest, 3>>();
  if (j.contains("tags") && !j.at("tags").is_null()) {
    m.tags = j.at("tags").get<TagModel>();
  } else {
    m.tags.reset();
  }
}

BaselineModel train_baseline(const FeatureSchema& schema, std::span<const Point> x,
                             std::span<const RatingTriple> ratings,
                             std::span<const FactorTagList> factors, const BaselineConfig& config) {
  if (x.size() != ratings.size() || (config.with_tags && factors.size() != x.size())) {
    throw Error(ErrorCode::kAlignment, "features, ratings and factors differ in length");
  }
  for (const auto& row : x) {
    if (row.size() != schema.dimension()) throw Error(ErrorCode::kSchema, "feature row does not match schema");
  }
  BaselineModel model;
  model.schema = schema;
  for (int d = 0; d < 3; ++d) {
    std::vector<int> y;
    for (const auto& r : ratings) y.push_back(r.get(static_cast<RatingDimension>(d)));
    SmoteOptions so = config.smote;
    so.seed = mix_seed(config.smote.seed, static_cast<std::uint64_t>(d));
    ForestOptions fo = config.forest;
    fo.seed = mix_seed(config.forest.seed, static_cast<std::uint64_t>(d));
    std::set<int> distinct(y.begin(), y.end());
    if (distinct.size() >= 2) {
      try {
        auto balanced = kmeans_smote(x, y, so);
        model.rating[d].fit(balanced.x, balanced.y, fo);
        continue;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kCannotOversample) throw;
      }
    }
    model.rating[d].fit(x, y, fo);
  }
  if (config.with_tags) {
    auto pool = build_tag_pool(factors);
    model.tags = train_tags(x, factors, pool, config.forest);
  }
  return model;
}

BaselinePrediction predict(const BaselineModel& model, std::span<const double> x) {
  BaselinePrediction out;
  for (int d = 0; d < 3; ++d) {
    out.ratings.set(static_cast<RatingDimension>(d), model.rating[d].predict(x));
  }
  if (model.tags) out.factors = predict_tags(*model.tags, x);
  return out;
}

}  // namespace bikelab::baseline
