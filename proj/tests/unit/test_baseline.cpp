#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "bikelab/baseline.hpp"
#include "bikelab/rng.hpp"

using namespace bikelab;
using namespace bikelab::baseline;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kParse;
}

FeatureSchema tiny_schema() {
  FeatureSchema s;
  s.detector_classes = {"bike_lane_marking", "greenery", "other"};
  s.osm_categories = {{"cycleway", {"none", "striped_lane"}}, {"lanes", {"1", "2"}}};
  s.latent_dim = 2;
  return s;
}

/// True when p = a + t (b - a) for some t in [0, 1], within tol.
bool on_segment(const Point& p, const Point& a, const Point& b, double tol) {
  double ab2 = 0, t_num = 0;
  for (std::size_t d = 0; d < p.size(); ++d) {
    ab2 += (b[d] - a[d]) * (b[d] - a[d]);
    t_num += (p[d] - a[d]) * (b[d] - a[d]);
  }
  double t = ab2 > 0 ? t_num / ab2 : 0.0;
  if (t < -tol || t > 1 + tol) return false;
  t = std::clamp(t, 0.0, 1.0);
  for (std::size_t d = 0; d < p.size(); ++d) {
    if (std::abs(p[d] - (a[d] + t * (b[d] - a[d]))) > tol) return false;
  }
  return true;
}

struct Toy {
  std::vector<Point> x;
  std::vector<int> y;
};

Toy toy(std::size_t majority, std::size_t minority, std::uint64_t seed) {
  Rng rng = make_rng(seed, "toy");
  Toy t;
  for (std::size_t i = 0; i < majority; ++i) {
    t.x.push_back({standard_normal(rng), standard_normal(rng), standard_normal(rng)});
    t.y.push_back(0);
  }
  for (std::size_t i = 0; i < minority; ++i) {
    t.x.push_back({6 + standard_normal(rng), 6 + standard_normal(rng), standard_normal(rng)});
    t.y.push_back(1);
  }
  return t;
}

}  // namespace

TEST_CASE("feature assembly") {
  auto s = tiny_schema();
  CHECK(s.dimension() == 3 + 3 + 3 + 1 + 2);
  CHECK(s.names().size() == s.dimension());

  // Hand-assembled: counts [2, 0, 3], cycleway=striped_lane, lanes missing
  // -> unknown, one key outside the schema, latent [0.5, -1].
  const std::vector<double> expected = {2, 0, 3, 0, 1, 0, 0, 0, 1, 1, 0.5, -1};
  auto v = assemble_features(s, {{"bike_lane_marking", 2}, {"bus", 1}, {"other", 2}},
                             AttributeSet{{{"cycleway", "striped_lane"}, {"surface", "asphalt"}}},
                             std::vector<double>{0.5, -1});
  CHECK(v == expected);

  auto empty = assemble_features(s, {}, {}, std::vector<double>{0, 0});
  CHECK(empty.size() == s.dimension());
  CHECK(std::all_of(empty.begin(), empty.begin() + 3, [](double c) { return c == 0; }));

  auto many_unknown = assemble_features(
      s, {}, AttributeSet{{{"a", "1"}, {"b", "2"}, {"lanes", "7"}}}, std::vector<double>{0, 0});
  CHECK(many_unknown.size() == s.dimension());
  CHECK(many_unknown[8] == 1.0);  // lanes=7 -> unknown slot
  CHECK(many_unknown[9] == 2.0);

  CHECK(code_of([&] { assemble_features(s, {}, {}, std::vector<double>{1}); }) == ErrorCode::kSchema);
  CHECK(code_of([&] { assemble_features(s, {{"greenery", -1}}, {}, std::vector<double>{0, 0}); }) ==
        ErrorCode::kValidation);
  json j = s;
  CHECK(j.get<FeatureSchema>() == s);
}

TEST_CASE("kmeans_smote: no-op when balanced") {
  auto t = toy(10, 10, 1);
  auto r = kmeans_smote(t.x, t.y);
  CHECK(r.x == t.x);
  CHECK(r.y == t.y);
}

TEST_CASE("kmeans_smote: identical minority points") {
  std::vector<Point> x = {{0, 0}, {0.1, 0}, {0, 0.1}, {0.2, 0.2}, {5, 5}, {5, 5}};
  std::vector<int> y = {0, 0, 0, 0, 1, 1};
  auto r = kmeans_smote(x, y, {.k = 2});
  CHECK(r.y.size() == 8);
  for (std::size_t i = r.n_original; i < r.x.size(); ++i) CHECK(r.x[i] == Point{5, 5});
}

TEST_CASE("kmeans_smote: 20 vs 5 balances with convex synthetic points") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = toy(20, 5, seed);
    auto r = kmeans_smote(t.x, t.y, {.seed = seed});
    CHECK(std::count(r.y.begin(), r.y.end(), 0) == 20);
    CHECK(std::count(r.y.begin(), r.y.end(), 1) == 20);

    // Originals preserved as a multiset (and in place).
    auto orig = t.x;
    std::vector<Point> kept(r.x.begin(), r.x.begin() + static_cast<long>(t.x.size()));
    std::sort(orig.begin(), orig.end());
    std::sort(kept.begin(), kept.end());
    CHECK(orig == kept);

    std::vector<Point> minority;
    for (std::size_t i = 0; i < t.x.size(); ++i) {
      if (t.y[i] == 1) minority.push_back(t.x[i]);
    }
    std::size_t convex = 0;
    for (std::size_t i = r.n_original; i < r.x.size(); ++i) {
      bool found = false;
      for (std::size_t a = 0; a < minority.size() && !found; ++a) {
        for (std::size_t b = a; b < minority.size() && !found; ++b) {
          found = on_segment(r.x[i], minority[a], minority[b], 1e-9);
        }
      }
      convex += found;
    }
    CHECK(convex == r.x.size() - r.n_original);
    CHECK(convex == 15);

    auto again = kmeans_smote(t.x, t.y, {.seed = seed});
    CHECK(again.x == r.x);
  }
}

TEST_CASE("kmeans_smote: multi-class and failure") {
  auto t = toy(30, 8, 4);
  for (int i = 0; i < 4; ++i) {
    t.x.push_back({-6.0 + 0.1 * i, 6.0, 0.0});
    t.y.push_back(2);
  }
  auto r = kmeans_smote(t.x, t.y, {.k = 3, .seed = 2});
  for (int c = 0; c < 3; ++c) CHECK(std::count(r.y.begin(), r.y.end(), c) == 30);

  std::vector<Point> x = {{0}, {1}, {2}, {10}};
  std::vector<int> y = {0, 0, 0, 1};
  CHECK(code_of([&] { kmeans_smote(x, y, {.k = 2}); }) == ErrorCode::kCannotOversample);
  CHECK(code_of([&] { kmeans_smote(x, std::vector<int>{0, 0, 0, 0}); }) == ErrorCode::kConfig);
}

TEST_CASE("random forest") {
  // Separable by x0 > 0.
  Rng rng = make_rng(3, "rf");
  std::vector<Point> x;
  std::vector<int> y;
  for (int i = 0; i < 200; ++i) {
    Point p = {uniform01(rng) * 2 - 1, uniform01(rng), uniform01(rng), uniform01(rng)};
    y.push_back(p[0] > 0 ? 4 : 1);
    x.push_back(std::move(p));
  }
  RandomForest f;
  f.fit(x, y, {.trees = 50, .seed = 1});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) correct += f.predict(x[i]) == y[i];
  CHECK(static_cast<double>(correct) / x.size() > 0.95);
  CHECK(f.predict(Point{0.9, 0.5, 0.5, 0.5}) == 4);
  CHECK(f.predict(Point{-0.9, 0.5, 0.5, 0.5}) == 1);

  RandomForest g;
  g.fit(x, y, {.trees = 50, .seed = 1});
  json jf = f, jg = g;
  CHECK(jf == jg);
  RandomForest loaded = jf.get<RandomForest>();
  for (const auto& p : x) CHECK(loaded.predict(p) == f.predict(p));

  RandomForest constant;
  constant.fit(x, std::vector<int>(x.size(), 3), {.trees = 5});
  CHECK(constant.predict(Point{0, 0, 0, 0}) == 3);
  CHECK(code_of([&] { f.predict(Point{1, 2}); }) == ErrorCode::kSchema);
}

TEST_CASE("tag pool and one-vs-rest tags") {
  std::vector<FactorTagList> lists = {make_tags({"Parked cars", "trees"}),
                                      make_tags({"parked car", "Bike Lanes"}),
                                      make_tags({"bike lane", "bus stop"})};
  auto pool = build_tag_pool(lists);
  CHECK(pool.tags == std::vector<std::string>{"bike lane", "bus stop", "parked car", "tree"});
  for (const auto& l : lists) {
    for (const auto& t : l.tags) CHECK(pool.canonical(t).has_value());
  }
  CHECK(pool.canonical("PARKED CARS") == "parked car");
  auto overridden = build_tag_pool(lists, {{"trees", "greenery"}});
  CHECK(overridden.canonical("trees") == "greenery");

  // "separated" is present exactly when x0 > 0; "noise" never.
  Rng rng = make_rng(8, "tags");
  std::vector<Point> x;
  std::vector<FactorTagList> labels;
  for (int i = 0; i < 120; ++i) {
    Point p = {uniform01(rng) * 2 - 1, uniform01(rng)};
    labels.push_back(p[0] > 0 ? make_tags({"separated lanes"}) : make_tags({"mixed traffic"}));
    x.push_back(std::move(p));
  }
  auto tp = build_tag_pool(labels);
  auto model = train_tags(x, labels, tp, {.trees = 30, .seed = 2});
  CHECK(predict_tags(model, Point{0.8, 0.5}).tags == std::vector<std::string>{"separated lane"});
  CHECK(predict_tags(model, Point{-0.8, 0.5}).tags == std::vector<std::string>{"mixed traffic"});

  std::vector<FactorTagList> negative(x.size());
  negative[0] = make_tags({"rare"});
  auto neg_model = train_tags(x, negative, build_tag_pool(negative), {.trees = 30, .seed = 2});
  CHECK(predict_tags(neg_model, Point{0.3, 0.3}).tags.empty());

  CHECK(code_of([&] { train_tags(x, labels, TagPool{}, {}); }) == ErrorCode::kConfig);
  CHECK(code_of([] { predict_tags(TagModel{}, Point{0, 0}); }) == ErrorCode::kConfig);
}

TEST_CASE("full baseline trains, predicts and round-trips") {
  auto s = tiny_schema();
  Rng rng = make_rng(11, "baseline");
  std::vector<Point> x;
  std::vector<RatingTriple> ratings;
  std::vector<FactorTagList> factors;
  for (int i = 0; i < 150; ++i) {
    const bool lane = uniform01(rng) < 0.3;
    x.push_back(assemble_features(
        s, {{"bike_lane_marking", lane ? 2 : 0}, {"greenery", static_cast<int>(uniform_index(rng, 3))}},
        AttributeSet{{{"cycleway", lane ? "striped_lane" : "none"}}},
        std::vector<double>{uniform01(rng), uniform01(rng)}));
    ratings.push_back(lane ? RatingTriple{3, 3, 4} : RatingTriple{2, 1, 2});
    factors.push_back(lane ? make_tags({"bike lane"}) : make_tags({"no bike lane", "traffic"}));
  }
  BaselineConfig cfg;
  cfg.forest.trees = 25;
  auto model = train_baseline(s, x, ratings, factors, cfg);
  auto lane_pred = predict(model, x[std::find(ratings.begin(), ratings.end(), RatingTriple{3, 3, 4}) - ratings.begin()]);
  CHECK(lane_pred.ratings == RatingTriple{3, 3, 4});
  CHECK(lane_pred.factors.tags == std::vector<std::string>{"bike lane"});

  json j = model;
  auto loaded = j.get<BaselineModel>();
  for (const auto& row : x) CHECK(predict(loaded, row).ratings == predict(model, row).ratings);

  cfg.with_tags = false;
  auto rating_only = train_baseline(s, x, ratings, factors, cfg);
  CHECK_FALSE(rating_only.tags.has_value());
  CHECK(predict(rating_only, x[0]).factors.tags.empty());
}
