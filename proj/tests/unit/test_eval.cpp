#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "bikelab/eval.hpp"
#include "bikelab/io.hpp"
#include "bikelab/rng.hpp"

using namespace bikelab;
using namespace bikelab::eval;

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

RatingTriple random_triple(Rng& rng) {
  return {1 + static_cast<int>(uniform_index(rng, 4)), 1 + static_cast<int>(uniform_index(rng, 4)),
          1 + static_cast<int>(uniform_index(rng, 4))};
}

/// Straight-line reference: one pass per metric, textbook Pearson in long
/// double.
struct Reference {
  double mae, em, w1;
  std::optional<double> pearson;
};

Reference brute_force(const std::vector<RatingTriple>& p, const std::vector<RatingTriple>& g) {
  auto val = [](const RatingTriple& t, int d) {
    return d == 0 ? t.safety : d == 1 ? t.comfort : t.willingness;
  };
  Reference r{0, 0, 0, std::nullopt};
  long double corr_sum = 0;
  int defined = 0;
  for (int d = 0; d < 3; ++d) {
    long double abs = 0, exact = 0, within = 0, sx = 0, sy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      int diff = val(p[i], d) - val(g[i], d);
      if (diff < 0) diff = -diff;
      abs += diff;
      if (diff == 0) exact += 1;
      if (diff <= 1) within += 1;
      sx += val(p[i], d);
      sy += val(g[i], d);
    }
    const long double n = p.size();
    r.mae += static_cast<double>(abs / n / 3);
    r.em += static_cast<double>(exact / n / 3);
    r.w1 += static_cast<double>(within / n / 3);
    const long double mx = sx / n, my = sy / n;
    long double cov = 0, vx = 0, vy = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      cov += (val(p[i], d) - mx) * (val(g[i], d) - my);
      vx += (val(p[i], d) - mx) * (val(p[i], d) - mx);
      vy += (val(g[i], d) - my) * (val(g[i], d) - my);
    }
    if (vx > 0 && vy > 0) {
      corr_sum += cov / std::sqrt(vx * vy);
      ++defined;
    }
  }
  if (defined) r.pearson = static_cast<double>(corr_sum / defined);
  return r;
}

/// Largest one-to-one matching with every pair >= threshold (exhaustive).
std::size_t max_matching(const std::vector<std::vector<double>>& s, double threshold) {
  const std::size_t n = s.size(), m = n ? s[0].size() : 0;
  std::size_t best = 0;
  std::vector<int> assign(n, -1);
  std::function<void(std::size_t, std::size_t, std::vector<bool>&)> go =
      [&](std::size_t i, std::size_t count, std::vector<bool>& used) {
        if (i == n) {
          best = std::max(best, count);
          return;
        }
        go(i + 1, count, used);
        for (std::size_t j = 0; j < m; ++j) {
          if (!used[j] && s[i][j] >= threshold) {
            used[j] = true;
            go(i + 1, count + 1, used);
            used[j] = false;
          }
        }
      };
  std::vector<bool> used(m, false);
  go(0, 0, used);
  return best;
}

class ScriptedJudge final : public JudgeClient {
 public:
  explicit ScriptedJudge(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  std::string complete(const std::string&) override {
    return replies_[std::min(calls_++, replies_.size() - 1)];
  }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::string> replies_;
  std::size_t calls_ = 0;
};

JudgeContext context() {
  JudgeContext ctx;
  ctx.persona = Persona::kIBC;
  ctx.image_ref = {"seg-0007", ImageSource::kStreetview, std::nullopt, "streetview://seg-0007"};
  ctx.attributes = AttributeSet{{{"cycleway", "striped_lane"}, {"highway", "secondary"}}};
  ctx.ground_truth.participant_id = "p1";
  ctx.ground_truth.image_ref = ctx.image_ref;
  ctx.ground_truth.ratings = {2, 2, 3};
  ctx.ground_truth.factors = make_tags({"painted bike lane", "parked cars"});
  return ctx;
}

const char* kExplanation =
    "A painted bike lane runs along the curb with no physical buffer. Parked cars line the "
    "street. I would ride here only if I had no alternative.\n\nSTRUCTURED OUTPUT:\n"
    "Factors: [painted bike lane, parked cars]\nRatings: comfortable: 2, safe: 2, overall: 2";

}  // namespace

TEST_CASE("rating metric examples") {
  std::vector<RatingTriple> gt = {{1, 2, 3}, {2, 3, 4}, {4, 1, 2}, {3, 3, 1}};
  auto same = rating_metrics(gt, gt);
  CHECK(same.average.mae == 0.0);
  CHECK(same.average.em == 1.0);
  CHECK(same.average.w1 == 1.0);
  CHECK(same.average.pearson == doctest::Approx(1.0));

  std::vector<RatingTriple> constant = {{2, 2, 2}, {2, 2, 2}, {2, 2, 2}};
  auto c = rating_metrics(constant, constant);
  CHECK(c.average.em == 1.0);
  CHECK_FALSE(c.average.pearson.has_value());
  CHECK(c.warnings.size() == 3);

  std::vector<RatingTriple> off;
  for (const auto& t : gt) {
    off.push_back({t.safety < 4 ? t.safety + 1 : 3, t.comfort < 4 ? t.comfort + 1 : 3,
                   t.willingness < 4 ? t.willingness + 1 : 3});
  }
  auto o = rating_metrics(off, gt);
  CHECK(o.average.mae == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(o.average.em == 0.0);
  CHECK(o.average.w1 == 1.0);

  CHECK(code_of([&] { rating_metrics(off, constant); }) == ErrorCode::kAlignment);
  CHECK(code_of([] { rating_metrics({}, {}); }) == ErrorCode::kAlignment);
}

TEST_CASE("rating metrics equal the brute-force reference") {
  Rng rng = make_rng(200, "metric-oracle");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RatingTriple> p, g;
    for (int i = 0; i < 200; ++i) {
      g.push_back(random_triple(rng));
      auto t = g.back();
      if (uniform01(rng) < 0.6) t = random_triple(rng);
      p.push_back(t);
    }
    auto m = rating_metrics(p, g);
    auto ref = brute_force(p, g);
    CHECK(std::abs(m.average.mae - ref.mae) < 1e-9);
    CHECK(std::abs(m.average.em - ref.em) < 1e-9);
    CHECK(std::abs(m.average.w1 - ref.w1) < 1e-9);
    REQUIRE(m.average.pearson.has_value() == ref.pearson.has_value());
    if (ref.pearson) CHECK(std::abs(*m.average.pearson - *ref.pearson) < 1e-9);
  }
}

TEST_CASE("EM never exceeds W1 and em = 1 implies mae = 0") {
  Rng rng = make_rng(10000, "em-w1");
  int violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 1 + uniform_index(rng, 12);
    std::vector<RatingTriple> p, g;
    for (std::size_t k = 0; k < n; ++k) {
      p.push_back(random_triple(rng));
      g.push_back(uniform01(rng) < 0.3 ? p.back() : random_triple(rng));
    }
    auto m = rating_metrics(p, g);
    for (const auto& d : m.per_dimension) {
      violations += d.em > d.w1;
      if (d.em == 1.0) violations += d.mae != 0.0;
    }
    violations += m.average.em > m.average.w1;
  }
  CHECK(violations == 0);
}

TEST_CASE("MAE is invariant to consistent reordering") {
  Rng rng = make_rng(1, "mae-perm");
  std::vector<RatingTriple> p, g;
  for (int i = 0; i < 50; ++i) {
    p.push_back(random_triple(rng));
    g.push_back(random_triple(rng));
  }
  auto base = rating_metrics(p, g).average.mae;
  std::vector<std::size_t> idx(50);
  std::iota(idx.begin(), idx.end(), 0);
  shuffle(idx.begin(), idx.end(), rng);
  std::vector<RatingTriple> p2, g2;
  for (auto i : idx) {
    p2.push_back(p[i]);
    g2.push_back(g[i]);
  }
  CHECK(rating_metrics(p2, g2).average.mae == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("greedy matcher: hand-computed cases") {
  std::vector<std::vector<double>> s = {{0.9, 0.2, 0.1}, {0.8, 0.75, 0.3}};
  auto r = greedy_match(s);
  REQUIRE(r.matches.size() == 2);
  CHECK(r.matches[0].pred_index == 0);
  CHECK(r.matches[0].gt_index == 0);
  CHECK(r.matches[1].pred_index == 1);
  CHECK(r.matches[1].gt_index == 1);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.f1 == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(max_matching(s, 0.7) == 2);

  auto low = greedy_match({{0.69, 0.1}, {0.3, 0.5}});
  CHECK(low.matches.empty());
  CHECK(low.precision == 0.0);
  CHECK(low.recall == 0.0);
  CHECK(low.f1 == 0.0);

  // Ties resolve to the lowest (pred, gt) index.
  auto tie = greedy_match({{0.8, 0.8}, {0.8, 0.8}});
  CHECK(tie.matches[0] == Match{0, 0, {}, {}, 0.8});
  CHECK(tie.matches[1] == Match{1, 1, {}, {}, 0.8});
}

TEST_CASE("greedy matcher: threshold is inclusive") {
  CHECK(greedy_match({{0.7}}).matches.size() == 1);
  CHECK(greedy_match({{0.7 + 1e-6}}).matches.size() == 1);
  CHECK(greedy_match({{0.7 - 1e-6}}).matches.empty());
}

TEST_CASE("greedy matcher: empty lists") {
  HashingEmbedder e;
  auto both = greedy_match(FactorTagList{}, FactorTagList{}, e);
  CHECK(both.precision == 1.0);
  CHECK(both.recall == 1.0);
  CHECK(both.f1 == 1.0);
  auto one = greedy_match(make_tags({"trees"}), FactorTagList{}, e);
  CHECK(one.f1 == 0.0);
  auto other = greedy_match(FactorTagList{}, make_tags({"trees"}), e);
  CHECK(other.f1 == 0.0);
  auto identical = greedy_match(make_tags({"bus stop", "narrow lane", "trees"}),
                                make_tags({"bus stop", "narrow lane", "trees"}), e);
  CHECK(identical.precision == 1.0);
  CHECK(identical.recall == 1.0);
  CHECK(identical.f1 == 1.0);
}

TEST_CASE("greedy matcher properties on random matrices") {
  Rng rng = make_rng(77, "greedy-props");
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 6), m = 1 + uniform_index(rng, 6);
    std::vector<std::vector<double>> s(n, std::vector<double>(m));
    for (auto& row : s) {
      for (auto& x : row) x = uniform01(rng);  // distinct with probability 1
    }
    auto r = greedy_match(s);
    CHECK(r.matches.size() <= std::min(n, m));
    CHECK(r.matches.size() <= max_matching(s, 0.7));
    std::set<std::size_t> pi, gi;
    for (const auto& mt : r.matches) {
      CHECK(mt.similarity >= 0.7);
      pi.insert(mt.pred_index);
      gi.insert(mt.gt_index);
    }
    CHECK(pi.size() == r.matches.size());
    CHECK(gi.size() == r.matches.size());

    // Permuting rows and columns permutes the match set.
    std::vector<std::size_t> rp(n), cp(m);
    std::iota(rp.begin(), rp.end(), 0);
    std::iota(cp.begin(), cp.end(), 0);
    shuffle(rp.begin(), rp.end(), rng);
    shuffle(cp.begin(), cp.end(), rng);
    std::vector<std::vector<double>> t(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) t[i][j] = s[rp[i]][cp[j]];
    }
    std::set<std::pair<std::size_t, std::size_t>> a, b;
    for (const auto& mt : r.matches) a.insert({mt.pred_index, mt.gt_index});
    for (const auto& mt : greedy_match(t).matches) b.insert({rp[mt.pred_index], cp[mt.gt_index]});
    CHECK(a == b);
  }
}

TEST_CASE("embedders") {
  HashingEmbedder h;
  auto v = h.embed({"protected bike lane", "protected bike lane", "heavy truck traffic", ""});
  for (const auto& x : v) CHECK(std::abs(cosine(x, x) - 1.0) < 1e-6);
  CHECK(v[0] == v[1]);
  CHECK(cosine(v[0], v[2]) < 0.7);
  CHECK(cosine(h.embed({"bike lane"})[0], h.embed({"bike lanes"})[0]) > 0.5);

  VectorTableEmbedder table(std::map<std::string, std::vector<double>>{{"a", {3, 4}}, {"b", {0, 2}}});
  auto tv = table.embed({"a", "b"});
  CHECK(tv[0][0] == doctest::Approx(0.6));
  CHECK(cosine(tv[0], tv[1]) == doctest::Approx(0.8));
  CHECK(code_of([&] { table.embed({"zzz"}); }) == ErrorCode::kBackend);

  // Embedding failures exclude the instance.
  std::vector<FactorTagList> pred = {make_tags({"a"}), make_tags({"zzz"})};
  std::vector<FactorTagList> gt = {make_tags({"a"}), make_tags({"b"})};
  std::vector<std::string> ids = {"i1", "i2"};
  auto fm = factor_metrics(pred, gt, ids, table);
  CHECK(fm.evaluated == 1);
  CHECK(fm.excluded == std::vector<std::string>{"i2"});
  CHECK(fm.f1 == 1.0);
}

TEST_CASE("judge score normalization") {
  CHECK(normalize_score("3/4") == 0.75);
  CHECK(normalize_score("Coherence: 3 / 4") == 0.75);
  CHECK(normalize_score("Score: 4") == 1.0);
  CHECK(normalize_score("Score: 1") == 0.0);
  CHECK(*normalize_score("Score: 3") == doctest::Approx(2.0 / 3.0));
  CHECK_FALSE(normalize_score("Score: 9").has_value());
  CHECK_FALSE(normalize_score("I cannot say").has_value());
  CHECK_FALSE(normalize_score("5/4").has_value());
}

TEST_CASE("judge retries once, then marks the criterion missing") {
  ScriptedJudge flaky({"hmm", "Score: 4"});
  auto r = judge(kExplanation, context(), flaky);
  CHECK(r.scores[0] == 1.0);  // second reply used
  CHECK(r.transcripts[0].replies.size() == 2);
  CHECK(r.scores[1] == 1.0);
  CHECK(r.transcripts[1].replies.size() == 1);

  ScriptedJudge broken({"no idea"});
  auto m = judge(kExplanation, context(), broken);
  for (const auto& s : m.scores) CHECK_FALSE(s.has_value());
  CHECK(broken.calls() == 6);
  auto summary = summarize(std::vector<JudgeResult>{r, m});
  CHECK(summary.missing[0] == 1);
  CHECK(summary.mean[0] == 1.0);
}

TEST_CASE("judge fixture replay is byte-exact and offline") {
  HeuristicJudgeClient live;
  RecordingJudgeClient recorder(live);
  auto recorded = judge(kExplanation, context(), recorder);
  for (const auto& s : recorded.scores) REQUIRE(s.has_value());

  std::map<std::string, std::string> replies;
  for (const auto& f : recorder.fixtures()) {
    CHECK(f.at("prompt_sha256") == io::sha256_hex(f.at("prompt").get<std::string>()));
    replies[f.at("prompt_sha256")] = f.at("reply");
  }
  FixtureJudgeClient replay(replies);
  auto replayed = judge(kExplanation, context(), replay);
  CHECK(replayed.scores == recorded.scores);
  CHECK(json(replayed).dump() == json(recorded).dump());
  CHECK(code_of([&] { judge("something else", context(), replay); }) == ErrorCode::kNotFound);
}

TEST_CASE("heuristic judge rewards agreement with the reference") {
  HeuristicJudgeClient h;
  auto good = judge(kExplanation, context(), h);
  auto bad = judge(
      "Lovely.\n\nSTRUCTURED OUTPUT:\nFactors: [trees]\nRatings: comfortable: 4, safe: 4, overall: 4",
      context(), h);
  for (int c = 0; c < 3; ++c) CHECK(*good.scores[c] > *bad.scores[c]);
}

TEST_CASE("report arithmetic and layout") {
  CHECK(format_increase(0.580, 0.610) == "+5.2%");
  CHECK(format_increase(0.58, 0.59) == "+1.7%");
  CHECK(format_increase(0.920, 0.950) == "+3.3%");
  CHECK(format_increase(0.5, 0.4) == "-20.0%");

  auto t2 = reference_table2();
  CHECK(render_table2(t2) == io::read_text(std::string(BIKELAB_GOLDEN_DIR) + "/table2_paper.txt"));
  auto t3 = reference_table3();
  CHECK(render_table3(t3, 1, 2) == io::read_text(std::string(BIKELAB_GOLDEN_DIR) + "/table3_paper.txt"));
  auto ab = reference_ablation();
  CHECK(ab.size() == 3);
  CHECK(render_ablation(ab) == io::read_text(std::string(BIKELAB_GOLDEN_DIR) + "/ablation_paper.txt"));

  RatingMetrics rm = rating_metrics(std::vector<RatingTriple>{{1, 2, 3}, {2, 3, 4}, {3, 3, 1}},
                                    std::vector<RatingTriple>{{1, 2, 4}, {2, 4, 4}, {4, 3, 1}});
  FactorMetrics fm{0.5, 0.25, 1.0 / 3.0, 3, {}};
  auto row = table2_row("Ours", rm, fm);
  for (const auto& v : {row.mae, row.em, row.w1, row.corr, row.prec, row.rec, row.f1}) {
    CHECK(v.has_value());
  }
  auto j = table2_json(std::vector<Table2Row>{row});
  CHECK(j[0].size() == 8);
}
