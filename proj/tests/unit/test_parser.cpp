#include <doctest.h>

#include <cstdio>

#include "bikelab/parser.hpp"
#include "bikelab/rng.hpp"

using namespace bikelab;
using parser::parse;

namespace {

ErrorCode code_of(std::string_view text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected parse failure");
  return ErrorCode::kParse;
}

}  // namespace

TEST_CASE("appendix format maps comfortable/safe/overall") {
  auto out = parse("Factors: [narrow lane, parked cars]\nRatings: comfortable: 2, safe: 1, overall: 2");
  CHECK(out.factors.tags == std::vector<std::string>{"narrow lane", "parked cars"});
  CHECK(out.ratings.safety == 1);
  CHECK(out.ratings.comfort == 2);
  CHECK(out.ratings.willingness == 2);
  CHECK(out.corrections.empty());
  CHECK_FALSE(out.reasoning_text.has_value());
}

TEST_CASE("out-of-range values clamp to both bounds with corrections") {
  auto out = parse("Ratings: comfortable: 5, safe: 0, overall: 3");
  CHECK(out.ratings == RatingTriple{1, 4, 3});
  REQUIRE(out.corrections.size() == 2);
  CHECK(out.corrections[0] == parser::Correction{"safety", 0.0, 1});
  CHECK(out.corrections[1] == parser::Correction{"comfort", 5.0, 4});
}

TEST_CASE("non-integers round half-up before clamping") {
  auto out = parse("Ratings: comfortable: 2.6, safe: 2.5, overall: 7");
  CHECK(out.ratings.comfort == 3);
  CHECK(out.ratings.safety == 3);
  CHECK(out.ratings.willingness == 4);
  CHECK(out.corrections.size() == 3);
  auto low = parse("Ratings: comfortable: 1.49, safe: 0.5, overall: -2");
  CHECK(low.ratings == RatingTriple{1, 1, 1});
}

TEST_CASE("type 1 structure yields reasoning, factors and ratings") {
  std::string text =
      "The lane is painted but narrow, and parked cars crowd it.\n"
      "I would ride here only cautiously.\n\n"
      "STRUCTURED OUTPUT:\n"
      "Factors: [painted bike lane, parked cars]\n"
      "Ratings: comfortable: 2, safe: 2, overall: 3";
  auto out = parse(text);
  REQUIRE(out.reasoning_text.has_value());
  CHECK(out.reasoning_text->rfind("The lane is painted", 0) == 0);
  CHECK(out.reasoning_text->find("STRUCTURED") == std::string::npos);
  CHECK(out.factors.tags.size() == 2);
  CHECK(out.ratings == RatingTriple{2, 2, 3});
}

TEST_CASE("last ratings line wins") {
  auto out = parse(
      "Ratings: comfortable: 1, safe: 1, overall: 1\nOn reflection:\n"
      "Ratings: comfortable: 3, safe: 4, overall: 2");
  CHECK(out.ratings == RatingTriple{4, 3, 2});
}

TEST_CASE("error paths") {
  CHECK(code_of("I like this street.") == ErrorCode::kUnparseableOutput);
  CHECK(code_of("") == ErrorCode::kUnparseableOutput);
  CHECK(code_of("Ratings: comfortable: 2, overall: 3") == ErrorCode::kIncompleteRatings);
  CHECK(code_of("Ratings: comfortable: X, safe: Y, overall: Z") == ErrorCode::kIncompleteRatings);
}

TEST_CASE("factor list tolerance") {
  CHECK(parse("Factors: []\nRatings: comfortable: 1, safe: 1, overall: 1").factors.tags.empty());
  auto quoted = parse("Factors: [\"bus stop\", 'Bus Stop', trees ]\nRatings: comfortable: 1, "
                      "safe: 1, overall: 1");
  CHECK(quoted.factors.tags == std::vector<std::string>{"bus stop", "trees"});
  auto bare = parse("factors: a, b\nratings: Comfortable: 2, Safe: 3, Overall: 4");
  CHECK(bare.factors.tags == std::vector<std::string>{"a", "b"});
  CHECK(bare.ratings == RatingTriple{3, 2, 4});
}

TEST_CASE("re-parsing a rendered parse result needs no corrections") {
  Rng rng = make_rng(9, "parser-idempotence");
  for (int i = 0; i < 500; ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "Ratings: comfortable: %.2f, safe: %.2f, overall: %.2f",
                  -3 + 10 * uniform01(rng), -3 + 10 * uniform01(rng), -3 + 10 * uniform01(rng));
    auto first = parse(buf);
    auto second = parse(parser::render_factors_line(first.factors) + "\n" +
                        parser::render_ratings_line(first.ratings));
    CHECK(second.corrections.empty());
    CHECK(second.ratings == first.ratings);
  }
}

TEST_CASE("parser never emits a triple outside [1,4]") {
  Rng rng = make_rng(10, "parser-range");
  for (int i = 0; i < 2000; ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "Ratings: comfortable: %d, safe: %.3f, overall: %d",
                  static_cast<int>(uniform_index(rng, 200)) - 100, -50 + 100 * uniform01(rng),
                  static_cast<int>(uniform_index(rng, 9)));
    auto out = parse(buf);
    for (int v : {out.ratings.safety, out.ratings.comfort, out.ratings.willingness}) {
      CHECK(v >= 1);
      CHECK(v <= 4);
    }
  }
}
