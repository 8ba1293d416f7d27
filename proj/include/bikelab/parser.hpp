#pragma once
// Parses generated or rendered assessment text in any of the three output
// formats into factors and a rating triple on the 1-4 scale.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bikelab/core.hpp"

namespace bikelab::parser {

struct Correction {
  std::string field;  // "safety" | "comfort" | "willingness"
  double raw_value = 0.0;
  int corrected_value = 0;

  bool operator==(const Correction&) const = default;
};

struct ParsedOutput {
  FactorTagList factors;
  RatingTriple ratings;
  std::vector<Correction> corrections;
  std::optional<std::string> reasoning_text;
  bool has_factors_line = false;
};

void to_json(json& j, const ParsedOutput& p);

/// Throws Error(kUnparseableOutput) without a "Ratings:" line and
/// Error(kIncompleteRatings) when any of comfortable/safe/overall is missing.
/// Values round half-up, then clamp to [1,4]; each change is recorded.
ParsedOutput parse(std::string_view text);

/// "Ratings: comfortable: X, safe: Y, overall: Z"
std::string render_ratings_line(const RatingTriple& r);
/// "Factors: [a, b]"
std::string render_factors_line(const FactorTagList& f);

}  // namespace bikelab::parser
