#pragma once
// Shared domain types for the bikeability pipeline and their JSON-lines
// encodings. Every persisted line carries "v":"v1".

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bikelab/error.hpp"

namespace bikelab {

using json = nlohmann::json;

inline constexpr std::string_view kSchemaVersion = "v1";

// Ordinals are part of the on-disk format. Append only.
enum class InfrastructureType : int {
  kNoBikeLanes = 0,
  kRoadwayShoulders = 1,
  kOffStreetPaths = 2,
  kSharedLanesSharrows = 3,
  kSidewalks = 4,
  kStripedBikeLanes = 5,
  kBufferedBikeLanes = 6,
  kProtectedBikeLanes = 7,
};
inline constexpr int kInfrastructureTypeCount = 8;

const std::array<InfrastructureType, kInfrastructureTypeCount>& all_infrastructure_types();
std::string_view to_string(InfrastructureType t);
InfrastructureType infrastructure_type_from_string(std::string_view s);

enum class Persona : int { kSF = 0, kEC = 1, kIBC = 2, kNWNH = 3 };
inline constexpr int kPersonaCount = 4;

const std::array<Persona, kPersonaCount>& all_personas();
std::string_view to_string(Persona p);
Persona persona_from_string(std::string_view s);
/// Long display name, e.g. "Interested but Concerned".
std::string_view persona_display_name(Persona p);

enum class ImageSource : int { kStreetview = 0, kAugmented = 1 };
std::string_view to_string(ImageSource s);
ImageSource image_source_from_string(std::string_view s);

enum class RatingDimension : int { kSafety = 0, kComfort = 1, kWillingness = 2 };
std::string_view to_string(RatingDimension d);
RatingDimension rating_dimension_from_string(std::string_view s);

struct ComfortProfile {
  std::string participant_id;
  std::map<InfrastructureType, int> ratings;

  bool operator==(const ComfortProfile&) const = default;
};

struct ImageRef {
  std::string image_id;
  ImageSource source = ImageSource::kStreetview;
  std::optional<std::string> parent_id;
  std::string uri;

  bool operator==(const ImageRef&) const = default;
};

struct AttributeSet {
  std::vector<std::pair<std::string, std::string>> attributes;

  std::optional<std::string> get(std::string_view key) const;
  bool operator==(const AttributeSet&) const = default;
};

struct RatingTriple {
  int safety = 1;
  int comfort = 1;
  int willingness = 1;

  int get(RatingDimension d) const;
  void set(RatingDimension d, int value);
  bool operator==(const RatingTriple&) const = default;
};

/// Free-text factor tags. Construct through make_tags() to get the
/// case-insensitive dedup (first casing wins).
struct FactorTagList {
  std::vector<std::string> tags;

  bool operator==(const FactorTagList&) const = default;
};

FactorTagList make_tags(const std::vector<std::string>& raw);
/// Lowercased, whitespace-trimmed key used for case-insensitive comparison.
std::string tag_key(std::string_view tag);

struct SegmentAssessment {
  std::string participant_id;
  ImageRef image_ref;
  RatingTriple ratings;
  FactorTagList factors;
  std::optional<std::string> free_text;
  std::int64_t timestamp = 0;

  bool operator==(const SegmentAssessment&) const = default;
};

struct AssessmentText {
  std::string text;
  int word_count = 0;

  bool operator==(const AssessmentText&) const = default;
};

AssessmentText make_assessment_text(std::string text);
int count_words(std::string_view text);

// ---------------------------------------------------------------------------
// Validation. Violations are data, never exceptions.

struct Violation {
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
  void add(std::string path, std::string message) {
    violations.push_back({std::move(path), std::move(message)});
  }
  void merge(const ValidationReport& other, std::string_view prefix);
  std::string summary() const;
};

ValidationReport validate(const RatingTriple& r);
ValidationReport validate(const ComfortProfile& p);
ValidationReport validate(const ImageRef& ref);
ValidationReport validate(const AttributeSet& a);
ValidationReport validate(const FactorTagList& f);
ValidationReport validate(const SegmentAssessment& a);
ValidationReport validate(const AssessmentText& t);

/// Validates a JSON record whose "kind" is named explicitly (CLI entry point).
/// Structural decode failures are reported as a violation at path "$".
ValidationReport validate_json(std::string_view kind, const json& record);

// ---------------------------------------------------------------------------
// JSON encoding. from_json throws ParseError on unknown enum values or
// missing fields; range invariants are left to validate().

void to_json(json& j, Persona p);
void from_json(const json& j, Persona& p);
void to_json(json& j, const ComfortProfile& p);
void from_json(const json& j, ComfortProfile& p);
void to_json(json& j, const ImageRef& r);
void from_json(const json& j, ImageRef& r);
void to_json(json& j, const AttributeSet& a);
void from_json(const json& j, AttributeSet& a);
void to_json(json& j, const RatingTriple& r);
void from_json(const json& j, RatingTriple& r);
void to_json(json& j, const FactorTagList& f);
void from_json(const json& j, FactorTagList& f);
void to_json(json& j, const SegmentAssessment& a);
void from_json(const json& j, SegmentAssessment& a);
void to_json(json& j, const AssessmentText& t);
void from_json(const json& j, AssessmentText& t);

/// {"persona":"SF"}
json persona_record(Persona p);
Persona persona_from_record(const json& j);

/// Parses one JSON document, mapping parser failures to ParseError with the
/// byte offset.
json parse_json(std::string_view text);

/// Record form of a value: objects as-is, list-shaped types wrapped as
/// {"value": [...]}, personas as {"persona": "SF"}.
template <typename T>
json to_record(const T& record) {
  json j = record;
  if (!j.is_object()) j = json{{"value", std::move(j)}};
  return j;
}
inline json to_record(Persona p) { return persona_record(p); }

template <typename T>
T from_record(const json& j) {
  try {
    if constexpr (std::is_same_v<T, Persona>) {
      return persona_from_record(j);
    } else if constexpr (std::is_same_v<T, FactorTagList> || std::is_same_v<T, AttributeSet>) {
      return (j.is_object() && j.contains("value") ? j.at("value") : j).template get<T>();
    } else {
      return j.template get<T>();
    }
  } catch (const ParseError&) {
    throw;
  } catch (const json::exception& e) {
    throw ParseError(e.what(), 0);
  }
}

/// Serializes a record as one JSON line with "v":"v1" injected.
template <typename T>
std::string serialize(const T& record) {
  json j = to_record(record);
  j["v"] = kSchemaVersion;
  return j.dump();
}

template <typename T>
T deserialize(std::string_view line) {
  return from_record<T>(parse_json(line));
}

}  // namespace bikelab
