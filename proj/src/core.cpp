#include "bikelab/core.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_set>

namespace bikelab {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kParse: return "parse-error";
    case ErrorCode::kInvalidProfile: return "invalid-profile";
    case ErrorCode::kDegenerateInput: return "degenerate-input";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kConsistency: return "consistency-error";
    case ErrorCode::kUnparseableOutput: return "unparseable-output";
    case ErrorCode::kIncompleteRatings: return "incomplete-ratings";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kNumeric: return "numeric-error";
    case ErrorCode::kAlignment: return "alignment-error";
    case ErrorCode::kBackend: return "backend-error";
    case ErrorCode::kSchema: return "schema-error";
    case ErrorCode::kCannotOversample: return "cannot-oversample";
    case ErrorCode::kConfig: return "config-error";
    case ErrorCode::kConstraint: return "constraint-error";
    case ErrorCode::kValidation: return "validation-error";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kDuplicateAnnotator: return "duplicate-annotator";
    case ErrorCode::kIo: return "io-error";
    case ErrorCode::kTrainingAborted: return "training-aborted";
  }
  return "unknown";
}

namespace {

constexpr std::array<std::string_view, kInfrastructureTypeCount> kInfraNames = {
    "no_bike_lanes",         "roadway_shoulders",   "off_street_paths",
    "shared_lanes_sharrows", "sidewalks",           "striped_bike_lanes",
    "buffered_bike_lanes",   "protected_bike_lanes"};

constexpr std::array<std::string_view, kPersonaCount> kPersonaCodes = {"SF", "EC", "IBC", "NWNH"};
constexpr std::array<std::string_view, kPersonaCount> kPersonaNames = {
    "Strong and Fearless", "Enthused and Confident", "Interested but Concerned", "No Way No How"};

template <typename Enum, std::size_t N>
Enum lookup(const std::array<std::string_view, N>& names, std::string_view s,
            std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw ParseError("unknown " + std::string(what) + " value \"" + std::string(s) + "\"", 0);
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(std::string("missing field \"") + name + "\"", 0);
  return *it;
}

}  // namespace

const std::array<InfrastructureType, kInfrastructureTypeCount>& all_infrastructure_types() {
  static const std::array<InfrastructureType, kInfrastructureTypeCount> kAll = [] {
    std::array<InfrastructureType, kInfrastructureTypeCount> a{};
    for (int i = 0; i < kInfrastructureTypeCount; ++i) a[i] = static_cast<InfrastructureType>(i);
    return a;
  }();
  return kAll;
}

std::string_view to_string(InfrastructureType t) { return kInfraNames.at(static_cast<int>(t)); }

InfrastructureType infrastructure_type_from_string(std::string_view s) {
  return lookup<InfrastructureType>(kInfraNames, s, "infrastructure type");
}

const std::array<Persona, kPersonaCount>& all_personas() {
  static const std::array<Persona, kPersonaCount> kAll = {Persona::kSF, Persona::kEC,
                                                          Persona::kIBC, Persona::kNWNH};
  return kAll;
}

std::string_view to_string(Persona p) { return kPersonaCodes.at(static_cast<int>(p)); }
Persona persona_from_string(std::string_view s) {
  return lookup<Persona>(kPersonaCodes, s, "persona");
}
std::string_view persona_display_name(Persona p) { return kPersonaNames.at(static_cast<int>(p)); }

std::string_view to_string(ImageSource s) {
  return s == ImageSource::kStreetview ? "streetview" : "augmented";
}
ImageSource image_source_from_string(std::string_view s) {
  static constexpr std::array<std::string_view, 2> kNames = {"streetview", "augmented"};
  return lookup<ImageSource>(kNames, s, "image source");
}

std::string_view to_string(RatingDimension d) {
  static constexpr std::array<std::string_view, 3> kNames = {"safety", "comfort", "willingness"};
  return kNames.at(static_cast<int>(d));
}
RatingDimension rating_dimension_from_string(std::string_view s) {
  static constexpr std::array<std::string_view, 3> kNames = {"safety", "comfort", "willingness"};
  return lookup<RatingDimension>(kNames, s, "rating dimension");
}

std::optional<std::string> AttributeSet::get(std::string_view key) const {
  for (const auto& [k, v] : attributes) {
    if (k == key) return v;
  }
  return std::nullopt;
}

int RatingTriple::get(RatingDimension d) const {
  switch (d) {
    case RatingDimension::kSafety: return safety;
    case RatingDimension::kComfort: return comfort;
    case RatingDimension::kWillingness: return willingness;
  }
  return safety;
}

void RatingTriple::set(RatingDimension d, int value) {
  switch (d) {
    case RatingDimension::kSafety: safety = value; break;
    case RatingDimension::kComfort: comfort = value; break;
    case RatingDimension::kWillingness: willingness = value; break;
  }
}

std::string tag_key(std::string_view tag) {
  std::string k = trim(tag);
  std::transform(k.begin(), k.end(), k.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return k;
}

FactorTagList make_tags(const std::vector<std::string>& raw) {
  FactorTagList out;
  std::unordered_set<std::string> seen;
  for (const auto& t : raw) {
    std::string trimmed = trim(t);
    if (trimmed.empty()) continue;
    if (seen.insert(tag_key(trimmed)).second) out.tags.push_back(std::move(trimmed));
  }
  return out;
}

int count_words(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

AssessmentText make_assessment_text(std::string text) {
  AssessmentText t;
  t.word_count = count_words(text);
  t.text = std::move(text);
  return t;
}

// ---------------------------------------------------------------------------

void ValidationReport::merge(const ValidationReport& other, std::string_view prefix) {
  for (const auto& v : other.violations) {
    violations.push_back({std::string(prefix) + "." + v.path, v.message});
  }
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i].path << ": " << violations[i].message;
  }
  return os.str();
}

ValidationReport validate(const RatingTriple& r) {
  ValidationReport rep;
  auto check = [&](const char* name, int v) {
    if (v < 1 || v > 4) rep.add(name, "out of [1,4]: " + std::to_string(v));
  };
  check("safety", r.safety);
  check("comfort", r.comfort);
  check("willingness", r.willingness);
  return rep;
}

ValidationReport validate(const ComfortProfile& p) {
  ValidationReport rep;
  if (p.participant_id.empty()) rep.add("participant_id", "empty");
  for (auto t : all_infrastructure_types()) {
    auto it = p.ratings.find(t);
    std::string path = "ratings." + std::string(to_string(t));
    if (it == p.ratings.end()) {
      rep.add(path, "missing infrastructure type");
    } else if (it->second < 1 || it->second > 5) {
      rep.add(path, "out of [1,5]: " + std::to_string(it->second));
    }
  }
  return rep;
}

ValidationReport validate(const ImageRef& ref) {
  ValidationReport rep;
  if (ref.image_id.empty()) rep.add("image_id", "empty");
  const bool augmented = ref.source == ImageSource::kAugmented;
  if (augmented && !ref.parent_id) rep.add("parent_id", "augmented image without parent");
  if (!augmented && ref.parent_id) rep.add("parent_id", "street-view image with parent");
  if (ref.parent_id && ref.parent_id->empty()) rep.add("parent_id", "empty");
  return rep;
}

ValidationReport validate(const AttributeSet& a) {
  ValidationReport rep;
  std::unordered_set<std::string> keys;
  for (std::size_t i = 0; i < a.attributes.size(); ++i) {
    const auto& key = a.attributes[i].first;
    if (key.empty()) rep.add("attributes[" + std::to_string(i) + "].key", "empty");
    if (!keys.insert(key).second) {
      rep.add("attributes[" + std::to_string(i) + "].key", "duplicate key \"" + key + "\"");
    }
  }
  return rep;
}

ValidationReport validate(const FactorTagList& f) {
  ValidationReport rep;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < f.tags.size(); ++i) {
    const auto& t = f.tags[i];
    std::string path = "tags[" + std::to_string(i) + "]";
    if (trim(t).empty()) {
      rep.add(path, "empty tag");
      continue;
    }
    if (t.find_first_of(",[]\r\n") != std::string::npos) {
      rep.add(path, "tag contains a list delimiter");
    }
    if (!seen.insert(tag_key(t)).second) rep.add(path, "duplicate tag \"" + t + "\"");
  }
  return rep;
}

ValidationReport validate(const SegmentAssessment& a) {
  ValidationReport rep;
  if (a.participant_id.empty()) rep.add("participant_id", "empty");
  rep.merge(validate(a.image_ref), "image_ref");
  rep.merge(validate(a.ratings), "ratings");
  rep.merge(validate(a.factors), "factors");
  return rep;
}

ValidationReport validate(const AssessmentText& t) {
  ValidationReport rep;
  if (t.text.empty()) rep.add("text", "empty");
  if (t.word_count != count_words(t.text)) {
    rep.add("word_count", "does not match token count " + std::to_string(count_words(t.text)));
  }
  return rep;
}

ValidationReport validate_json(std::string_view kind, const json& record) {
  auto run = [&](auto tag) {
    using T = decltype(tag);
    try {
      return validate(record.get<T>());
    } catch (const std::exception& e) {
      ValidationReport rep;
      rep.add("$", e.what());
      return rep;
    }
  };
  if (kind == "RatingTriple") return run(RatingTriple{});
  if (kind == "ComfortProfile") return run(ComfortProfile{});
  if (kind == "ImageRef") return run(ImageRef{});
  if (kind == "AttributeSet") return run(AttributeSet{});
  if (kind == "FactorTagList") return run(FactorTagList{});
  if (kind == "SegmentAssessment") return run(SegmentAssessment{});
  if (kind == "AssessmentText") return run(AssessmentText{});
  ValidationReport rep;
  rep.add("$", "unknown record kind \"" + std::string(kind) + "\"");
  return rep;
}

// ---------------------------------------------------------------------------

json parse_json(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), e.byte > 0 ? e.byte - 1 : 0);
  }
}

json persona_record(Persona p) { return json{{"persona", to_string(p)}}; }

Persona persona_from_record(const json& j) {
  return persona_from_string(field(j, "persona").get<std::string>());
}

void to_json(json& j, Persona p) { j = to_string(p); }
void from_json(const json& j, Persona& p) { p = persona_from_string(j.get<std::string>()); }

void to_json(json& j, const ComfortProfile& p) {
  json ratings = json::object();
  for (const auto& [t, v] : p.ratings) ratings[std::string(to_string(t))] = v;
  j = json{{"participant_id", p.participant_id}, {"ratings", ratings}};
}

void from_json(const json& j, ComfortProfile& p) {
  p.participant_id = field(j, "participant_id").get<std::string>();
  p.ratings.clear();
  for (const auto& [k, v] : field(j, "ratings").items()) {
    p.ratings[infrastructure_type_from_string(k)] = v.get<int>();
  }
}

void to_json(json& j, const ImageRef& r) {
  j = json{{"image_id", r.image_id}, {"source", to_string(r.source)}, {"uri", r.uri}};
  if (r.parent_id) j["parent_id"] = *r.parent_id;
}

void from_json(const json& j, ImageRef& r) {
  r.image_id = field(j, "image_id").get<std::string>();
  r.source = image_source_from_string(field(j, "source").get<std::string>());
  r.uri = j.value("uri", std::string());
  auto it = j.find("parent_id");
  if (it != j.end() && !it->is_null()) {
    r.parent_id = it->get<std::string>();
  } else {
    r.parent_id.reset();
  }
}

void to_json(json& j, const AttributeSet& a) {
  j = json::array();
  for (const auto& [k, v] : a.attributes) j.push_back(json{{"key", k}, {"value", v}});
}

void from_json(const json& j, AttributeSet& a) {
  a.attributes.clear();
  if (j.is_object()) {
    // Also accept the compact {"key": "value"} form.
    for (const auto& [k, v] : j.items()) {
      a.attributes.emplace_back(k, v.is_string() ? v.get<std::string>() : v.dump());
    }
    return;
  }
  for (const auto& e : j) {
    a.attributes.emplace_back(field(e, "key").get<std::string>(),
                              field(e, "value").get<std::string>());
  }
}

void to_json(json& j, const RatingTriple& r) {
  j = json{{"safety", r.safety}, {"comfort", r.comfort}, {"willingness", r.willingness}};
}

void from_json(const json& j, RatingTriple& r) {
  r.safety = field(j, "safety").get<int>();
  r.comfort = field(j, "comfort").get<int>();
  r.willingness = field(j, "willingness").get<int>();
}

void to_json(json& j, const FactorTagList& f) { j = f.tags; }
void from_json(const json& j, FactorTagList& f) { f.tags = j.get<std::vector<std::string>>(); }

void to_json(json& j, const SegmentAssessment& a) {
  j = json{{"participant_id", a.participant_id},
           {"image_ref", a.image_ref},
           {"ratings", a.ratings},
           {"factors", a.factors},
           {"timestamp", a.timestamp}};
  if (a.free_text) j["free_text"] = *a.free_text;
}

void from_json(const json& j, SegmentAssessment& a) {
  a.participant_id = field(j, "participant_id").get<std::string>();
  a.image_ref = field(j, "image_ref").get<ImageRef>();
  a.ratings = field(j, "ratings").get<RatingTriple>();
  a.factors = j.contains("factors") ? j.at("factors").get<FactorTagList>() : FactorTagList{};
  auto it = j.find("free_text");
  if (it != j.end() && !it->is_null()) {
    a.free_text = it->get<std::string>();
  } else {
    a.free_text.reset();
  }
  a.timestamp = j.value("timestamp", std::int64_t{0});
}

void to_json(json& j, const AssessmentText& t) {
  j = json{{"text", t.text}, {"word_count", t.word_count}};
}

void from_json(const json& j, AssessmentText& t) {
  t.text = field(j, "text").get<std::string>();
  t.word_count = field(j, "word_count").get<int>();
}

}  // namespace bikelab
