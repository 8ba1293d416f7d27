#include "bikelab/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "bikelab/persona.hpp"

namespace bikelab::synth {

const std::vector<ArchetypeTarget>& persona_archetypes() {
  static const std::vector<ArchetypeTarget> kTargets = {
      {Persona::kIBC, 2.97, 2.73, 0.593},
      {Persona::kEC, 3.45, 1.57, 0.276},
      {Persona::kSF, 3.80, 0.13, 0.082},
      {Persona::kNWNH, 2.02, 0.50, 0.049},
  };
  return kTargets;
}

const ArchetypeTarget& archetype(Persona p) {
  for (const auto& t : persona_archetypes()) {
    if (t.persona == p) return t;
  }
  throw Error(ErrorCode::kConfig, "no archetype for persona");
}

double expected_rating(const ArchetypeTarget& target, InfrastructureType t) {
  const auto& low = persona::low_protection_types();
  const auto& high = persona::high_protection_types();
  if (std::find(low.begin(), low.end(), t) != low.end()) return target.mean - target.gradient / 2;
  if (std::find(high.begin(), high.end(), t) != high.end()) {
    return target.mean + target.gradient / 2;
  }
  return target.mean;
}

namespace {

// Rounds a group's expected total stochastically and spreads it over the
// group's members as evenly as possible; the expectation per member is kept.
void fill_group(ComfortProfile& p, const std::vector<InfrastructureType>& types, double level,
                Rng& rng) {
  const double exact = level * static_cast<double>(types.size());
  auto total = static_cast<int>(std::floor(exact));
  if (uniform01(rng) < exact - total) ++total;
  const int n = static_cast<int>(types.size());
  const int base = total / n;
  int extra = total % n;
  std::vector<int> order(types.size());
  for (int i = 0; i < n; ++i) order[i] = i;
  shuffle(order.begin(), order.end(), rng);
  std::vector<int> values(types.size(), base);
  for (int k = 0; k < extra; ++k) ++values[order[k]];
  for (int i = 0; i < n; ++i) p.ratings[types[i]] = std::clamp(values[i], 1, 5);
}

}  // namespace

ComfortProfile archetype_profile(const ArchetypeTarget& target, std::string participant_id,
                                 Rng& rng) {
  using IT = InfrastructureType;
  ComfortProfile p;
  p.participant_id = std::move(participant_id);
  const double low = target.mean - target.gradient / 2;
  const double high = target.mean + target.gradient / 2;
  fill_group(p, persona::low_protection_types(), low, rng);
  fill_group(p, persona::medium_protection_types(), target.mean, rng);
  fill_group(p, persona::high_protection_types(), high, rng);
  fill_group(p, {IT::kSidewalks}, target.mean, rng);
  return p;
}

std::vector<LabeledProfile> archetype_population(std::size_t per_persona, std::uint64_t seed) {
  Rng rng = make_rng(seed, "archetype-population");
  std::vector<LabeledProfile> out;
  out.reserve(per_persona * 4);
  for (const auto& target : persona_archetypes()) {
    for (std::size_t i = 0; i < per_persona; ++i) {
      std::string id = "p" + std::string(to_string(target.persona)) + "-" + std::to_string(i);
      out.push_back({archetype_profile(target, std::move(id), rng), target.persona});
    }
  }
  return out;
}

std::vector<LabeledProfile> weighted_population(std::size_t n, std::uint64_t seed,
                                                std::string_view id_prefix) {
  Rng rng = make_rng(seed, "weighted-population");
  const auto& targets = persona_archetypes();
  std::vector<LabeledProfile> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = uniform01(rng);
    const ArchetypeTarget* pick = &targets.back();
    double acc = 0.0;
    for (const auto& t : targets) {
      acc += t.share;
      if (u < acc) {
        pick = &t;
        break;
      }
    }
    char id[32];
    std::snprintf(id, sizeof id, "%.*s%04zu", static_cast<int>(id_prefix.size()),
                  id_prefix.data(), i + 1);
    out.push_back({archetype_profile(*pick, id, rng), pick->persona});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 5> kFacilities = {"none", "shared_lane", "striped_lane",
                                                         "buffered_lane", "protected_lane"};

int facility_level(std::string_view f) {
  if (f == "none" || f == "shared_lane") return 0;
  if (f == "striped_lane") return 1;
  return 2;
}

std::string facility_phrase(std::string_view f) {
  if (f == "none") return "no bike facility";
  if (f == "shared_lane") return "a shared lane with sharrows";
  if (f == "striped_lane") return "a painted bike lane";
  if (f == "buffered_lane") return "a buffered bike lane";
  return "a physically protected bike lane";
}

}  // namespace

std::string_view facility_for_level(int level, Rng& rng) {
  switch (level) {
    case 0: return kFacilities[uniform_index(rng, 2)];
    case 1: return kFacilities[2];
    default: return kFacilities[3 + uniform_index(rng, 2)];
  }
}

int protection_level(const AttributeSet& attrs) {
  auto f = attrs.get("cycleway");
  return f ? facility_level(*f) : 0;
}

void to_json(json& j, const Segment& s) {
  j = json{{"v", kSchemaVersion}, {"image", s.image}, {"attributes", s.attributes}};
}

void from_json(const json& j, Segment& s) {
  j.at("image").get_to(s.image);
  s.attributes = j.value("attributes", json::array()).get<AttributeSet>();
}

std::vector<Segment> segment_registry(std::size_t n_base, std::size_t n_augmented,
                                      std::uint64_t seed) {
  Rng rng = make_rng(seed, "segment-registry");
  static constexpr std::array<std::string_view, 3> kHighway = {"primary", "secondary",
                                                               "residential"};
  std::vector<Segment> out;
  out.reserve(n_base + n_augmented);
  for (std::size_t i = 0; i < n_base; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "seg-%04zu", i + 1);
    Segment s;
    s.image.image_id = id;
    s.image.source = ImageSource::kStreetview;
    s.image.uri = std::string("streetview://") + id;
    auto highway = kHighway[uniform_index(rng, kHighway.size())];
    int lanes = highway == "residential" ? 1 + static_cast<int>(uniform_index(rng, 2))
                                         : 2 + static_cast<int>(uniform_index(rng, 3));
    int speed = highway == "residential" ? 25 : highway == "secondary" ? 35 : 45;
    int level = static_cast<int>(uniform_index(rng, 3));
    s.attributes.attributes = {{"highway", std::string(highway)},
                               {"lanes", std::to_string(lanes)},
                               {"maxspeed", std::to_string(speed) + " mph"},
                               {"cycleway", std::string(facility_for_level(level, rng))}};
    out.push_back(std::move(s));
  }
  for (std::size_t i = 0; i < std::min(n_augmented, n_base); ++i) {
    Segment aug = out[i];
    aug.image.parent_id = out[i].image.image_id;
    aug.image.image_id = out[i].image.image_id + "-a1";
    aug.image.source = ImageSource::kAugmented;
    aug.image.uri = "augmented://" + aug.image.image_id + ".jpg";
    for (auto& [k, v] : aug.attributes.attributes) {
      if (k != "cycleway") continue;
      int level = facility_level(v);
      v = level < 2 ? std::string(facility_for_level(level + 1, rng)) : "striped_lane";
    }
    out.push_back(std::move(aug));
  }
  return out;
}

const std::vector<std::string>& factor_vocabulary() {
  static const std::vector<std::string> kVocab = {
      "no bike lane",        "heavy traffic",     "high speed traffic", "no separation",
      "parked cars",         "painted bike lane", "narrow lane",        "moderate traffic",
      "physical separation", "protected lane",    "wide lane",          "low traffic",
      "street trees",        "good pavement",     "poor pavement",      "busy intersection"};
  return kVocab;
}

double expected_segment_rating(Persona persona, int level, RatingDimension d) {
  const auto& target = archetype(persona);
  double comfort5 = level == 0   ? target.mean - target.gradient / 2
                    : level == 1 ? target.mean
                                 : target.mean + target.gradient / 2;
  double r = 1.0 + (comfort5 - 1.0) * 0.75;
  if (d == RatingDimension::kSafety) r -= 0.1;
  if (d == RatingDimension::kWillingness && persona == Persona::kNWNH) r -= 0.4;
  return std::clamp(r, 1.0, 4.0);
}

SegmentAssessment simulate_assessment(const std::string& participant_id, Persona persona,
                                      const Segment& segment, Rng& rng,
                                      const RespondentModel& model) {
  const int level = protection_level(segment.attributes);
  double speed_penalty = 0.0;
  if (auto speed = segment.attributes.get("maxspeed"); speed && speed->rfind("45", 0) == 0) {
    speed_penalty = level < 2 ? 0.3 : 0.1;
  }
  const double shared = standard_normal(rng) * model.noise * 0.7;
  SegmentAssessment a;
  a.participant_id = participant_id;
  a.image_ref = segment.image;
  for (auto d : {RatingDimension::kSafety, RatingDimension::kComfort,
                 RatingDimension::kWillingness}) {
    double r = expected_segment_rating(persona, level, d) - speed_penalty + shared +
               standard_normal(rng) * model.noise * 0.5;
    a.ratings.set(d, static_cast<int>(std::clamp(std::floor(r + 0.5), 1.0, 4.0)));
  }

  const auto& vocab = factor_vocabulary();
  static const std::array<std::vector<int>, 3> kByLevel = {
      std::vector<int>{0, 1, 2, 3, 4, 15}, std::vector<int>{5, 6, 7, 4, 15},
      std::vector<int>{8, 9, 10, 11}};
  const auto& pool = kByLevel[level];
  std::vector<std::string> tags;
  int n_tags = 1 + static_cast<int>(uniform_index(rng, 3));
  for (int i = 0; i < n_tags; ++i) tags.push_back(vocab[pool[uniform_index(rng, pool.size())]]);
  if (uniform01(rng) < 0.3) tags.push_back(vocab[12 + uniform_index(rng, 3)]);
  a.factors = make_tags(tags);
  return a;
}

std::string expert_reasoning(const SegmentAssessment& a, Persona persona,
                             const AttributeSet& attrs) {
  static constexpr std::array<std::string_view, 4> kLevelWords = {"very low", "low", "moderate",
                                                                  "high"};
  auto word = [](int r) { return std::string(kLevelWords[std::clamp(r, 1, 4) - 1]); };
  std::string facility = facility_phrase(attrs.get("cycleway").value_or("none"));
  std::string text = "The street shows " + facility;
  if (auto lanes = attrs.get("lanes")) text += " alongside " + *lanes + " travel lane(s)";
  if (auto speed = attrs.get("maxspeed")) text += " with a posted speed of " + *speed;
  text += ". ";
  switch (persona) {
    case Persona::kSF: text += "Mixed traffic is acceptable to me, so the facility type matters little. "; break;
    case Persona::kEC: text += "I ride regularly and value a marked lane, but I can share the road when needed. "; break;
    case Persona::kIBC: text += "Separation from moving traffic decides whether I would ride here. "; break;
    case Persona::kNWNH: text += "Cycling near motor traffic feels dangerous to me whatever the facility. "; break;
  }
  if (!a.factors.tags.empty()) {
    text += "The main factors are ";
    for (std::size_t i = 0; i < a.factors.tags.size(); ++i) {
      if (i) text += i + 1 == a.factors.tags.size() ? " and " : ", ";
      text += a.factors.tags[i];
    }
    text += ". ";
  }
  text += "Comfort is " + word(a.ratings.comfort) + ", perceived safety is " +
          word(a.ratings.safety) + ", and my willingness to ride is " +
          word(a.ratings.willingness) + ".";
  return text;
}

std::vector<SegmentAssessment> variance_population(std::size_t participants,
                                                   std::size_t per_participant,
                                                   std::uint64_t seed) {
  Rng rng = make_rng(seed, "variance-population");
  std::vector<SegmentAssessment> out;
  for (std::size_t p = 0; p < participants; ++p) {
    char id[32];
    std::snprintf(id, sizeof id, "v%04zu", p + 1);
    const double center = 1.8 + 1.4 * uniform01(rng);
    const double spread = 0.45 + 1.2 * uniform01(rng);
    for (std::size_t k = 0; k < per_participant; ++k) {
      SegmentAssessment a;
      a.participant_id = id;
      a.image_ref.image_id = "seg-" + std::to_string(k + 1);
      a.image_ref.uri = "streetview://" + a.image_ref.image_id;
      for (auto d : {RatingDimension::kSafety, RatingDimension::kComfort,
                     RatingDimension::kWillingness}) {
        double r = center + spread * standard_normal(rng);
        a.ratings.set(d, static_cast<int>(std::clamp(std::floor(r + 0.5), 1.0, 4.0)));
      }
      out.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace bikelab::synth

namespace bikelab::synth {

Corpus corpus(std::size_t participants, std::size_t per_participant, std::size_t n_segments,
              std::uint64_t seed) {
  if (per_participant > n_segments) {
    throw Error(ErrorCode::kConfig, "per_participant exceeds the segment count");
  }
  Corpus c;
  c.participants = weighted_population(participants, seed);
  c.segments = segment_registry(n_segments, 0, seed);
  Rng rng = make_rng(seed, "corpus");
  std::vector<std::size_t> idx(n_segments);
  for (std::size_t i = 0; i < n_segments; ++i) idx[i] = i;
  for (const auto& p : c.participants) {
    shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < per_participant; ++k) {
      c.assessments.push_back(
          simulate_assessment(p.profile.participant_id, p.persona, c.segments[idx[k]], rng));
      c.assessment_persona.push_back(p.persona);
    }
  }
  return c;
}

const Segment& find_segment(const Corpus& c, std::string_view image_id) {
  for (const auto& s : c.segments) {
    if (s.image.image_id == image_id) return s;
  }
  throw Error(ErrorCode::kNotFound, "unknown segment " + std::string(image_id));
}

std::vector<dataset::TrainingExample> examples(const Corpus& c, double reasoning_fraction) {
  std::vector<dataset::TrainingExample> out;
  const auto n_reasoning = static_cast<std::size_t>(
      std::floor(reasoning_fraction * static_cast<double>(c.assessments.size())));
  for (std::size_t i = 0; i < c.assessments.size(); ++i) {
    const auto& a = c.assessments[i];
    const Persona p = c.assessment_persona[i];
    const auto& attrs = find_segment(c, a.image_ref.image_id).attributes;
    if (i < n_reasoning) out.push_back(dataset::build_type1(a, expert_reasoning(a, p, attrs), p, attrs));
    out.push_back(dataset::build_type2(a, p, attrs));
    out.push_back(dataset::build_type3(a, p, attrs));
  }
  return out;
}

}  // namespace bikelab::synth
