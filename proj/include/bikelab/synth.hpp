#pragma once
// Synthetic data generators standing in for the private survey data: persona
// archetype comfort profiles, segment registries, survey respondents and
// expert reasoning annotations.

#include <cstdint>
#include <string>
#include <vector>

#include "bikelab/core.hpp"
#include "bikelab/dataset.hpp"
#include "bikelab/rng.hpp"

namespace bikelab::synth {

/// Reference per-persona centroid statistics (overall comfort mean and
/// low-to-high protection gradient).
struct ArchetypeTarget {
  Persona persona;
  double mean;
  double gradient;
  double share;  // population share
};

const std::vector<ArchetypeTarget>& persona_archetypes();
const ArchetypeTarget& archetype(Persona p);

/// Expected per-type rating for an archetype: low-protection types sit at
/// mean - gradient/2, high at mean + gradient/2, the rest at the mean.
double expected_rating(const ArchetypeTarget& target, InfrastructureType t);

/// One profile whose ratings are unbiased integer roundings of the archetype
/// expectations (group sums are rounded stochastically, then spread evenly).
ComfortProfile archetype_profile(const ArchetypeTarget& target, std::string participant_id,
                                 Rng& rng);

struct LabeledProfile {
  ComfortProfile profile;
  Persona persona;
};

/// `per_persona` profiles of each archetype, ids "p<persona>-<n>".
std::vector<LabeledProfile> archetype_population(std::size_t per_persona, std::uint64_t seed);

/// Profiles drawn with the reference persona shares.
std::vector<LabeledProfile> weighted_population(std::size_t n, std::uint64_t seed,
                                                std::string_view id_prefix = "p");

// ---------------------------------------------------------------------------
// Street segments.

/// Bike facility carried by a segment; maps onto protection levels 0..2.
std::string_view facility_for_level(int level, Rng& rng);
int protection_level(const AttributeSet& attrs);

struct Segment {
  ImageRef image;
  AttributeSet attributes;
};

void to_json(json& j, const Segment& s);
void from_json(const json& j, Segment& s);

/// `n_base` street-view segments plus one augmented variant for each of the
/// first `n_augmented` segments (bike facility upgraded by one level).
std::vector<Segment> segment_registry(std::size_t n_base, std::size_t n_augmented,
                                      std::uint64_t seed);

/// Factor-tag vocabulary by protection level (positive and negative cues).
const std::vector<std::string>& factor_vocabulary();

struct RespondentModel {
  double noise = 0.55;  // rating noise (sd, rating units)
};

/// A respondent's segment assessment under their persona.
SegmentAssessment simulate_assessment(const std::string& participant_id, Persona persona,
                                      const Segment& segment, Rng& rng,
                                      const RespondentModel& model = {});

/// Expected 1-4 rating for persona at a protection level, before noise.
double expected_segment_rating(Persona persona, int level, RatingDimension d);

/// Deterministic stand-in for an expert reasoning chain consistent with the
/// assessment's factors and ratings.
std::string expert_reasoning(const SegmentAssessment& a, Persona persona,
                             const AttributeSet& attrs);

/// Participants with heterogeneous rating spread (for variance analysis).
std::vector<SegmentAssessment> variance_population(std::size_t participants,
                                                   std::size_t per_participant,
                                                   std::uint64_t seed);

/// A survey-shaped corpus: participants with known personas, a segment
/// registry and each participant's assessments of `per_participant`
/// segments.
struct Corpus {
  std::vector<LabeledProfile> participants;
  std::vector<Segment> segments;
  std::vector<SegmentAssessment> assessments;
  std::vector<Persona> assessment_persona;  // parallel to assessments
};

Corpus corpus(std::size_t participants, std::size_t per_participant, std::size_t n_segments,
              std::uint64_t seed);

const Segment& find_segment(const Corpus& c, std::string_view image_id);

/// Type 2 and Type 3 examples for every assessment, plus Type 1 for the
/// first `reasoning_fraction` of assessments (expert-annotated subset).
std::vector<dataset::TrainingExample> examples(const Corpus& c, double reasoning_fraction);

}  // namespace bikelab::synth
