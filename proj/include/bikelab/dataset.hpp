#pragma once
// Training-example rendering at three supervision granularities and
// fixed-ratio per-epoch sampling.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bikelab/core.hpp"

namespace bikelab::dataset {

enum class ExampleType : int { kReasoning = 1, kStructured = 2, kRating = 3 };

std::string_view persona_description(Persona p);

/// Prompt templates with {persona}, {persona_desc} and
/// {osm_text} placeholders.
std::string_view template_text(ExampleType type);

/// "key: value" lines sorted by key.
std::string render_osm_text(const AttributeSet& attrs);

/// Substitutes the placeholders. The road-attribute section is dropped when
/// the attribute set is empty.
std::string render_prompt(ExampleType type, Persona persona, const AttributeSet& attrs);

struct TrainingExample {
  std::string example_id;
  ExampleType type = ExampleType::kRating;
  Persona persona = Persona::kSF;
  ImageRef image_ref;
  AttributeSet attributes;
  std::string prompt;
  std::string target;
  RatingTriple ratings;     // ground truth carried for evaluation
  FactorTagList factors;    // ditto

  bool operator==(const TrainingExample&) const = default;
};

void to_json(json& j, const TrainingExample& e);
void from_json(const json& j, TrainingExample& e);

std::string example_id(const SegmentAssessment& a, ExampleType type);

/// Throws Error(kInsufficientData) on empty reasoning and Error(kConsistency)
/// when the reasoning embeds a ratings line disagreeing with the assessment.
TrainingExample build_type1(const SegmentAssessment& assessment, std::string_view expert_reasoning,
                            Persona persona, const AttributeSet& attrs);
TrainingExample build_type2(const SegmentAssessment& assessment, Persona persona,
                            const AttributeSet& attrs);
TrainingExample build_type3(const SegmentAssessment& assessment, Persona persona,
                            const AttributeSet& attrs);

inline constexpr std::array<double, 3> kDefaultRatios = {0.15, 0.40, 0.45};

struct EpochPlan {
  std::size_t budget = 0;
  std::array<std::size_t, 3> counts{};
  /// Indices into each type's pool, drawn without replacement.
  std::array<std::vector<std::size_t>, 3> drawn;
};

void to_json(json& j, const EpochPlan& p);

/// Largest-remainder apportionment of `weights` over `total`; ties go to the
/// lower index.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights);

/// Quotas at the fixed ratios; under-filled pools are taken whole and their
/// deficit is redistributed over the other types by ratio. Throws
/// Error(kConfig) for budget < 3 and Error(kInsufficientData) when the pools
/// hold fewer examples than the budget.
EpochPlan plan_epoch(const std::array<std::size_t, 3>& pool_sizes, std::size_t budget,
                     const std::array<double, 3>& ratios, std::uint64_t seed);

/// Quota arithmetic only (no draws).
std::array<std::size_t, 3> plan_counts(const std::array<std::size_t, 3>& pool_sizes,
                                       std::size_t budget, const std::array<double, 3>& ratios);

}  // namespace bikelab::dataset
