#pragma once
// Candidate explanation pairs at two sampling temperatures, three-annotator
// votes, and majority-vote preference pairs.

#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bikelab/backend.hpp"
#include "bikelab/core.hpp"
#include "bikelab/preference_pair.hpp"

namespace bikelab::preference {

inline constexpr double kTemperatureA = 0.7;
inline constexpr double kTemperatureB = 1.0;
inline constexpr int kMaxRegenerations = 3;
inline constexpr std::size_t kQuorum = 3;

struct InstanceRef {
  Persona persona = Persona::kSF;
  ImageRef image_ref;
  AttributeSet attributes;

  bool operator==(const InstanceRef&) const = default;
};

struct CandidatePair {
  std::string pair_id;
  InstanceRef instance;
  std::string prompt;
  std::string completion_a;  // temperature 0.7
  std::string completion_b;  // temperature 1.0
  /// Display position: true shows completion_b on the left.
  bool swapped = false;

  bool operator==(const CandidatePair&) const = default;
};

enum class Choice { kA, kB };

struct CriteriaNotes {
  std::optional<bool> factual_accuracy;
  std::optional<bool> logical_coherence;
  std::optional<bool> persona_consistency;

  bool operator==(const CriteriaNotes&) const = default;
};

struct Vote {
  std::string pair_id;
  std::string annotator_id;
  Choice choice = Choice::kA;
  std::optional<CriteriaNotes> criteria_notes;

  bool operator==(const Vote&) const = default;
};

void to_json(json& j, const InstanceRef& r);
void from_json(const json& j, InstanceRef& r);
void to_json(json& j, const CandidatePair& p);
void from_json(const json& j, CandidatePair& p);
void to_json(json& j, Choice c);
void from_json(const json& j, Choice& c);
void to_json(json& j, const Vote& v);
void from_json(const json& j, Vote& v);

struct SkippedInstance {
  InstanceRef instance;
  std::string reason;
};

struct SampleResult {
  std::vector<CandidatePair> pairs;
  std::vector<SkippedInstance> skipped;
};

/// Draws `n` instances without replacement and generates a Type 1 explanation
/// at each temperature. A completion that does not parse as a full Type 1
/// output (or equals the other one) is regenerated up to three times; the
/// instance is then skipped. Throws Error(kInsufficientData) when n exceeds
/// the instance count.
SampleResult sample_pairs(std::span<const InstanceRef> instances, std::size_t n,
                          training::ModelBackend& backend, std::uint64_t seed);

/// Majority outcome of exactly three votes from distinct annotators; nullopt
/// while fewer than three have arrived. Throws Error(kDuplicateAnnotator) on a
/// repeated annotator or a fourth vote, Error(kValidation) on a vote for a
/// different pair.
std::optional<PreferencePair> tally(const CandidatePair& pair, std::span<const Vote> votes);

struct TallySummary {
  std::vector<PreferencePair> decided;
  std::vector<std::string> pending;  // pair ids
};

TallySummary tally_all(std::span<const CandidatePair> pairs, std::span<const Vote> votes);

/// Thread-safe append-only vote store enforcing one vote per (pair,
/// annotator) and at most three votes per pair.
class VoteLog {
 public:
  void add(const Vote& vote);
  std::vector<Vote> votes_for(const std::string& pair_id) const;
  std::vector<Vote> all() const;
  std::size_t count(const std::string& pair_id) const;

 private:
  mutable std::mutex mutex_;
  std::vector<Vote> votes_;
  std::map<std::string, std::vector<std::size_t>> by_pair_;
};

}  // namespace bikelab::preference
