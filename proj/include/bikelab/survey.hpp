#pragma once
// Crowdsourcing survey and preference-annotation service: balanced segment
// assignment, an append-only JSONL event log replayed on start, dataset
// export, and the HTTP JSON API consumed by the browser client.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "bikelab/core.hpp"
#include "bikelab/preference.hpp"
#include "bikelab/synth.hpp"

namespace httplib {
class Server;
}

namespace bikelab::survey {

inline constexpr std::size_t kCompletedSession = 20;

struct Assignment {
  std::string participant_id;
  std::vector<ImageRef> items;
};

void to_json(json& j, const Assignment& a);
void from_json(const json& j, Assignment& a);

struct AssignmentOptions {
  std::size_t base_items = 15;
  std::size_t augmented_items = 5;
  std::uint64_t seed = 0;
};

/// Demographic keys accepted on a response. Anything else (names, contact
/// details) is rejected.
const std::vector<std::string>& demographic_keys();

struct SubmitAck {
  std::string participant_id;
  std::size_t accepted = 0;      // assessments in this submission
  std::size_t replaced = 0;      // of which overwrote an earlier record
  std::size_t assessed = 0;      // distinct images assessed so far
  bool complete = false;
};

void to_json(json& j, const SubmitAck& a);

struct Export {
  std::string profiles;     // JSONL with schema header
  std::string assessments;  // JSONL with schema header
  std::size_t completed_sessions = 0;
};

class Service {
 public:
  /// `registry` holds street-view segments and augmented variants (with
  /// parent ids). With a data directory, events are appended to
  /// <dir>/events.jsonl and replayed here.
  Service(std::vector<ImageRef> registry, std::optional<std::filesystem::path> data_dir,
          AssignmentOptions options = {});

  /// Least-assigned-first: base items by ascending assignment count, then
  /// augmented items whose parents are not among the chosen base items.
  /// Ties break by a seeded shuffle. If the constraint cannot be met the
  /// draw falls back to uniform augmented items, then uniform base items
  /// among non-parents (logged); Error(kInsufficientData) when even that
  /// cannot fill the base slots.
  Assignment create_participant();
  Assignment assignment(const std::string& participant_id) const;

  /// Body: {participant_id, demographics?, comfort_profile?: {ratings},
  /// assessments?: [...]}; each assessment may give just image_id. Throws
  /// ValidationError naming the field, Error(kNotFound) for an unknown
  /// participant.
  SubmitAck submit_response(const json& body);

  /// Every record stored for (participant, image), oldest first.
  std::vector<SegmentAssessment> audit(const std::string& participant_id,
                                       const std::string& image_id) const;

  /// Pure function of the log: sessions with >= 20 assessed images, in
  /// creation order, assessments in assignment order.
  Export export_dataset() const;
  void write_export(const std::filesystem::path& dir) const;

  void add_pairs(std::span<const preference::CandidatePair> pairs);
  /// Pairs without a vote from `annotator` and below quorum.
  std::vector<preference::CandidatePair> list_tasks(const std::string& annotator) const;
  /// Throws Error(kNotFound) for an unknown pair, Error(kConflict) for a
  /// repeated annotator or a pair at quorum.
  void submit_vote(const preference::Vote& vote);
  std::vector<preference::Vote> votes() const;
  std::vector<preference::CandidatePair> pairs() const;

  /// Per-image assignment counts.
  std::map<std::string, std::size_t> assignment_counts() const;
  std::size_t participant_count() const;
  std::vector<std::string> warnings() const;

 private:
  struct Session {
    Assignment assignment;
    std::optional<ComfortProfile> comfort;
    json demographics = json::object();
    std::map<std::string, std::vector<SegmentAssessment>> history;  // image id -> records
  };

  void apply(const json& event);
  void append(const json& event);
  Assignment draw(std::uint64_t index);

  std::vector<ImageRef> base_;
  std::vector<ImageRef> augmented_;
  std::optional<std::filesystem::path> data_dir_;
  AssignmentOptions options_;

  mutable std::shared_mutex mutex_;
  std::vector<std::string> order_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::size_t> counts_;
  std::vector<preference::CandidatePair> pairs_;
  std::map<std::string, std::size_t> pair_index_;
  std::vector<preference::Vote> votes_;
  std::map<std::string, std::vector<std::string>> voters_;  // pair -> annotators
  std::vector<std::string> warnings_;
};

struct SimulatedParticipant {
  std::string participant_id;
  Persona persona;
};

/// Drives `n` synthetic respondents through the service API: each is
/// assigned, submits demographics and a comfort profile drawn from a persona
/// archetype, then rates every assigned item in two partial submissions.
std::vector<SimulatedParticipant> simulate_participants(Service& service,
                                                        std::span<const synth::Segment> registry,
                                                        std::size_t n, std::uint64_t seed);

/// Registers the JSON API and CORS headers on `server`.
void bind_routes(httplib::Server& server, Service& service);

/// Maps a library error to an HTTP status: validation 422, parse 400, not
/// found 404, conflict 409, anything else 500.
int http_status(const std::exception& e);

}  // namespace bikelab::survey
