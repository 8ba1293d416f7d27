#pragma once
// Controlled infrastructure edits: minimal-difference pair planning,
// instruction templates, external edit clients and a provenance registry.

#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bikelab/core.hpp"

namespace bikelab::augment {

// Ordinals fix the canonical change order.
enum class Variable : int {
  kLanePresence = 0,
  kLaneWidth = 1,
  kLaneColor = 2,
  kBufferType = 3,
  kBufferLocation = 4,
};

const std::vector<Variable>& all_variables();
std::string_view to_string(Variable v);
Variable variable_from_string(std::string_view s);
const std::vector<std::string>& domain(Variable v);
/// Width, color and buffer variables only exist on a present lane.
bool lane_dependent(Variable v);

void to_json(json& j, Variable v);
void from_json(const json& j, Variable& v);

using Metadata = std::map<Variable, std::string>;

/// One baseline-metadata row: the image and the annotated values of its
/// unedited variables. lane_presence is required; lane-dependent variables
/// are required when the lane is present.
struct BaseImage {
  ImageRef image;
  Metadata metadata;
};

void to_json(json& j, const BaseImage& b);
void from_json(const json& j, BaseImage& b);

/// Throws ValidationError naming the offending variable.
void check_metadata(const Metadata& m);

struct Change {
  Variable variable = Variable::kLanePresence;
  std::string value;

  bool operator==(const Change&) const = default;
};

struct AugmentationSpec {
  ImageRef base_image;
  std::vector<Change> changes;
  std::string instruction_text;
  std::optional<ImageRef> result;
};

void to_json(json& j, const AugmentationSpec& s);
void from_json(const json& j, AugmentationSpec& s);

/// Metadata after applying `changes`. Throws Error(kConstraint) on duplicate
/// variables, values outside a domain, or a lane-dependent change whose
/// resulting lane is absent.
Metadata apply_changes(const Metadata& base, std::span<const Change> changes);

/// One spec per alternative value of `variable` for every base image, each
/// differing from its baseline in exactly that variable.
std::vector<AugmentationSpec> plan_pairs(std::span<const BaseImage> images, Variable variable);

/// One sentence per change in canonical order, then a preservation clause.
std::string render_instruction(std::span<const Change> changes);
inline std::string render_instruction(const AugmentationSpec& s) {
  return render_instruction(s.changes);
}

/// Idempotence key: base image id plus the canonicalized change list.
std::string job_key(const std::string& base_image_id, std::span<const Change> changes);

// ---- edit clients ------------------------------------------------------

class EditClient {
 public:
  virtual ~EditClient() = default;
  /// Returns the edited image's uri. Throws Error(kBackend) on failure.
  virtual std::string edit(const std::string& image_uri, const std::string& instruction_text) = 0;
};

/// Offline replay from a directory holding edits.jsonl rows
/// {image_uri, instruction_text, result_uri}.
class FixtureEditClient : public EditClient {
 public:
  explicit FixtureEditClient(const std::filesystem::path& dir);
  explicit FixtureEditClient(std::vector<json> rows);
  std::string edit(const std::string& image_uri, const std::string& instruction_text) override;

  static void write(const std::filesystem::path& dir, const std::vector<json>& rows);

 private:
  std::map<std::pair<std::string, std::string>, std::string> table_;
};

/// POST {image_uri, instruction_text} -> {result_uri}.
class HttpEditClient : public EditClient {
 public:
  HttpEditClient(std::string base_url, std::string path = "/edit", int timeout_seconds = 600);
  std::string edit(const std::string& image_uri, const std::string& instruction_text) override;

 private:
  std::string base_url_;
  std::string path_;
  int timeout_seconds_;
};

/// "fixture:<dir>" or an http(s) base url.
std::unique_ptr<EditClient> make_edit_client(const std::string& spec);

// ---- provenance --------------------------------------------------------

struct RetryPolicy {
  int attempts = 3;
  int backoff_ms = 0;  // doubled after each failed attempt
};

struct Provenance {
  std::string key;
  ImageRef result;
  std::vector<Change> changes;
  std::string instruction_text;
};

void to_json(json& j, const Provenance& p);
void from_json(const json& j, Provenance& p);

struct FailedJob {
  std::string key;
  std::string base_image_id;
  std::string error;
  int attempts = 0;
};

void to_json(json& j, const FailedJob& f);

class Registry {
 public:
  void register_base(const ImageRef& image);

  /// Edits the spec's base image, registers the result with its parent and
  /// returns it. A key already done returns the stored result without
  /// calling the client; concurrent submissions of one key share a single
  /// client call. After the retry budget is spent the failure is recorded
  /// and Error(kBackend) is thrown.
  ImageRef execute(const AugmentationSpec& spec, EditClient& client,
                   const RetryPolicy& policy = {});

  std::optional<Provenance> find(const std::string& key) const;
  std::optional<ImageRef> image(const std::string& image_id) const;
  /// Image ids from `image_id` up to its streetview root.
  std::vector<std::string> lineage(const std::string& image_id) const;
  std::vector<Provenance> entries() const;
  std::vector<FailedJob> failed_jobs() const;

  /// Every augmented image has exactly one registered parent and the
  /// parent graph is acyclic.
  ValidationReport verify() const;

  void save(const std::filesystem::path& path) const;
  /// Merges a saved registry into this one.
  void load(const std::filesystem::path& path);

 private:
  mutable std::mutex mutex_;
  std::condition_variable done_;
  std::map<std::string, ImageRef> images_;
  std::map<std::string, Provenance> by_key_;
  std::map<std::string, int> in_flight_;
  std::vector<FailedJob> failed_;
};

}  // namespace bikelab::augment
