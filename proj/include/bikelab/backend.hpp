#pragma once
// Model backend contract used by the training loops, plus a deterministic
// in-process mock and a JSON-over-HTTP client.

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>

#include "bikelab/core.hpp"
#include "bikelab/dataset.hpp"
#include "bikelab/rng.hpp"

namespace httplib {
class Server;
}

namespace bikelab::training {

struct GenerationRequest {
  Persona persona = Persona::kSF;
  ImageRef image_ref;
  AttributeSet attributes;
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 512;
};

void to_json(json& j, const GenerationRequest& r);
void from_json(const json& j, GenerationRequest& r);

/// One preference-gradient term: raise log p(chosen), lower log p(rejected),
/// scaled by `weight` (the loss gradient magnitude).
struct PreferenceUpdate {
  std::string prompt;
  std::string chosen;
  std::string rejected;
  double weight = 0.0;
};

void to_json(json& j, const PreferenceUpdate& u);
void from_json(const json& j, PreferenceUpdate& u);

/// Backend failures surface as Error(kBackend).
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  /// Deterministic at temperature 0.
  virtual std::string generate(const GenerationRequest& request) = 0;
  /// Log-probability of `completion` given `prompt`; always <= 0.
  virtual double sequence_logprob(std::string_view prompt, std::string_view completion) = 0;
  /// One optimizer update over an effective batch; returns the batch loss.
  virtual double apply_sft_step(std::span<const dataset::TrainingExample> batch, double lr) = 0;
  virtual void apply_preference_step(std::span<const PreferenceUpdate> updates, double lr) = 0;
  /// Opaque adapter state.
  virtual std::string snapshot() = 0;
  virtual void restore(std::string_view blob) = 0;
};

struct MockBackendOptions {
  std::uint64_t seed = 0;
  /// Fraction of the rating error corrected per unit learning rate.
  double sft_lr_scale = 2500.0;
  double preference_lr_scale = 2.0e6;
};

/// Rating/factor behaviour table keyed by persona x protection level; SFT
/// steps move the table toward target ratings and accumulate target factors,
/// preference steps shift per-completion log-probabilities.
class MockBackend final : public ModelBackend {
 public:
  explicit MockBackend(MockBackendOptions options = {});

  std::string generate(const GenerationRequest& request) override;
  double sequence_logprob(std::string_view prompt, std::string_view completion) override;
  double apply_sft_step(std::span<const dataset::TrainingExample> batch, double lr) override;
  void apply_preference_step(std::span<const PreferenceUpdate> updates, double lr) override;
  std::string snapshot() override;
  void restore(std::string_view blob) override;

  /// 0 = no/shared lane, 1 = painted lane, 2 = buffered/protected. Falls back
  /// to a hash of the image id when the attributes name no facility.
  static int image_feature(const AttributeSet& attrs, std::string_view image_id);

 private:
  struct Cell {
    std::array<double, 3> rating{};  // safety, comfort, willingness
    std::map<std::string, double> factor_weight;
  };

  Cell& cell(Persona p, int level) { return table_[static_cast<int>(p)][level]; }
  std::string render(const GenerationRequest& request, Rng& rng) const;

  MockBackendOptions options_;
  std::array<std::array<Cell, 3>, 4> table_{};
  std::unordered_map<std::uint64_t, double> logprob_shift_;
  std::uint64_t nonce_ = 0;
  std::mutex mutex_;
};

/// Client for a backend exposed over HTTP (POST /generate, /logprob,
/// /sft_step, /dpo_step, /snapshot, /restore).
class RemoteBackend final : public ModelBackend {
 public:
  explicit RemoteBackend(std::string base_url, int timeout_seconds = 600);
  ~RemoteBackend() override;

  std::string generate(const GenerationRequest& request) override;
  double sequence_logprob(std::string_view prompt, std::string_view completion) override;
  double apply_sft_step(std::span<const dataset::TrainingExample> batch, double lr) override;
  void apply_preference_step(std::span<const PreferenceUpdate> updates, double lr) override;
  std::string snapshot() override;
  void restore(std::string_view blob) override;

 private:
  json post(const std::string& path, const json& body);

  std::string base_url_;
  int timeout_seconds_;
};

/// Registers the backend protocol routes on `server`, dispatching to `backend`.
void bind_backend_routes(httplib::Server& server, ModelBackend& backend);

std::unique_ptr<ModelBackend> make_backend(std::string_view kind, std::uint64_t seed,
                                           std::string_view url = {});

}  // namespace bikelab::training
