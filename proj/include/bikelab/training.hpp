#pragma once
// Supervised fine-tuning and preference-optimization loops with a per-epoch
// stepped, intra-epoch cosine learning-rate schedule.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bikelab/backend.hpp"
#include "bikelab/core.hpp"
#include "bikelab/dataset.hpp"
#include "bikelab/preference_pair.hpp"

namespace bikelab::training {

struct LrSchedule {
  std::vector<double> peak_multipliers = {1.0, 0.8, 0.64, 0.32, 0.16};
  double floor_fraction = 0.10;
};

struct SftConfig {
  int adapter_rank = 32;
  int adapter_scale = 64;
  std::vector<std::string> target_projections = {"query", "key", "value", "output"};
  double base_lr = 2e-4;
  int epochs = 5;
  int micro_batch = 4;
  int grad_accum = 4;
  double warmup_fraction = 0.10;
  std::string mixed_precision = "half";
  bool activation_checkpointing = true;
  LrSchedule schedule;
  std::array<double, 3> ratios = dataset::kDefaultRatios;
  /// Examples per epoch; 0 uses every example once.
  std::size_t epoch_budget = 0;
  std::uint64_t seed = 0;

  int effective_batch() const { return micro_batch * grad_accum; }
};

struct DpoConfig {
  double beta = 0.1;
  double lr = 5e-6;
  int batch = 8;
  int epochs = 3;
  std::uint64_t seed = 0;
};

void to_json(json& j, const SftConfig& c);
void from_json(const json& j, SftConfig& c);
void to_json(json& j, const DpoConfig& c);
void from_json(const json& j, DpoConfig& c);

/// Throws Error(kConfig) on an inconsistent configuration.
void check(const SftConfig& c);
void check(const DpoConfig& c);

/// Throws Error(kOutOfRange) when `epoch` is outside the schedule.
double peak_lr(int epoch, double base, const LrSchedule& schedule = {});

/// `epoch_starts[e]` is the first global step of epoch e; the last epoch ends
/// at `total_steps`. Warmup is linear from 0 over the first
/// ceil(warmup_fraction * total_steps) steps, using the current epoch's peak.
/// Afterwards each epoch anneals by cosine from its peak to
/// floor_fraction * peak at its final step.
double step_lr(std::size_t global_step, std::size_t total_steps,
               std::span<const std::size_t> epoch_starts, double base,
               double warmup_fraction = 0.10, const LrSchedule& schedule = {});

/// ln(1 + e^x) without overflow.
double softplus(double x);
double sigmoid(double x);

/// -ln sigmoid(beta * ((logp_w - ref_w) - (logp_l - ref_l))). Throws
/// Error(kNumeric) on non-finite inputs and Error(kConfig) for beta <= 0.
double dpo_loss(double logp_w, double logp_l, double ref_logp_w, double ref_logp_l, double beta);

/// Partial derivatives of dpo_loss.
struct DpoGradient {
  double logp_w = 0.0;
  double logp_l = 0.0;
  double ref_logp_w = 0.0;
  double ref_logp_l = 0.0;
};
DpoGradient dpo_loss_gradient(double logp_w, double logp_l, double ref_logp_w, double ref_logp_l,
                              double beta);

struct StepLog {
  int epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;

  bool operator==(const StepLog&) const = default;
};

void to_json(json& j, const StepLog& s);
void from_json(const json& j, StepLog& s);

struct TrainingReport {
  std::string kind;  // "sft" | "dpo"
  std::size_t optimizer_updates = 0;
  std::vector<StepLog> steps;
  /// sha256 of the final backend snapshot.
  std::string adapter_ref;
  std::string adapter_path;
  /// DPO only: mean loss over all pairs before and after training.
  double initial_mean_loss = 0.0;
  double final_mean_loss = 0.0;
  std::string reference_ref;
  bool resumed = false;
};

void to_json(json& j, const TrainingReport& r);

struct RunOptions {
  /// Where to write checkpoints, the loss log and the adapter; empty keeps
  /// everything in memory.
  std::filesystem::path run_dir;
  /// Continue from run_dir/checkpoint.json when present.
  bool resume = false;
};

/// One epoch's ordered example indices into `examples`. Plans are drawn with
/// the configured ratios and budget; examples are grouped into per-type pools
/// in input order.
std::vector<std::vector<std::size_t>> sft_epoch_orders(
    std::span<const dataset::TrainingExample> examples, const SftConfig& config);

/// Optimizer updates = epochs x floor(N_epoch / effective batch). A backend
/// failure writes run_dir/checkpoint.json (state at the start of the failing
/// epoch) and throws Error(kTrainingAborted); resuming replays from there.
TrainingReport run_sft(std::span<const dataset::TrainingExample> examples, const SftConfig& config,
                       ModelBackend& backend, const RunOptions& options = {});

/// The backend state on entry is the frozen reference. Batches per epoch are
/// ceil(pairs / batch).
TrainingReport run_dpo(std::span<const PreferencePair> pairs, const DpoConfig& config,
                       ModelBackend& backend, const RunOptions& options = {});

}  // namespace bikelab::training
