#pragma once
// End-to-end run: survey -> persona fit -> dataset -> SFT -> preference
// pairs -> DPO -> baseline -> evaluation, with every stage reading and
// writing plain files under one run directory and a content-hashed manifest.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bikelab/baseline.hpp"
#include "bikelab/core.hpp"
#include "bikelab/synth.hpp"
#include "bikelab/training.hpp"

namespace bikelab::pipeline {

struct Seeds {
  std::uint64_t survey = 11;
  std::uint64_t persona = 12;
  std::uint64_t dataset = 13;
  std::uint64_t sft = 14;
  std::uint64_t preference = 15;
  std::uint64_t dpo = 16;
  std::uint64_t eval = 17;
};

void to_json(json& j, const Seeds& s);
void from_json(const json& j, Seeds& s);

struct PipelineConfig {
  /// segments.jsonl ({image, attributes} rows); a synthetic registry when
  /// unset.
  std::optional<std::filesystem::path> registry;
  /// Directory holding profiles.jsonl and assessments.jsonl; a simulated
  /// survey when unset.
  std::optional<std::filesystem::path> survey_export;
  /// "synthetic" derives expert reasoning for `reasoning_fraction` of the
  /// training assessments, "none" builds Types 2/3 only (with a warning),
  /// anything else is a reasoning.jsonl path.
  std::string reasoning = "synthetic";
  std::string backend = "mock";  // or a backend server url
  Seeds seeds;

  std::size_t participants = 100;
  std::size_t registry_base = 200;
  std::size_t registry_augmented = 50;
  double reasoning_fraction = 0.15;
  double test_fraction = 0.2;

  std::size_t preference_pairs = 50;
  double annotator_error = 0.15;

  training::SftConfig sft;
  training::DpoConfig dpo;

  double match_threshold = 0.7;
  std::string embedder = "hashing";
  std::string judge = "heuristic";
  std::size_t judge_instances = 40;

  int baseline_trees = 100;
  std::size_t latent_dim = 16;
  bool ablation = true;
};

void to_json(json& j, const PipelineConfig& c);
void from_json(const json& j, PipelineConfig& c);

/// Throws Error(kConfig) for a referenced path that does not exist or an
/// out-of-range setting.
void check(const PipelineConfig& c);

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"survey", "persona",  "dataset", "sft",
                                                 "preference", "dpo", "ablation", "baseline",
                                                 "eval"};
  return names;
}

struct StageRecord {
  std::string name;
  std::string status;  // "done" | "skipped" | "failed"
  std::map<std::string, std::string> outputs;  // run-relative path -> sha256
  std::vector<std::string> warnings;
  std::optional<std::string> error;
};

struct Manifest {
  PipelineConfig config;
  std::vector<StageRecord> stages;
  std::string status;  // "complete" | "failed"
  std::optional<std::string> failed_stage;
};

void to_json(json& j, const StageRecord& s);
void from_json(const json& j, StageRecord& s);
void to_json(json& j, const Manifest& m);
void from_json(const json& j, Manifest& m);

struct RunOptions {
  /// Reuse stages whose recorded outputs are still present and unchanged.
  bool resume = false;
  /// Progress lines on stderr.
  bool verbose = false;
};

/// Runs every stage in order and writes <run_dir>/manifest.json. A stage
/// failure records the stage as failed, writes the manifest and rethrows.
Manifest run_pipeline(const PipelineConfig& config, const std::filesystem::path& run_dir,
                      const RunOptions& options = {});

/// Synthetic detector counts and latent vector for one segment: counts
/// follow the facility and road class, the latent vector mixes a
/// protection-level direction with per-image noise.
baseline::FeatureRecord synthetic_features(const synth::Segment& segment, std::size_t latent_dim,
                                           std::uint64_t seed);

}  // namespace bikelab::pipeline
