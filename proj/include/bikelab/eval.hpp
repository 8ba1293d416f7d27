#pragma once
// Rating metrics, embedding-based factor matching, the three-criterion judge
// protocol and table-shaped reports.

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bikelab/core.hpp"

namespace bikelab::eval {

// ---- ratings -------------------------------------------------------------

struct DimensionMetrics {
  double mae = 0.0;
  double em = 0.0;
  double w1 = 0.0;
  std::optional<double> pearson;  // undefined for constant series
};

struct RatingMetrics {
  std::array<DimensionMetrics, 3> per_dimension;  // safety, comfort, willingness
  DimensionMetrics average;
  std::size_t n = 0;
  std::vector<std::string> warnings;
};

void to_json(json& j, const DimensionMetrics& m);
void to_json(json& j, const RatingMetrics& m);

/// Throws Error(kAlignment) on a length mismatch or empty input.
RatingMetrics rating_metrics(std::span<const RatingTriple> pred, std::span<const RatingTriple> gt);

// ---- factors -------------------------------------------------------------

inline constexpr double kMatchThreshold = 0.7;

class Embedder {
 public:
  virtual ~Embedder() = default;
  /// Unit-normalized vectors of a fixed dimension; Error(kBackend) on failure.
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

/// Offline embedder: hashed word and character-trigram features.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 384) : dimension_(dimension) {}
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

 private:
  std::size_t dimension_;
};

/// Precomputed vectors from JSONL lines {"text": ..., "vector": [...]}.
class VectorTableEmbedder final : public Embedder {
 public:
  explicit VectorTableEmbedder(const std::filesystem::path& path);
  explicit VectorTableEmbedder(std::map<std::string, std::vector<double>> table);
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

 private:
  std::map<std::string, std::vector<double>> table_;
};

/// POST {base_url}/embed with {"model", "texts"}; reply {"embeddings": [[...]]}.
class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(std::string base_url, std::string model = "all-MiniLM-L6-v2");
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

 private:
  std::string base_url_;
  std::string model_;
};

std::unique_ptr<Embedder> make_embedder(std::string_view spec);

double cosine(std::span<const double> a, std::span<const double> b);

struct Match {
  std::size_t pred_index = 0;
  std::size_t gt_index = 0;
  std::string pred_tag;
  std::string gt_tag;
  double similarity = 0.0;

  bool operator==(const Match&) const = default;
};

struct FactorMatchResult {
  std::vector<Match> matches;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

void to_json(json& j, const FactorMatchResult& r);

/// Repeatedly takes the globally highest unused cell with similarity >=
/// threshold; ties go to the lexicographically smallest (pred, gt) index.
/// `similarity` is |pred| x |gt|.
FactorMatchResult greedy_match(const std::vector<std::vector<double>>& similarity,
                               double threshold = kMatchThreshold);
FactorMatchResult greedy_match(const FactorTagList& pred, const FactorTagList& gt,
                               Embedder& embedder, double threshold = kMatchThreshold);

struct FactorMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t evaluated = 0;
  std::vector<std::string> excluded;  // instance ids whose embedding failed
};

void to_json(json& j, const FactorMetrics& m);

/// Per-instance scores averaged over instances.
FactorMetrics factor_metrics(std::span<const FactorTagList> pred, std::span<const FactorTagList> gt,
                             std::span<const std::string> ids, Embedder& embedder,
                             double threshold = kMatchThreshold);

// ---- judge ---------------------------------------------------------------

enum class Criterion { kFactualAccuracy = 0, kLogicalCoherence = 1, kPersonaConsistency = 2 };
inline constexpr std::array<Criterion, 3> kCriteria = {
    Criterion::kFactualAccuracy, Criterion::kLogicalCoherence, Criterion::kPersonaConsistency};
std::string_view to_string(Criterion c);

struct JudgeContext {
  Persona persona = Persona::kSF;
  ImageRef image_ref;
  AttributeSet attributes;
  SegmentAssessment ground_truth;
};

/// Fixed rubric prompt for one criterion.
std::string judge_prompt(Criterion c, std::string_view explanation, const JudgeContext& ctx);

/// "a/b" -> a/b; otherwise the first number s on the 1-4 rubric -> (s-1)/3.
/// nullopt when no usable score is present.
std::optional<double> normalize_score(std::string_view reply);

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Replays recorded replies keyed by sha256(prompt). Unknown prompts throw
/// Error(kNotFound).
class FixtureJudgeClient final : public JudgeClient {
 public:
  explicit FixtureJudgeClient(const std::filesystem::path& path);
  explicit FixtureJudgeClient(std::map<std::string, std::string> replies);
  std::string complete(const std::string& prompt) override;

 private:
  std::map<std::string, std::string> replies_;
};

/// Forwards to `inner` and keeps every (prompt, reply) for fixture export.
class RecordingJudgeClient final : public JudgeClient {
 public:
  explicit RecordingJudgeClient(JudgeClient& inner) : inner_(inner) {}
  std::string complete(const std::string& prompt) override;
  /// JSONL lines {"prompt_sha256", "prompt", "reply"}.
  std::vector<json> fixtures() const;

 private:
  JudgeClient& inner_;
  std::vector<std::pair<std::string, std::string>> log_;
};

/// OpenAI-compatible chat completions endpoint.
class HttpJudgeClient final : public JudgeClient {
 public:
  HttpJudgeClient(std::string base_url, std::string model, std::string api_key);
  std::string complete(const std::string& prompt) override;

 private:
  std::string base_url_;
  std::string model_;
  std::string api_key_;
};

/// Offline rubric scorer for mock runs: checks the explanation against the
/// ground-truth factors, the verdict against the ratings, and persona cues.
class HeuristicJudgeClient final : public JudgeClient {
 public:
  std::string complete(const std::string& prompt) override;
};

/// "heuristic", "fixture:<path>" or an http(s) base url. The http client
/// reads BIKELAB_JUDGE_MODEL (default gpt-4o) and BIKELAB_JUDGE_API_KEY.
std::unique_ptr<JudgeClient> make_judge_client(std::string_view spec);

struct Transcript {
  Criterion criterion = Criterion::kFactualAccuracy;
  std::string prompt;
  std::vector<std::string> replies;  // one per attempt
};

struct JudgeResult {
  std::array<std::optional<double>, 3> scores;  // indexed by Criterion
  std::vector<Transcript> transcripts;
};

void to_json(json& j, const JudgeResult& r);

/// An unparseable reply is retried once, then the criterion is left missing.
JudgeResult judge(std::string_view explanation, const JudgeContext& ctx, JudgeClient& client);

struct JudgeSummary {
  std::array<std::optional<double>, 3> mean;
  std::array<std::size_t, 3> missing{};
};

JudgeSummary summarize(std::span<const JudgeResult> results);

// ---- reports -------------------------------------------------------------

struct Table2Row {
  std::string method;
  std::optional<double> mae, em, w1, corr, prec, rec, f1;
};

struct AblationRow {
  std::string variant;
  std::optional<double> mae, w1, f1;
};

struct Table3Row {
  std::string method;
  std::optional<double> acc, coh, cons;
};

Table2Row table2_row(std::string method, const RatingMetrics& r,
                     const std::optional<FactorMetrics>& f);

/// Reference values, kept as static content.
std::vector<Table2Row> reference_table2();
std::vector<AblationRow> reference_ablation();
std::vector<Table3Row> reference_table3();

/// Relative change formatted like "+5.2%".
std::string format_increase(double before, double after);

std::string render_table2(std::span<const Table2Row> rows);
std::string render_ablation(std::span<const AblationRow> rows);
/// Appends an Increase row from row `from` to row `to` when both are given.
std::string render_table3(std::span<const Table3Row> rows, std::optional<std::size_t> from = {},
                          std::optional<std::size_t> to = {});

json table2_json(std::span<const Table2Row> rows);
json ablation_json(std::span<const AblationRow> rows);
json table3_json(std::span<const Table3Row> rows);

}  // namespace bikelab::eval
