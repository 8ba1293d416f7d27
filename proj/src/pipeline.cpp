#include "bikelab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>

#include "bikelab/backend.hpp"
#include "bikelab/dataset.hpp"
#include "bikelab/eval.hpp"
#include "bikelab/io.hpp"
#include "bikelab/parser.hpp"
#include "bikelab/persona.hpp"
#include "bikelab/preference.hpp"
#include "bikelab/rng.hpp"
#include "bikelab/survey.hpp"

namespace bikelab::pipeline {

namespace fs = std::filesystem;

// ---- config --------------------------------------------------------------

void to_json(json& j, const Seeds& s) {
  j = json{{"survey", s.survey}, {"persona", s.persona}, {"dataset", s.dataset}, {"sft", s.sft},
           {"preference", s.preference}, {"dpo", s.dpo}, {"eval", s.eval}};
}

void from_json(const json& j, Seeds& s) {
  const Seeds d;
  s.survey = j.value("survey", d.survey);
  s.persona = j.value("persona", d.persona);
  s.dataset = j.value("dataset", d.dataset);
  s.sft = j.value("sft", d.sft);
  s.preference = j.value("preference", d.preference);
  s.dpo = j.value("dpo", d.dpo);
  s.eval = j.value("eval", d.eval);
}

namespace {

json optional_path(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

std::optional<fs::path> read_path(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return fs::path(j.at(key).get<std::string>());
}

}  // namespace

void to_json(json& j, const PipelineConfig& c) {
  j = json{{"v", kSchemaVersion},
           {"registry", optional_path(c.registry)},
           {"survey_export", optional_path(c.survey_export)},
           {"reasoning", c.reasoning},
           {"backend", c.backend},
           {"seeds", c.seeds},
           {"participants", c.participants},
           {"registry_base", c.registry_base},
           {"registry_augmented", c.registry_augmented},
           {"reasoning_fraction", c.reasoning_fraction},
           {"test_fraction", c.test_fraction},
           {"preference_pairs", c.preference_pairs},
           {"annotator_error", c.annotator_error},
           {"sft", c.sft},
           {"dpo", c.dpo},
           {"match_threshold", c.match_threshold},
           {"embedder", c.embedder},
           {"judge", c.judge},
           {"judge_instances", c.judge_instances},
           {"baseline_trees", c.baseline_trees},
           {"latent_dim", c.latent_dim},
           {"ablation", c.ablation}};
}

void from_json(const json& j, PipelineConfig& c) {
  const PipelineConfig d;
  c.registry = read_path(j, "registry");
  c.survey_export = read_path(j, "survey_export");
  c.reasoning = j.value("reasoning", d.reasoning);
  c.backend = j.value("backend", d.backend);
  c.seeds = j.value("seeds", json::object()).get<Seeds>();
  c.participants = j.value("participants", d.participants);
  c.registry_base = j.value("registry_base", d.registry_base);
  c.registry_augmented = j.value("registry_augmented", d.registry_augmented);
  c.reasoning_fraction = j.value("reasoning_fraction", d.reasoning_fraction);
  c.test_fraction = j.value("test_fraction", d.test_fraction);
  c.preference_pairs = j.value("preference_pairs", d.preference_pairs);
  c.annotator_error = j.value("annotator_error", d.annotator_error);
  c.sft = j.value("sft", json::object()).get<training::SftConfig>();
  c.dpo = j.value("dpo", json::object()).get<training::DpoConfig>();
  c.match_threshold = j.value("match_threshold", d.match_threshold);
  c.embedder = j.value("embedder", d.embedder);
  c.judge = j.value("judge", d.judge);
  c.judge_instances = j.value("judge_instances", d.judge_instances);
  c.baseline_trees = j.value("baseline_trees", d.baseline_trees);
  c.latent_dim = j.value("latent_dim", d.latent_dim);
  c.ablation = j.value("ablation", d.ablation);
}

void check(const PipelineConfig& c) {
  auto must_exist = [](const std::optional<fs::path>& p, const char* what) {
    if (p && !fs::exists(*p)) {
      throw Error(ErrorCode::kConfig, std::string(what) + " not found: " + p->string());
    }
  };
  must_exist(c.registry, "registry");
  must_exist(c.survey_export, "survey export");
  if (c.reasoning != "synthetic" && c.reasoning != "none") {
    must_exist(fs::path(c.reasoning), "reasoning file");
  }
  if (c.test_fraction <= 0 || c.test_fraction >= 1) {
    throw Error(ErrorCode::kConfig, "test_fraction must lie in (0, 1)");
  }
  if (c.reasoning_fraction < 0 || c.reasoning_fraction > 1) {
    throw Error(ErrorCode::kConfig, "reasoning_fraction must lie in [0, 1]");
  }
  if (c.annotator_error < 0 || c.annotator_error > 0.5) {
    throw Error(ErrorCode::kConfig, "annotator_error must lie in [0, 0.5]");
  }
  if (c.baseline_trees < 1) throw Error(ErrorCode::kConfig, "baseline_trees must be positive");
  if (!c.survey_export && c.participants == 0) throw Error(ErrorCode::kConfig, "no participants");
  training::check(c.sft);
  training::check(c.dpo);
}

// ---- manifest ------------------------------------------------------------

void to_json(json& j, const StageRecord& s) {
  j = json{{"name", s.name}, {"status", s.status}, {"outputs", s.outputs}, {"warnings", s.warnings}};
  if (s.error) j["error"] = *s.error;
}

void from_json(const json& j, StageRecord& s) {
  j.at("name").get_to(s.name);
  j.at("status").get_to(s.status);
  s.outputs = j.value("outputs", std::map<std::string, std::string>{});
  s.warnings = j.value("warnings", std::vector<std::string>{});
  s.error.reset();
  if (j.contains("error") && j.at("error").is_string()) s.error = j.at("error").get<std::string>();
}

void to_json(json& j, const Manifest& m) {
  j = json{{"v", kSchemaVersion}, {"config", m.config}, {"stages", m.stages}, {"status", m.status},
           {"failed_stage", m.failed_stage ? json(*m.failed_stage) : json(nullptr)}};
}

void from_json(const json& j, Manifest& m) {
  j.at("config").get_to(m.config);
  j.at("stages").get_to(m.stages);
  j.at("status").get_to(m.status);
  m.failed_stage.reset();
  if (j.contains("failed_stage") && j.at("failed_stage").is_string()) {
    m.failed_stage = j.at("failed_stage").get<std::string>();
  }
}

// ---- features ------------------------------------------------------------

baseline::FeatureRecord synthetic_features(const synth::Segment& segment, std::size_t latent_dim,
                                           std::uint64_t seed) {
  Rng rng = make_rng(mix_seed(seed, stable_hash(segment.image.image_id)), "features");
  const int level = synth::protection_level(segment.attributes);
  const auto highway = segment.attributes.get("highway").value_or("residential");
  const int busy = highway == "primary" ? 3 : highway == "secondary" ? 2 : 1;
  auto poisson_ish = [&](double mean) {
    return static_cast<int>(std::floor(mean + uniform01(rng) * (1.0 + mean)));
  };

  baseline::FeatureRecord r;
  r.image_id = segment.image.image_id;
  r.attributes = segment.attributes;
  r.detections = {
      {"bike_lane_marking", level >= 1 ? 1 + poisson_ish(1.0) : 0},
      {"buffer", level == 2 ? 1 + poisson_ish(0.5) : 0},
      {"bollard", level == 2 ? poisson_ish(2.0) : 0},
      {"traffic_signal", poisson_ish(0.3 * busy)},
      {"street_furniture", poisson_ish(0.8)},
      {"greenery", poisson_ish(1.5)},
      {"parked_car", poisson_ish(1.0 + busy)},
      {"bus", poisson_ish(0.2 * busy)},
      {"truck", poisson_ish(0.3 * busy)},
      {"pedestrian", poisson_ish(1.0)},
  };
  Rng dir = make_rng(seed, "latent-direction");
  r.latent.resize(latent_dim);
  for (std::size_t d = 0; d < latent_dim; ++d) {
    const double axis = standard_normal(dir);
    r.latent[d] = 0.6 * axis * (level - 1) + 0.8 * standard_normal(rng);
  }
  return r;
}

// ---- stages --------------------------------------------------------------

namespace {

struct Context {
  const PipelineConfig& config;
  fs::path run_dir;
  bool verbose = false;

  fs::path path(const std::string& rel) const { return run_dir / rel; }
};

struct StageOutput {
  StageRecord& record;
  const Context& ctx;

  void add(const std::string& rel) {
    record.outputs[rel] = io::sha256_file(ctx.path(rel));
  }
  void add_dir(const std::string& rel) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(ctx.path(rel))) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), ctx.run_dir).generic_string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) add(f);
  }
  void warn(std::string message) { record.warnings.push_back(std::move(message)); }
};

std::vector<synth::Segment> load_registry(const Context& ctx) {
  return io::read_records<synth::Segment>(ctx.path("survey/registry.jsonl"));
}

std::map<std::string, synth::Segment> registry_by_id(const std::vector<synth::Segment>& segments) {
  std::map<std::string, synth::Segment> out;
  for (const auto& s : segments) out[s.image.image_id] = s;
  return out;
}

std::unique_ptr<training::ModelBackend> backend_for(const Context& ctx, std::uint64_t seed) {
  const auto& b = ctx.config.backend;
  if (b == "mock") return training::make_backend("mock", seed);
  return training::make_backend("remote", seed, b);
}

/// Fresh backend with an adapter blob restored; an empty name keeps the
/// untuned model.
std::unique_ptr<training::ModelBackend> backend_at(const Context& ctx, const std::string& adapter_rel) {
  auto backend = backend_for(ctx, ctx.config.seeds.sft);
  if (!adapter_rel.empty()) backend->restore(io::read_text(ctx.path(adapter_rel)));
  return backend;
}

void stage_survey(const Context& ctx, StageOutput& out) {
  const auto& cfg = ctx.config;
  fs::create_directories(ctx.path("survey/export"));
  std::vector<synth::Segment> segments =
      cfg.registry ? io::read_records<synth::Segment>(*cfg.registry)
                   : synth::segment_registry(cfg.registry_base, cfg.registry_augmented, cfg.seeds.survey);
  std::vector<json> rows;
  for (const auto& s : segments) rows.push_back(s);
  io::write_jsonl(ctx.path("survey/registry.jsonl"), rows, "segment");
  out.add("survey/registry.jsonl");

  if (cfg.survey_export) {
    fs::copy_file(*cfg.survey_export / "profiles.jsonl", ctx.path("survey/export/profiles.jsonl"),
                  fs::copy_options::overwrite_existing);
    fs::copy_file(*cfg.survey_export / "assessments.jsonl", ctx.path("survey/export/assessments.jsonl"),
                  fs::copy_options::overwrite_existing);
  } else {
    fs::remove_all(ctx.path("survey/log"));
    std::vector<ImageRef> images;
    for (const auto& s : segments) images.push_back(s.image);
    survey::Service service(images, ctx.path("survey/log"), {.seed = cfg.seeds.survey});
    auto sims = survey::simulate_participants(service, segments, cfg.participants, cfg.seeds.survey);
    service.write_export(ctx.path("survey/export"));
    std::vector<json> truth;
    for (const auto& s : sims) {
      truth.push_back({{"v", kSchemaVersion}, {"participant_id", s.participant_id}, {"persona", s.persona}});
    }
    io::write_jsonl(ctx.path("survey/truth.jsonl"), truth, "persona_truth");
    for (const auto& w : service.warnings()) out.warn(w);
    out.add("survey/log/events.jsonl");
    out.add("survey/truth.jsonl");
  }
  out.add("survey/export/profiles.jsonl");
  out.add("survey/export/assessments.jsonl");
}

void stage_persona(const Context& ctx, StageOutput& out) {
  auto profiles = io::read_records<ComfortProfile>(ctx.path("survey/export/profiles.jsonl"));
  auto model = persona::fit_personas(profiles, ctx.config.seeds.persona);
  fs::create_directories(ctx.path("persona"));
  io::write_json(ctx.path("persona/model.json"), model);

  std::vector<json> labels;
  std::map<std::string, Persona> assigned;
  for (const auto& p : profiles) {
    auto label = persona::classify(p, model);
    assigned[p.participant_id] = label;
    labels.push_back({{"v", kSchemaVersion}, {"participant_id", p.participant_id}, {"persona", label}});
  }
  io::write_jsonl(ctx.path("persona/labels.jsonl"), labels, "persona_label");

  json report = {{"participants", profiles.size()}};
  std::map<std::string, std::size_t> counts;
  for (const auto& [id, p] : assigned) ++counts[std::string(to_string(p))];
  report["counts"] = counts;
  if (fs::exists(ctx.path("survey/truth.jsonl"))) {
    std::size_t hit = 0, n = 0;
    for (const auto& t : io::read_jsonl(ctx.path("survey/truth.jsonl"))) {
      auto it = assigned.find(t.at("participant_id").get<std::string>());
      if (it == assigned.end()) continue;
      ++n;
      hit += it->second == t.at("persona").get<Persona>();
    }
    report["recovery"] = n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
  }
  io::write_json(ctx.path("persona/report.json"), report);
  out.add("persona/model.json");
  out.add("persona/labels.jsonl");
  out.add("persona/report.json");
}

std::map<std::string, Persona> read_labels(const Context& ctx) {
  std::map<std::string, Persona> out;
  for (const auto& r : io::read_jsonl(ctx.path("persona/labels.jsonl"))) {
    out[r.at("participant_id").get<std::string>()] = r.at("persona").get<Persona>();
  }
  return out;
}

bool in_test_split(const std::string& participant_id, const Context& ctx) {
  const auto h = mix_seed(ctx.config.seeds.dataset, stable_hash(participant_id));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0) < ctx.config.test_fraction;
}

std::string reasoning_key(const std::string& participant_id, const std::string& image_id) {
  return participant_id + "|" + image_id;
}

void stage_dataset(const Context& ctx, StageOutput& out) {
  const auto& cfg = ctx.config;
  auto assessments = io::read_records<SegmentAssessment>(ctx.path("survey/export/assessments.jsonl"));
  auto labels = read_labels(ctx);
  auto registry = registry_by_id(load_registry(ctx));
  fs::create_directories(ctx.path("dataset"));

  std::vector<SegmentAssessment> train, test;
  std::size_t unlabeled = 0;
  for (const auto& a : assessments) {
    if (!labels.count(a.participant_id)) {
      ++unlabeled;
      continue;
    }
    (in_test_split(a.participant_id, ctx) ? test : train).push_back(a);
  }
  if (unlabeled) out.warn(std::to_string(unlabeled) + " assessments without a comfort profile dropped");
  if (train.empty() || test.empty()) throw Error(ErrorCode::kInsufficientData, "empty train or test split");

  auto attrs_of = [&](const SegmentAssessment& a) -> const AttributeSet& {
    auto it = registry.find(a.image_ref.image_id);
    if (it == registry.end()) throw Error(ErrorCode::kNotFound, "image not in registry: " + a.image_ref.image_id);
    return it->second.attributes;
  };

  std::map<std::string, std::string> reasoning;
  if (cfg.reasoning == "synthetic") {
    const auto n = static_cast<std::size_t>(std::floor(cfg.reasoning_fraction * static_cast<double>(train.size())));
    std::vector<json> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = train[i];
      auto text = synth::expert_reasoning(a, labels.at(a.participant_id), attrs_of(a));
      reasoning[reasoning_key(a.participant_id, a.image_ref.image_id)] = text;
      rows.push_back({{"v", kSchemaVersion}, {"participant_id", a.participant_id},
                      {"image_id", a.image_ref.image_id}, {"reasoning", text}});
    }
    io::write_jsonl(ctx.path("dataset/reasoning.jsonl"), rows, "expert_reasoning");
    out.add("dataset/reasoning.jsonl");
  } else if (cfg.reasoning == "none") {
    out.warn("no reasoning annotations: building Type 2 and Type 3 examples only");
  } else {
    for (const auto& r : io::read_jsonl(cfg.reasoning)) {
      reasoning[reasoning_key(r.at("participant_id").get<std::string>(), r.at("image_id").get<std::string>())] =
          r.at("reasoning").get<std::string>();
    }
  }

  std::vector<dataset::TrainingExample> examples;
  std::size_t rejected = 0;
  for (const auto& a : train) {
    const Persona p = labels.at(a.participant_id);
    const auto& attrs = attrs_of(a);
    auto r = reasoning.find(reasoning_key(a.participant_id, a.image_ref.image_id));
    if (r != reasoning.end()) {
      try {
        examples.push_back(dataset::build_type1(a, r->second, p, attrs));
      } catch (const Error& e) {
        ++rejected;
      }
    }
    examples.push_back(dataset::build_type2(a, p, attrs));
    examples.push_back(dataset::build_type3(a, p, attrs));
  }
  if (rejected) out.warn(std::to_string(rejected) + " reasoning annotations rejected");
  std::vector<dataset::TrainingExample> held_out;
  for (const auto& a : test) held_out.push_back(dataset::build_type2(a, labels.at(a.participant_id), attrs_of(a)));

  std::array<std::size_t, 3> pools{};
  for (const auto& e : examples) ++pools[static_cast<int>(e.type) - 1];
  json report = {{"train_assessments", train.size()},
                 {"test_assessments", test.size()},
                 {"pools", {{"type1", pools[0]}, {"type2", pools[1]}, {"type3", pools[2]}}},
                 {"examples", examples.size()}};
  const std::size_t budget = cfg.sft.epoch_budget ? cfg.sft.epoch_budget : examples.size();
  const auto counts = dataset::plan_counts(pools, budget, cfg.sft.ratios);
  report["epoch_budget"] = budget;
  report["epoch_counts"] = counts;

  io::write_jsonl(ctx.path("dataset/train.jsonl"), io::to_records(examples), "training_example");
  io::write_jsonl(ctx.path("dataset/test.jsonl"), io::to_records(held_out), "training_example");
  io::write_json(ctx.path("dataset/report.json"), report);
  out.add("dataset/train.jsonl");
  out.add("dataset/test.jsonl");
  out.add("dataset/report.json");
}

std::vector<dataset::TrainingExample> read_examples(const Context& ctx, const std::string& rel) {
  return io::read_records<dataset::TrainingExample>(ctx.path(rel));
}

void run_sft_into(const Context& ctx, std::span<const dataset::TrainingExample> examples,
                  const std::string& dir, StageOutput& out) {
  auto cfg = ctx.config.sft;
  cfg.seed = ctx.config.seeds.sft;
  auto backend = backend_for(ctx, ctx.config.seeds.sft);
  fs::create_directories(ctx.path(dir));
  training::run_sft(examples, cfg, *backend, {.run_dir = ctx.path(dir)});
  out.add(dir + "/adapter.bin");
  out.add(dir + "/loss_log.jsonl");
  out.add(dir + "/report.json");
}

void stage_sft(const Context& ctx, StageOutput& out) {
  auto examples = read_examples(ctx, "dataset/train.jsonl");
  run_sft_into(ctx, examples, "sft", out);
}

/// Rating and factor distance of a completion to the reference; lower is
/// better.
double distance_to_reference(const std::string& completion, const dataset::TrainingExample& ref) {
  parser::ParsedOutput parsed;
  try {
    parsed = parser::parse(completion);
  } catch (const Error&) {
    return 1e9;
  }
  double d = 0;
  for (auto dim : {RatingDimension::kSafety, RatingDimension::kComfort, RatingDimension::kWillingness}) {
    d += std::abs(parsed.ratings.get(dim) - ref.ratings.get(dim));
  }
  std::set<std::string> gt;
  for (const auto& t : ref.factors.tags) gt.insert(tag_key(t));
  std::size_t shared = 0;
  for (const auto& t : parsed.factors.tags) shared += gt.count(tag_key(t));
  return d - 0.5 * static_cast<double>(shared);
}

void stage_preference(const Context& ctx, StageOutput& out) {
  const auto& cfg = ctx.config;
  auto examples = read_examples(ctx, "dataset/train.jsonl");
  std::vector<preference::InstanceRef> instances;
  std::map<std::string, dataset::TrainingExample> reference;
  for (const auto& e : examples) {
    if (e.type != dataset::ExampleType::kStructured) continue;
    const auto key = std::string(to_string(e.persona)) + "|" + e.image_ref.image_id;
    if (!reference.emplace(key, e).second) continue;
    instances.push_back({e.persona, e.image_ref, e.attributes});
  }
  auto backend = backend_at(ctx, "sft/adapter.bin");
  auto sampled = preference::sample_pairs(instances, std::min(cfg.preference_pairs, instances.size()),
                                          *backend, cfg.seeds.preference);
  for (const auto& s : sampled.skipped) out.warn("skipped " + s.instance.image_ref.image_id + ": " + s.reason);

  // Votes go through the annotation service so quorum rules apply.
  fs::remove_all(ctx.path("preference/annotation"));
  fs::create_directories(ctx.path("preference"));
  std::vector<ImageRef> images;
  for (const auto& s : load_registry(ctx)) images.push_back(s.image);
  survey::Service service(images, ctx.path("preference/annotation"));
  service.add_pairs(sampled.pairs);
  const std::vector<std::string> annotators = {"expert-1", "expert-2", "expert-3"};
  for (const auto& annotator : annotators) {
    Rng rng = make_rng(mix_seed(cfg.seeds.preference, stable_hash(annotator)), "annotator");
    for (const auto& pair : service.list_tasks(annotator)) {
      const auto& ref = reference.at(std::string(to_string(pair.instance.persona)) + "|" +
                                     pair.instance.image_ref.image_id);
      const double da = distance_to_reference(pair.completion_a, ref);
      const double db = distance_to_reference(pair.completion_b, ref);
      bool pick_a = da < db || (da == db && uniform01(rng) < 0.5);
      if (uniform01(rng) < cfg.annotator_error) pick_a = !pick_a;
      service.submit_vote({pair.pair_id, annotator, pick_a ? preference::Choice::kA : preference::Choice::kB, {}});
    }
  }
  auto pairs = service.pairs();
  auto votes = service.votes();
  auto summary = preference::tally_all(pairs, votes);

  std::vector<json> pair_rows(pairs.begin(), pairs.end());
  std::vector<json> vote_rows(votes.begin(), votes.end());
  std::vector<json> decided(summary.decided.begin(), summary.decided.end());
  io::write_jsonl(ctx.path("preference/candidates.jsonl"), pair_rows, "candidate_pair");
  io::write_jsonl(ctx.path("preference/votes.jsonl"), vote_rows, "vote");
  io::write_jsonl(ctx.path("preference/pairs.jsonl"), decided, "preference_pair");
  std::size_t unanimous = 0;
  for (const auto& p : summary.decided) unanimous += p.vote_margin == 3;
  io::write_json(ctx.path("preference/report.json"),
                 {{"candidates", pairs.size()}, {"skipped", sampled.skipped.size()},
                  {"votes", votes.size()}, {"decided", summary.decided.size()},
                  {"unanimous", unanimous}, {"pending", summary.pending}});
  out.add("preference/annotation/events.jsonl");
  out.add("preference/candidates.jsonl");
  out.add("preference/votes.jsonl");
  out.add("preference/pairs.jsonl");
  out.add("preference/report.json");
}

void stage_dpo(const Context& ctx, StageOutput& out) {
  auto pairs = io::read_records<PreferencePair>(ctx.path("preference/pairs.jsonl"));
  if (pairs.empty()) throw Error(ErrorCode::kInsufficientData, "no decided preference pairs");
  auto backend = backend_at(ctx, "sft/adapter.bin");
  auto cfg = ctx.config.dpo;
  cfg.seed = ctx.config.seeds.dpo;
  fs::create_directories(ctx.path("dpo"));
  training::run_dpo(pairs, cfg, *backend, {.run_dir = ctx.path("dpo")});
  out.add("dpo/adapter.bin");
  out.add("dpo/loss_log.jsonl");
  out.add("dpo/report.json");
}

void stage_ablation(const Context& ctx, StageOutput& out) {
  if (!ctx.config.ablation) {
    out.warn("ablation disabled");
    return;
  }
  auto examples = read_examples(ctx, "dataset/train.jsonl");
  std::vector<dataset::TrainingExample> t3, t23;
  for (const auto& e : examples) {
    if (e.type == dataset::ExampleType::kRating) t3.push_back(e);
    if (e.type != dataset::ExampleType::kReasoning) t23.push_back(e);
  }
  run_sft_into(ctx, t3, "ablation/type3", out);
  run_sft_into(ctx, t23, "ablation/type23", out);
}

void stage_baseline(const Context& ctx, StageOutput& out) {
  const auto& cfg = ctx.config;
  auto segments = load_registry(ctx);
  fs::create_directories(ctx.path("baseline"));
  const auto schema = baseline::default_schema(cfg.latent_dim);
  std::map<std::string, std::vector<double>> features;
  std::vector<json> rows;
  for (const auto& s : segments) {
    auto rec = synthetic_features(s, cfg.latent_dim, cfg.seeds.eval);
    features[rec.image_id] = baseline::assemble_features(schema, rec.detections, rec.attributes, rec.latent);
    rows.push_back(rec);
  }
  io::write_jsonl(ctx.path("baseline/features.jsonl"), rows, "feature_record");

  auto train = read_examples(ctx, "dataset/train.jsonl");
  std::vector<Point> x;
  std::vector<RatingTriple> ratings;
  std::vector<FactorTagList> factors;
  for (const auto& e : train) {
    if (e.type != dataset::ExampleType::kStructured) continue;
    x.push_back(features.at(e.image_ref.image_id));
    ratings.push_back(e.ratings);
    factors.push_back(e.factors);
  }
  baseline::BaselineConfig bc;
  bc.forest.trees = cfg.baseline_trees;
  bc.forest.seed = cfg.seeds.eval;
  bc.smote.seed = cfg.seeds.eval;
  auto model = baseline::train_baseline(schema, x, ratings, factors, bc);

  std::vector<json> predictions;
  for (const auto& e : read_examples(ctx, "dataset/test.jsonl")) {
    auto p = baseline::predict(model, features.at(e.image_ref.image_id));
    json row = {{"v", kSchemaVersion}, {"example_id", e.example_id}};
    row["ratings"] = p.ratings;
    row["factors"] = p.factors;
    predictions.push_back(std::move(row));
  }
  io::write_json(ctx.path("baseline/model.json"), model);
  io::write_jsonl(ctx.path("baseline/predictions.jsonl"), predictions, "baseline_prediction");
  out.add("baseline/features.jsonl");
  out.add("baseline/model.json");
  out.add("baseline/predictions.jsonl");
}

struct Predictions {
  std::vector<RatingTriple> ratings;
  std::vector<FactorTagList> factors;
  std::size_t unparseable = 0;
};

Predictions predict_structured(training::ModelBackend& backend,
                               std::span<const dataset::TrainingExample> test) {
  Predictions p;
  for (const auto& e : test) {
    training::GenerationRequest req{e.persona, e.image_ref, e.attributes, e.prompt, 0.0};
    try {
      auto parsed = parser::parse(backend.generate(req));
      p.ratings.push_back(parsed.ratings);
      p.factors.push_back(parsed.factors);
    } catch (const Error&) {
      // Unparseable output scores as the scale midpoint with no factors.
      ++p.unparseable;
      p.ratings.push_back({2, 2, 2});
      p.factors.push_back({});
    }
  }
  return p;
}

void stage_eval(const Context& ctx, StageOutput& out) {
  const auto& cfg = ctx.config;
  auto test = read_examples(ctx, "dataset/test.jsonl");
  std::vector<RatingTriple> gt_ratings;
  std::vector<FactorTagList> gt_factors;
  std::vector<std::string> ids;
  for (const auto& e : test) {
    gt_ratings.push_back(e.ratings);
    gt_factors.push_back(e.factors);
    ids.push_back(e.example_id);
  }
  auto embedder = eval::make_embedder(cfg.embedder);
  fs::create_directories(ctx.path("reports"));
  json report = {{"v", kSchemaVersion}, {"test_instances", test.size()}};

  auto score = [&](const std::string& name, const Predictions& p, bool with_factors) {
    auto r = eval::rating_metrics(p.ratings, gt_ratings);
    std::optional<eval::FactorMetrics> f;
    if (with_factors) f = eval::factor_metrics(p.factors, gt_factors, ids, *embedder, cfg.match_threshold);
    report["models"][name] = {{"ratings", r}, {"unparseable", p.unparseable}};
    if (f) report["models"][name]["factors"] = *f;
    return eval::table2_row(name, r, f);
  };
  auto model_predictions = [&](const std::string& adapter) {
    auto backend = backend_at(ctx, adapter);
    return predict_structured(*backend, test);
  };

  std::vector<eval::Table2Row> table2;
  table2.push_back(score("Zero-shot (untuned)", model_predictions(""), true));

  Predictions rf;
  std::map<std::string, json> by_id;
  for (const auto& row : io::read_jsonl(ctx.path("baseline/predictions.jsonl"))) {
    by_id[row.at("example_id").get<std::string>()] = row;
  }
  for (const auto& e : test) {
    const auto& row = by_id.at(e.example_id);
    rf.ratings.push_back(row.at("ratings").get<RatingTriple>());
    rf.factors.push_back(row.at("factors").get<FactorTagList>());
  }
  table2.push_back(score("KS-RF (Rating-only)", rf, false));
  table2.push_back(score("KS-RF", rf, true));
  auto sft = model_predictions("sft/adapter.bin");
  table2.push_back(score("Ours (SFT)", sft, true));
  table2.push_back(score("Ours (SFT+DPO)", model_predictions("dpo/adapter.bin"), true));

  std::vector<eval::AblationRow> ablation;
  if (cfg.ablation) {
    auto ablate = [&](const std::string& name, const std::string& adapter) {
      auto p = model_predictions(adapter);
      auto r = eval::rating_metrics(p.ratings, gt_ratings);
      auto f = eval::factor_metrics(p.factors, gt_factors, ids, *embedder, cfg.match_threshold);
      ablation.push_back({name, r.average.mae, r.average.w1, f.f1});
    };
    ablate("Type 3 only", "ablation/type3/adapter.bin");
    ablate("Type 3 + Type 2", "ablation/type23/adapter.bin");
    auto r = eval::rating_metrics(sft.ratings, gt_ratings);
    auto f = eval::factor_metrics(sft.factors, gt_factors, ids, *embedder, cfg.match_threshold);
    ablation.push_back({"Full (Type 1+2+3)", r.average.mae, r.average.w1, f.f1});
  }

  // Explanation quality on the first judge_instances test items.
  auto judge_client = eval::make_judge_client(cfg.judge);
  eval::RecordingJudgeClient recorder(*judge_client);
  std::vector<eval::Table3Row> table3;
  json transcripts = json::array();
  const std::size_t n_judge = std::min(cfg.judge_instances, test.size());
  for (const auto& [name, adapter] : std::vector<std::pair<std::string, std::string>>{
           {"Zero-shot (untuned)", ""}, {"Ours (SFT)", "sft/adapter.bin"}, {"Ours+DPO", "dpo/adapter.bin"}}) {
    auto backend = backend_at(ctx, adapter);
    std::vector<eval::JudgeResult> results;
    for (std::size_t i = 0; i < n_judge; ++i) {
      const auto& e = test[i];
      training::GenerationRequest req{
          e.persona, e.image_ref, e.attributes,
          dataset::render_prompt(dataset::ExampleType::kReasoning, e.persona, e.attributes), 0.0};
      eval::JudgeContext jc{e.persona, e.image_ref, e.attributes,
                            SegmentAssessment{"", e.image_ref, e.ratings, e.factors, std::nullopt, 0}};
      results.push_back(eval::judge(backend->generate(req), jc, recorder));
      transcripts.push_back({{"model", name}, {"example_id", e.example_id}, {"result", results.back()}});
    }
    auto s = eval::summarize(results);
    table3.push_back({name, s.mean[0], s.mean[1], s.mean[2]});
    report["judge"][name] = {{"missing", s.missing}};
  }

  const auto t2 = eval::render_table2(table2);
  const auto t3 = eval::render_table3(table3, 1, 2);
  io::write_text(ctx.path("reports/table2.txt"), t2);
  io::write_json(ctx.path("reports/table2.json"), eval::table2_json(table2));
  io::write_text(ctx.path("reports/table3.txt"), t3);
  io::write_json(ctx.path("reports/table3.json"), eval::table3_json(table3));
  io::write_jsonl(ctx.path("reports/judge_transcripts.jsonl"),
                  std::vector<json>(transcripts.begin(), transcripts.end()), "judge_transcript");
  io::write_jsonl(ctx.path("reports/judge_fixtures.jsonl"), recorder.fixtures(), "judge_fixture");
  out.add("reports/table2.txt");
  out.add("reports/table2.json");
  out.add("reports/table3.txt");
  out.add("reports/table3.json");
  out.add("reports/judge_transcripts.jsonl");
  out.add("reports/judge_fixtures.jsonl");
  if (cfg.ablation) {
    io::write_text(ctx.path("reports/ablation.txt"), eval::render_ablation(ablation));
    io::write_json(ctx.path("reports/ablation.json"), eval::ablation_json(ablation));
    out.add("reports/ablation.txt");
    out.add("reports/ablation.json");
  }
  report["reference_table2"] = eval::table2_json(eval::reference_table2());
  report["reference_table3"] = eval::table3_json(eval::reference_table3());
  io::write_json(ctx.path("reports/eval_report.json"), report);
  out.add("reports/eval_report.json");
}

bool outputs_intact(const Context& ctx, const StageRecord& rec) {
  if (rec.status != "done") return false;
  for (const auto& [rel, hash] : rec.outputs) {
    if (!fs::exists(ctx.path(rel)) || io::sha256_file(ctx.path(rel)) != hash) return false;
  }
  return true;
}

}  // namespace

Manifest run_pipeline(const PipelineConfig& config, const fs::path& run_dir, const RunOptions& options) {
  check(config);
  fs::create_directories(run_dir);
  Context ctx{config, run_dir, options.verbose};
  const auto manifest_path = run_dir / "manifest.json";

  std::map<std::string, StageRecord> previous;
  if (options.resume && fs::exists(manifest_path)) {
    auto old = io::read_json(manifest_path).get<Manifest>();
    if (json(old.config) == json(config)) {
      for (auto& s : old.stages) previous[s.name] = s;
    }
  }

  using StageFn = void (*)(const Context&, StageOutput&);
  const std::vector<std::pair<std::string, StageFn>> stages = {
      {"survey", stage_survey},         {"persona", stage_persona}, {"dataset", stage_dataset},
      {"sft", stage_sft},               {"preference", stage_preference},
      {"dpo", stage_dpo},               {"ablation", stage_ablation},
      {"baseline", stage_baseline},     {"eval", stage_eval}};

  Manifest manifest;
  manifest.config = config;
  manifest.status = "complete";
  bool reuse = options.resume;
  for (const auto& [name, fn] : stages) {
    auto prev = previous.find(name);
    if (reuse && prev != previous.end() && outputs_intact(ctx, prev->second)) {
      manifest.stages.push_back(prev->second);
      if (options.verbose) std::fprintf(stderr, "[pipeline] %s: reused\n", name.c_str());
      continue;
    }
    reuse = false;  // everything downstream of a rerun stage reruns too
    StageRecord record{name, "done", {}, {}, std::nullopt};
    StageOutput out{record, ctx};
    const auto start = std::chrono::steady_clock::now();
    try {
      fn(ctx, out);
    } catch (const std::exception& e) {
      record.status = "failed";
      record.error = e.what();
      manifest.stages.push_back(record);
      manifest.status = "failed";
      manifest.failed_stage = name;
      io::write_json(manifest_path, manifest);
      throw;
    }
    if (options.verbose) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::fprintf(stderr, "[pipeline] %s: done in %.2fs\n", name.c_str(), secs);
      for (const auto& w : record.warnings) std::fprintf(stderr, "[pipeline]   warning: %s\n", w.c_str());
    }
    manifest.stages.push_back(std::move(record));
  }
  io::write_json(manifest_path, manifest);
  return manifest;
}

}  // namespace bikelab::pipeline
