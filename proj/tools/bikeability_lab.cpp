// bikeability-lab: umbrella command over every pipeline stage.

#include <CLI11.hpp>
#include <httplib.h>

#include <cstdio>
#include <cstdlib>
#include <atomic>
#include <iostream>
#include <map>
#include <set>
#include <thread>

#include "bikelab/augment.hpp"
#include "bikelab/backend.hpp"
#include "bikelab/baseline.hpp"
#include "bikelab/dataset.hpp"
#include "bikelab/eval.hpp"
#include "bikelab/io.hpp"
#include "bikelab/parser.hpp"
#include "bikelab/persona.hpp"
#include "bikelab/pipeline.hpp"
#include "bikelab/preference.hpp"
#include "bikelab/survey.hpp"
#include "bikelab/synth.hpp"
#include "bikelab/training.hpp"

using namespace bikelab;
namespace fs = std::filesystem;

namespace {

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

/// "host:port" or ":port".
std::pair<std::string, int> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::kConfig, "bind address must be host:port: " + bind);
  std::string host = bind.substr(0, colon);
  return {host.empty() ? "0.0.0.0" : host, std::stoi(bind.substr(colon + 1))};
}

std::unique_ptr<training::ModelBackend> open_backend(const std::string& spec, std::uint64_t seed,
                                                     const std::string& adapter) {
  auto backend = spec == "mock" ? training::make_backend("mock", seed)
                                : training::make_backend("remote", seed, spec);
  if (!adapter.empty()) backend->restore(io::read_text(adapter));
  return backend;
}

template <typename T>
void write_records(const fs::path& path, const std::vector<T>& values, std::string_view schema) {
  io::write_jsonl(path, io::to_records(values), schema);
}

std::string id_of(const json& row) {
  for (const auto* key : {"id", "example_id", "pair_id"}) {
    if (row.contains(key)) return row.at(key).get<std::string>();
  }
  if (row.contains("image_ref")) {
    return row.at("participant_id").get<std::string>() + "|" +
           row.at("image_ref").at("image_id").get<std::string>();
  }
  throw ValidationError("id", "row has no id, example_id or image_ref");
}

std::map<std::string, json> index_rows(const fs::path& path) {
  std::map<std::string, json> out;
  for (auto& row : io::read_jsonl(path)) {
    auto id = id_of(row);
    if (!out.emplace(id, std::move(row)).second) throw ValidationError("id", "duplicate id " + id);
  }
  return out;
}

/// Predictions and ground truth joined on id, in ground-truth order.
struct Joined {
  std::vector<std::string> ids;
  std::vector<json> pred;
  std::vector<json> gt;
};

Joined join(const fs::path& pred_path, const fs::path& gt_path) {
  auto pred = index_rows(pred_path);
  Joined out;
  for (auto& [id, row] : index_rows(gt_path)) {
    auto it = pred.find(id);
    if (it == pred.end()) throw Error(ErrorCode::kConsistency, "no prediction for " + id);
    out.ids.push_back(id);
    out.pred.push_back(it->second);
    out.gt.push_back(row);
  }
  if (out.ids.size() != pred.size()) {
    throw Error(ErrorCode::kConsistency, "predictions without ground truth");
  }
  return out;
}

void emit(const json& report, const std::string& out) {
  if (out.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    io::write_json(out, report);
  }
}

// ---- subcommands ---------------------------------------------------------

void add_synth(CLI::App& app) {
  auto* synth = app.add_subcommand("synth", "Synthetic registries and populations for offline runs");
  synth->require_subcommand(1);

  static std::size_t base = 200, augmented = 50, n = 100;
  static std::uint64_t seed = 0;
  static std::string out;
  auto* reg = synth->add_subcommand("registry", "Street segments with OSM attributes");
  reg->add_option("--base", base);
  reg->add_option("--augmented", augmented);
  reg->add_option("--seed", seed);
  reg->add_option("--out", out)->required();
  reg->callback([] { write_records(out, synth::segment_registry(base, augmented, seed), "segment"); });

  auto* prof = synth->add_subcommand("profiles", "Comfort profiles drawn with the persona shares");
  prof->add_option("--n", n);
  prof->add_option("--seed", seed);
  prof->add_option("--out", out)->required();
  prof->callback([] {
    std::vector<ComfortProfile> profiles;
    for (auto& p : synth::weighted_population(n, seed)) profiles.push_back(std::move(p.profile));
    write_records(out, profiles, "comfort_profile");
  });
}

void add_persona(CLI::App& app) {
  auto* persona = app.add_subcommand("persona", "Comfort-profile clustering into four personas");
  persona->require_subcommand(1);
  static std::string in, out, model_path, dimension = "willingness";
  static std::uint64_t seed = 0;
  static int restarts = persona::kDefaultRestarts;

  auto* fit = persona->add_subcommand("fit", "Fit the 4-cluster model");
  fit->add_option("--in", in, "profiles.jsonl")->required();
  fit->add_option("--seed", seed);
  fit->add_option("--restarts", restarts);
  fit->add_option("--out", out, "model.json")->required();
  fit->callback([] {
    auto profiles = io::read_records<ComfortProfile>(in);
    io::write_json(out, persona::fit_personas(profiles, seed, restarts));
  });

  auto* classify = persona->add_subcommand("classify", "Label profiles with a fitted model");
  classify->add_option("--model", model_path)->required();
  classify->add_option("--in", in)->required();
  classify->add_option("--out", out)->required();
  classify->callback([] {
    auto model = io::read_json(model_path).get<persona::ClusterModel>();
    std::vector<json> rows;
    for (const auto& p : io::read_records<ComfortProfile>(in)) {
      rows.push_back({{"v", kSchemaVersion}, {"participant_id", p.participant_id},
                      {"persona", persona::classify(p, model)}});
    }
    io::write_jsonl(out, rows, "persona_label");
  });

  auto* variance = persona->add_subcommand("variance", "Within-participant rating variance");
  variance->add_option("--in", in, "assessments.jsonl")->required();
  variance->add_option("--dimension", dimension);
  variance->add_option("--out", out);
  variance->callback([] {
    auto assessments = io::read_records<SegmentAssessment>(in);
    emit(persona::variance_analysis(assessments, rating_dimension_from_string(dimension)), out);
  });
}

void add_dataset(CLI::App& app) {
  auto* ds = app.add_subcommand("dataset", "Instruction-tuning examples");
  ds->require_subcommand(1);
  static std::string survey_path, reasoning_path, personas_path, registry_path, out, data;
  static std::size_t budget = 0;
  static std::uint64_t seed = 0;
  static std::vector<std::size_t> pools;

  auto* build = ds->add_subcommand("build", "Types 1-3 from assessments, reasoning and persona labels");
  build->add_option("--survey", survey_path, "assessments.jsonl")->required();
  build->add_option("--reasoning", reasoning_path, "rows {participant_id, image_id, reasoning}");
  build->add_option("--personas", personas_path, "labels.jsonl")->required();
  build->add_option("--registry", registry_path, "segments.jsonl")->required();
  build->add_option("--out", out)->required();
  build->callback([] {
    std::map<std::string, Persona> labels;
    for (const auto& r : io::read_jsonl(personas_path)) {
      labels[r.at("participant_id").get<std::string>()] = r.at("persona").get<Persona>();
    }
    std::map<std::string, AttributeSet> attrs;
    for (const auto& s : io::read_records<synth::Segment>(registry_path)) attrs[s.image.image_id] = s.attributes;
    std::map<std::string, std::string> reasoning;
    if (!reasoning_path.empty() && fs::exists(reasoning_path)) {
      for (const auto& r : io::read_jsonl(reasoning_path)) {
        reasoning[r.at("participant_id").get<std::string>() + "|" + r.at("image_id").get<std::string>()] =
            r.at("reasoning").get<std::string>();
      }
    } else {
      std::fprintf(stderr, "warning: no reasoning annotations, building Type 2 and Type 3 only\n");
    }
    std::vector<dataset::TrainingExample> examples;
    for (const auto& a : io::read_records<SegmentAssessment>(survey_path)) {
      auto p = labels.find(a.participant_id);
      auto at = attrs.find(a.image_ref.image_id);
      if (p == labels.end() || at == attrs.end()) {
        std::fprintf(stderr, "warning: skipping %s/%s (no persona or attributes)\n", a.participant_id.c_str(),
                     a.image_ref.image_id.c_str());
        continue;
      }
      auto r = reasoning.find(a.participant_id + "|" + a.image_ref.image_id);
      if (r != reasoning.end()) examples.push_back(dataset::build_type1(a, r->second, p->second, at->second));
      examples.push_back(dataset::build_type2(a, p->second, at->second));
      examples.push_back(dataset::build_type3(a, p->second, at->second));
    }
    write_records(out, examples, "training_example");
  });

  auto* plan = ds->add_subcommand("plan-epoch", "Per-type draws for one epoch");
  plan->add_option("--budget", budget)->required();
  plan->add_option("--seed", seed);
  plan->add_option("--data", data, "train.jsonl supplying the pool sizes");
  plan->add_option("--pools", pools, "type1 type2 type3 pool sizes")->expected(3);
  plan->callback([] {
    std::array<std::size_t, 3> sizes{};
    if (!data.empty()) {
      for (const auto& e : io::read_records<dataset::TrainingExample>(data)) ++sizes[static_cast<int>(e.type) - 1];
    } else if (pools.size() == 3) {
      sizes = {pools[0], pools[1], pools[2]};
    } else {
      throw Error(ErrorCode::kConfig, "give --data or --pools");
    }
    std::cout << json(dataset::plan_epoch(sizes, budget, dataset::kDefaultRatios, seed)).dump() << "\n";
  });
}

void add_parse(CLI::App& app) {
  static std::string in, out, errors;
  auto* parse = app.add_subcommand("parse", "Structured ratings and factors from model generations");
  parse->add_option("--in", in, "rows {id, text}")->required();
  parse->add_option("--out", out)->required();
  parse->add_option("--errors", errors, "rejected rows");
  parse->callback([] {
    std::vector<json> parsed, rejects;
    for (const auto& row : io::read_jsonl(in)) {
      const auto id = id_of(row);
      try {
        json j = parser::parse(row.at("text").get<std::string>());
        j["id"] = id;
        parsed.push_back(std::move(j));
      } catch (const Error& e) {
        json reject = {{"id", id}, {"message", e.what()}};
        reject["code"] = std::string(error_code_name(e.code()));
        rejects.push_back(std::move(reject));
      }
    }
    io::write_jsonl(out, parsed, "parsed_output");
    if (!errors.empty()) io::write_jsonl(errors, rejects, "parse_error");
    std::fprintf(stderr, "parsed %zu, rejected %zu\n", parsed.size(), rejects.size());
  });
}

void add_train(CLI::App& app) {
  auto* train = app.add_subcommand("train", "Adapter fine-tuning");
  train->require_subcommand(1);
  static std::string data, pairs, config, backend = "mock", out, init;
  static std::uint64_t seed = 0;
  static bool resume = false;

  auto* sft = train->add_subcommand("sft", "Supervised fine-tuning");
  sft->add_option("--data", data)->required();
  sft->add_option("--config", config, "sft.json");
  sft->add_option("--backend", backend, "mock or a backend server url");
  sft->add_option("--seed", seed);
  sft->add_option("--out", out)->required();
  sft->add_flag("--resume", resume);
  sft->callback([] {
    auto cfg = config.empty() ? training::SftConfig{} : io::read_json(config).get<training::SftConfig>();
    auto examples = io::read_records<dataset::TrainingExample>(data);
    auto model = open_backend(backend, seed, "");
    auto report = training::run_sft(examples, cfg, *model, {.run_dir = out, .resume = resume});
    std::cout << json(report).dump(2) << "\n";
  });

  auto* dpo = train->add_subcommand("dpo", "Preference optimization against a frozen reference");
  dpo->add_option("--pairs", pairs)->required();
  dpo->add_option("--config", config, "dpo.json");
  dpo->add_option("--backend", backend);
  dpo->add_option("--init", init, "SFT adapter.bin to start from");
  dpo->add_option("--seed", seed);
  dpo->add_option("--out", out)->required();
  dpo->add_flag("--resume", resume);
  dpo->callback([] {
    auto cfg = config.empty() ? training::DpoConfig{} : io::read_json(config).get<training::DpoConfig>();
    auto prefs = io::read_records<PreferencePair>(pairs);
    auto model = open_backend(backend, seed, init);
    auto report = training::run_dpo(prefs, cfg, *model, {.run_dir = out, .resume = resume});
    std::cout << json(report).dump(2) << "\n";
  });

  static std::string bind = ":8090";
  auto* serve = train->add_subcommand("serve-mock", "Serve the mock model over the backend protocol");
  serve->add_option("--bind", bind);
  serve->add_option("--seed", seed);
  serve->callback([] {
    auto model = training::make_backend("mock", seed);
    httplib::Server server;
    training::bind_backend_routes(server, *model);
    auto [host, port] = split_bind(bind);
    std::fprintf(stderr, "mock backend on %s:%d\n", host.c_str(), port);
    if (!server.listen(host, port)) throw Error(ErrorCode::kIo, "cannot bind " + bind);
  });
}

void add_prefs(CLI::App& app) {
  auto* prefs = app.add_subcommand("prefs", "Preference pair sampling and vote tallies");
  prefs->require_subcommand(1);
  static std::string instances, backend = "mock", adapter, out, pairs, votes;
  static std::size_t n = 500;
  static std::uint64_t seed = 0;

  auto* sample = prefs->add_subcommand("sample", "Two explanations per instance at different temperatures");
  sample->add_option("--instances", instances, "train.jsonl; Type 2 rows define the instances")->required();
  sample->add_option("--n", n);
  sample->add_option("--backend", backend);
  sample->add_option("--adapter", adapter);
  sample->add_option("--seed", seed);
  sample->add_option("--out", out)->required();
  sample->callback([] {
    std::vector<preference::InstanceRef> refs;
    std::set<std::string> seen;
    for (const auto& e : io::read_records<dataset::TrainingExample>(instances)) {
      if (e.type != dataset::ExampleType::kStructured) continue;
      if (!seen.insert(std::string(to_string(e.persona)) + "|" + e.image_ref.image_id).second) continue;
      refs.push_back({e.persona, e.image_ref, e.attributes});
    }
    auto model = open_backend(backend, seed, adapter);
    auto result = preference::sample_pairs(refs, n, *model, seed);
    for (const auto& s : result.skipped) {
      std::fprintf(stderr, "skipped %s: %s\n", s.instance.image_ref.image_id.c_str(), s.reason.c_str());
    }
    io::write_jsonl(out, std::vector<json>(result.pairs.begin(), result.pairs.end()), "candidate_pair");
  });

  auto* tally = prefs->add_subcommand("tally", "Majority of three votes per pair");
  tally->add_option("--pairs", pairs)->required();
  tally->add_option("--votes", votes)->required();
  tally->add_option("--out", out)->required();
  tally->callback([] {
    auto candidates = io::read_records<preference::CandidatePair>(pairs);
    auto all = io::read_records<preference::Vote>(votes);
    auto summary = preference::tally_all(candidates, all);
    write_records(out, summary.decided, "preference_pair");
    std::fprintf(stderr, "decided %zu, pending %zu\n", summary.decided.size(), summary.pending.size());
  });
}

void add_eval(CLI::App& app) {
  auto* ev = app.add_subcommand("eval", "Rating, factor and explanation metrics");
  ev->require_subcommand(1);
  static std::string pred, gt, out, embedder = "hashing", in, client = "heuristic", table;
  static double threshold = eval::kMatchThreshold;
  static std::string method = "model";

  auto* ratings = ev->add_subcommand("ratings", "MAE, exact match, W1 and correlation");
  ratings->add_option("--pred", pred)->required();
  ratings->add_option("--gt", gt)->required();
  ratings->add_option("--method", method);
  ratings->add_option("--out", out);
  ratings->add_option("--table", table, "aligned-text table path");
  ratings->callback([] {
    auto j = join(pred, gt);
    std::vector<RatingTriple> p, g;
    for (std::size_t i = 0; i < j.ids.size(); ++i) {
      p.push_back(j.pred[i].at("ratings").get<RatingTriple>());
      g.push_back(j.gt[i].at("ratings").get<RatingTriple>());
    }
    auto metrics = eval::rating_metrics(p, g);
    emit(metrics, out);
    if (!table.empty()) {
      std::vector<eval::Table2Row> rows = {eval::table2_row(method, metrics, std::nullopt)};
      io::write_text(table, eval::render_table2(rows));
    }
  });

  auto* factors = ev->add_subcommand("factors", "Greedy semantic matching of factor tags");
  factors->add_option("--pred", pred)->required();
  factors->add_option("--gt", gt)->required();
  factors->add_option("--threshold", threshold);
  factors->add_option("--embedder", embedder, "hashing, vectors.jsonl or an embedding server url");
  factors->add_option("--out", out);
  factors->callback([] {
    auto j = join(pred, gt);
    std::vector<FactorTagList> p, g;
    for (std::size_t i = 0; i < j.ids.size(); ++i) {
      p.push_back(j.pred[i].at("factors").get<FactorTagList>());
      g.push_back(j.gt[i].at("factors").get<FactorTagList>());
    }
    auto emb = eval::make_embedder(embedder);
    emit(eval::factor_metrics(p, g, j.ids, *emb, threshold), out);
  });

  auto* judge = ev->add_subcommand("judge", "LLM-as-judge scores on three criteria");
  judge->add_option("--in", in, "rows {id, explanation, persona, image_ref, attributes, ground_truth}")
      ->required();
  judge->add_option("--client", client, "heuristic, fixture:<path> or a chat-completions url");
  judge->add_option("--method", method);
  judge->add_option("--out", out);
  judge->add_option("--table", table);
  judge->callback([] {
    auto judge_client = eval::make_judge_client(client);
    std::vector<eval::JudgeResult> results;
    json per_item = json::array();
    for (const auto& row : io::read_jsonl(in)) {
      eval::JudgeContext ctx{row.at("persona").get<Persona>(), row.at("image_ref").get<ImageRef>(),
                             row.at("attributes").get<AttributeSet>(),
                             row.at("ground_truth").get<SegmentAssessment>()};
      results.push_back(eval::judge(row.at("explanation").get<std::string>(), ctx, *judge_client));
      per_item.push_back({{"id", id_of(row)}, {"result", results.back()}});
    }
    auto s = eval::summarize(results);
    std::vector<eval::Table3Row> rows = {{method, s.mean[0], s.mean[1], s.mean[2]}};
    emit({{"summary", eval::table3_json(rows)}, {"missing", s.missing}, {"items", per_item}}, out);
    if (!table.empty()) io::write_text(table, eval::render_table3(rows));
  });
}

void add_baseline(CLI::App& app) {
  auto* bl = app.add_subcommand("baseline", "KMeans-SMOTE + random forest comparison model");
  bl->require_subcommand(1);
  static std::string features, labels, out, model_path;
  static int trees = 100;
  static std::uint64_t seed = 0;
  static std::size_t latent_dim = 16;
  static bool rating_only = false;

  auto load_features = [] {
    const auto schema = baseline::default_schema(latent_dim);
    std::map<std::string, std::vector<double>> x;
    for (const auto& r : io::read_records<baseline::FeatureRecord>(features)) {
      x[r.image_id] = baseline::assemble_features(schema, r.detections, r.attributes, r.latent);
    }
    return std::make_pair(schema, x);
  };

  auto* train = bl->add_subcommand("train", "Fit rating forests and tag classifiers");
  train->add_option("--features", features)->required();
  train->add_option("--labels", labels, "assessments.jsonl")->required();
  train->add_option("--trees", trees);
  train->add_option("--seed", seed);
  train->add_option("--latent-dim", latent_dim);
  train->add_flag("--rating-only", rating_only);
  train->add_option("--out", out, "model directory")->required();
  train->callback([load_features] {
    auto [schema, x_by_id] = load_features();
    std::vector<Point> x;
    std::vector<RatingTriple> ratings;
    std::vector<FactorTagList> factors;
    for (const auto& a : io::read_records<SegmentAssessment>(labels)) {
      auto it = x_by_id.find(a.image_ref.image_id);
      if (it == x_by_id.end()) throw Error(ErrorCode::kNotFound, "no features for " + a.image_ref.image_id);
      x.push_back(it->second);
      ratings.push_back(a.ratings);
      factors.push_back(a.factors);
    }
    baseline::BaselineConfig cfg;
    cfg.forest.trees = trees;
    cfg.forest.seed = seed;
    cfg.smote.seed = seed;
    cfg.with_tags = !rating_only;
    fs::create_directories(out);
    io::write_json(fs::path(out) / "model.json", baseline::train_baseline(schema, x, ratings, factors, cfg));
  });

  auto* predict = bl->add_subcommand("predict", "Ratings and tags per feature record");
  predict->add_option("--model", model_path, "model.json")->required();
  predict->add_option("--features", features)->required();
  predict->add_option("--latent-dim", latent_dim);
  predict->add_option("--out", out)->required();
  predict->callback([load_features] {
    auto model = io::read_json(model_path).get<baseline::BaselineModel>();
    auto [schema, x_by_id] = load_features();
    std::vector<json> rows;
    for (const auto& [id, x] : x_by_id) {
      auto p = baseline::predict(model, x);
      json row = {{"v", kSchemaVersion}, {"id", id}};
      row["ratings"] = p.ratings;
      row["factors"] = p.factors;
      rows.push_back(std::move(row));
    }
    io::write_jsonl(out, rows, "baseline_prediction");
  });
}

void add_augment(CLI::App& app) {
  auto* aug = app.add_subcommand("augment", "Single-variable counterfactual image edits");
  aug->require_subcommand(1);
  static std::string images, variable, out, specs, client, registry;
  static int attempts = 3, backoff_ms = 500, workers = 4;

  auto* plan = aug->add_subcommand("plan", "One edit per alternative value of a variable");
  plan->add_option("--images", images, "base images with metadata")->required();
  plan->add_option("--variable", variable)->required();
  plan->add_option("--out", out)->required();
  plan->callback([] {
    auto base = io::read_records<augment::BaseImage>(images);
    auto planned = augment::plan_pairs(base, augment::variable_from_string(variable));
    io::write_jsonl(out, std::vector<json>(planned.begin(), planned.end()), "augmentation_spec");
  });

  auto* run = aug->add_subcommand("run", "Execute planned edits into a provenance registry");
  run->add_option("--specs", specs)->required();
  run->add_option("--client", client, "fixture:<dir> or an edit service url")->required();
  run->add_option("--registry", registry, "registry file, loaded if present and rewritten")->required();
  run->add_option("--attempts", attempts);
  run->add_option("--backoff-ms", backoff_ms);
  run->add_option("--workers", workers);
  run->callback([] {
    augment::Registry reg;
    if (fs::exists(registry)) reg.load(registry);
    auto planned = io::read_records<augment::AugmentationSpec>(specs);
    for (const auto& s : planned) reg.register_base(s.base_image);
    auto edit = augment::make_edit_client(client);
    std::atomic<std::size_t> next{0}, failed{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < std::max(1, workers); ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < planned.size(); i = next++) {
          try {
            reg.execute(planned[i], *edit, {attempts, backoff_ms});
          } catch (const Error& e) {
            ++failed;
            std::fprintf(stderr, "failed %s: %s\n", planned[i].base_image.image_id.c_str(), e.what());
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    reg.save(registry);
    std::fprintf(stderr, "edits %zu, failed %zu\n", planned.size() - failed.load(), failed.load());
    if (failed) throw Error(ErrorCode::kBackend, "some edits failed; rerun to retry them");
  });
}

void add_survey(CLI::App& app) {
  auto* sv = app.add_subcommand("survey", "Crowdsourcing survey service");
  sv->require_subcommand(1);
  static std::string data, registry, bind;
  static std::uint64_t seed = 0;

  auto* serve = sv->add_subcommand("serve", "HTTP JSON API for the survey client");
  serve->add_option("--data", data, "event log directory (env BIKELAB_DATA_DIR)");
  serve->add_option("--registry", registry, "segments.jsonl")->required();
  serve->add_option("--bind", bind, "host:port (env BIKELAB_BIND)");
  serve->add_option("--seed", seed);
  serve->callback([] {
    const auto dir = data.empty() ? env_or("BIKELAB_DATA_DIR", "survey-data") : data;
    const auto address = bind.empty() ? env_or("BIKELAB_BIND", "127.0.0.1:8080") : bind;
    std::vector<ImageRef> images;
    for (const auto& s : io::read_records<synth::Segment>(registry)) images.push_back(s.image);
    fs::create_directories(dir);
    survey::Service service(images, fs::path(dir), {.seed = seed});
    httplib::Server server;
    survey::bind_routes(server, service);
    auto [host, port] = split_bind(address);
    std::fprintf(stderr, "survey service on %s:%d, %zu participants replayed\n", host.c_str(), port,
                 service.participant_count());
    if (!server.listen(host, port)) throw Error(ErrorCode::kIo, "cannot bind " + address);
  });
}

void add_pipeline(CLI::App& app) {
  auto* pl = app.add_subcommand("pipeline", "End-to-end run");
  pl->require_subcommand(1);
  static std::string config, out;
  static bool resume = false, quiet = false;

  auto* run = pl->add_subcommand("run", "survey -> persona -> dataset -> SFT -> preference -> DPO -> eval");
  run->add_option("--config", config, "pipeline.json; defaults when omitted");
  run->add_option("--out", out, "run directory")->required();
  run->add_flag("--resume", resume);
  run->add_flag("--quiet", quiet);
  run->callback([] {
    auto cfg = config.empty() ? pipeline::PipelineConfig{} : io::read_json(config).get<pipeline::PipelineConfig>();
    auto manifest = pipeline::run_pipeline(cfg, out, {.resume = resume, .verbose = !quiet});
    if (!quiet) {
      std::cout << io::read_text(fs::path(out) / "reports/table2.txt") << "\n"
                << io::read_text(fs::path(out) / "reports/table3.txt") << "\n";
    }
    std::fprintf(stderr, "manifest: %s (%s)\n", (fs::path(out) / "manifest.json").c_str(),
                 manifest.status.c_str());
  });

  auto* init = pl->add_subcommand("init-config", "Write the default configuration");
  init->add_option("--out", out)->required();
  init->callback([] { io::write_json(out, pipeline::PipelineConfig{}); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Persona-conditioned bikeability assessment toolkit"};
  app.name("bikeability-lab");
  app.require_subcommand(1);
  add_synth(app);
  add_persona(app);
  add_dataset(app);
  add_parse(app);
  add_train(app);
  add_prefs(app);
  add_eval(app);
  add_baseline(app);
  add_augment(app);
  add_survey(app);
  add_pipeline(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error [%s]: %s\n", std::string(error_code_name(e.code())).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
