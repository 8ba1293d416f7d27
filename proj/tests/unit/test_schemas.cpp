#include <doctest.h>

#include <regex>

#include "bikelab/dataset.hpp"
#include "bikelab/io.hpp"
#include "bikelab/preference.hpp"
#include "bikelab/rng.hpp"
#include "bikelab/survey.hpp"
#include "bikelab/synth.hpp"
#include "bikelab/training.hpp"

using namespace bikelab;

namespace {

json schema(const std::string& name) {
  return io::read_json(std::string(BIKELAB_SCHEMA_DIR) + "/" + name + ".schema.json");
}

bool type_ok(const json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "integer") return value.is_number_integer();
  if (type == "number") return value.is_number();
  if (type == "boolean") return value.is_boolean();
  return false;
}

/// The subset of JSON Schema the files in schemas/ use. Returns the first
/// violation path, empty when valid.
std::string violation(const json& s, const json& value, const std::string& path) {
  if (s.contains("const") && value != s["const"]) return path + ": const";
  if (s.contains("enum")) {
    const auto& e = s["enum"];
    if (std::find(e.begin(), e.end(), value) == e.end()) return path + ": enum";
  }
  if (s.contains("type")) {
    bool ok = false;
    if (s["type"].is_array()) {
      for (const auto& t : s["type"]) ok = ok || type_ok(value, t.get<std::string>());
    } else {
      ok = type_ok(value, s["type"].get<std::string>());
    }
    if (!ok) return path + ": type";
  }
  if (value.is_number()) {
    if (s.contains("minimum") && value.get<double>() < s["minimum"].get<double>()) return path + ": minimum";
    if (s.contains("maximum") && value.get<double>() > s["maximum"].get<double>()) return path + ": maximum";
  }
  if (value.is_string()) {
    const auto str = value.get<std::string>();
    if (s.contains("minLength") && str.size() < s["minLength"].get<std::size_t>()) return path + ": minLength";
    if (s.contains("pattern") && !std::regex_search(str, std::regex(s["pattern"].get<std::string>()))) {
      return path + ": pattern";
    }
  }
  if (value.is_array()) {
    if (s.contains("minItems") && value.size() < s["minItems"].get<std::size_t>()) return path + ": minItems";
    if (s.contains("maxItems") && value.size() > s["maxItems"].get<std::size_t>()) return path + ": maxItems";
    if (s.contains("items")) {
      for (std::size_t i = 0; i < value.size(); ++i) {
        auto v = violation(s["items"], value[i], path + "[" + std::to_string(i) + "]");
        if (!v.empty()) return v;
      }
    }
  }
  if (value.is_object()) {
    for (const auto& r : s.value("required", json::array())) {
      if (!value.contains(r.get<std::string>())) return path + "." + r.get<std::string>() + ": required";
    }
    const auto props = s.value("properties", json::object());
    for (const auto& [k, v] : value.items()) {
      if (props.contains(k)) {
        auto sub = violation(props[k], v, path + "." + k);
        if (!sub.empty()) return sub;
      } else if (s.contains("additionalProperties") && s["additionalProperties"] == false) {
        return path + "." + k + ": additionalProperties";
      }
    }
  }
  if (s.contains("if")) {
    const bool cond = violation(s["if"], value, path).empty();
    const char* branch = cond ? "then" : "else";
    if (s.contains(branch)) {
      auto sub = violation(s[branch], value, path);
      if (!sub.empty()) return sub;
    }
  }
  if (s.contains("not") && violation(s["not"], value, path).empty()) return path + ": not";
  return {};
}

void check_all(const std::string& name, const std::vector<json>& records) {
  const auto s = schema(name);
  REQUIRE(!records.empty());
  for (const auto& r : records) {
    auto v = violation(s, r, name);
    CHECK_MESSAGE(v.empty(), v);
  }
}

template <typename T>
std::vector<json> as_json(const std::vector<T>& values) {
  return std::vector<json>(values.begin(), values.end());
}

}  // namespace

TEST_CASE("every schema file is a draft 2020-12 document with an id") {
  for (const auto* name : {"comfort_profile", "segment_assessment", "segment", "training_example", "candidate_pair",
                           "vote", "preference_pair", "survey_response", "assignment", "step_log"}) {
    auto s = schema(name);
    CHECK(s.at("$schema") == "https://json-schema.org/draft/2020-12/schema");
    CHECK(s.at("$id") == std::string("bikelab/") + name + ".schema.json");
  }
}

TEST_CASE("library records conform to their schemas") {
  auto corpus = synth::corpus(12, 6, 30, 4);
  std::vector<ComfortProfile> profiles;
  for (const auto& p : corpus.participants) profiles.push_back(p.profile);
  check_all("comfort_profile", as_json(profiles));
  check_all("segment_assessment", as_json(corpus.assessments));
  check_all("segment", as_json(synth::segment_registry(20, 8, 1)));
  auto examples = synth::examples(corpus, 0.3);
  check_all("training_example", as_json(examples));

  std::vector<preference::InstanceRef> instances;
  for (const auto& e : examples) {
    if (e.type == dataset::ExampleType::kStructured) instances.push_back({e.persona, e.image_ref, e.attributes});
  }
  auto backend = training::make_backend("mock", 3);
  auto sampled = preference::sample_pairs(instances, 5, *backend, 3);
  check_all("candidate_pair", as_json(sampled.pairs));
  std::vector<preference::Vote> votes;
  for (const auto& p : sampled.pairs) {
    for (const auto* who : {"e1", "e2", "e3"}) votes.push_back({p.pair_id, who, preference::Choice::kA, {}});
  }
  votes[0].criteria_notes = preference::CriteriaNotes{true, false, std::nullopt};
  check_all("vote", as_json(votes));
  check_all("preference_pair", as_json(preference::tally_all(sampled.pairs, votes).decided));

  std::vector<ImageRef> images;
  for (const auto& s : synth::segment_registry(40, 10, 2)) images.push_back(s.image);
  survey::Service service(images, std::nullopt);
  check_all("assignment", {json(service.create_participant())});

  const auto dir = std::filesystem::temp_directory_path() / "bikelab_schema_sft";
  std::filesystem::remove_all(dir);
  training::SftConfig cfg;
  cfg.epochs = 1;
  training::run_sft(examples, cfg, *backend, {.run_dir = dir});
  auto log = io::read_jsonl(dir / "loss_log.jsonl");
  check_all("step_log", log);
  std::filesystem::remove_all(dir);
}

TEST_CASE("schemas reject what the service rejects") {
  auto a = json(synth::corpus(1, 1, 5, 1).assessments.front());
  const auto s = schema("segment_assessment");
  CHECK(violation(s, a, "a").empty());
  auto bad = a;
  bad["ratings"]["safety"] = 5;
  CHECK(!violation(s, bad, "a").empty());
  bad = a;
  bad["image_ref"]["source"] = "augmented";  // no parent id
  CHECK(!violation(s, bad, "a").empty());
  bad = a;
  bad["factors"] = json::array({"a, b"});
  CHECK(!violation(s, bad, "a").empty());

  const auto r = schema("survey_response");
  CHECK(violation(r, {{"participant_id", "anon-1"}, {"demographics", {{"age_group", "25-34"}}}}, "r").empty());
  CHECK(!violation(r, {{"participant_id", "anon-1"}, {"demographics", {{"email", "x@y"}}}}, "r").empty());
}
