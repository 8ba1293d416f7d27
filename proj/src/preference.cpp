#include "bikelab/preference.hpp"

#include <algorithm>
#include <cstdio>

#include "bikelab/dataset.hpp"
#include "bikelab/parser.hpp"
#include "bikelab/rng.hpp"

namespace bikelab::preference {

void to_json(json& j, const InstanceRef& r) {
  j = json{{"persona", r.persona}, {"image_ref", r.image_ref}, {"attributes", r.attributes}};
}

void from_json(const json& j, InstanceRef& r) {
  j.at("persona").get_to(r.persona);
  j.at("image_ref").get_to(r.image_ref);
  r.attributes = j.value("attributes", json::array()).get<AttributeSet>();
}

void to_json(json& j, const CandidatePair& p) {
  j = json{{"v", kSchemaVersion},         {"pair_id", p.pair_id},
           {"instance", p.instance},      {"prompt", p.prompt},
           {"completion_a", p.completion_a}, {"completion_b", p.completion_b},
           {"swapped", p.swapped}};
}

void from_json(const json& j, CandidatePair& p) {
  j.at("pair_id").get_to(p.pair_id);
  j.at("instance").get_to(p.instance);
  j.at("prompt").get_to(p.prompt);
  j.at("completion_a").get_to(p.completion_a);
  j.at("completion_b").get_to(p.completion_b);
  p.swapped = j.value("swapped", false);
}

void to_json(json& j, Choice c) { j = c == Choice::kA ? "A" : "B"; }

void from_json(const json& j, Choice& c) {
  const auto s = j.get<std::string>();
  if (s == "A") {
    c = Choice::kA;
  } else if (s == "B") {
    c = Choice::kB;
  } else {
    throw ValidationError("choice", "must be \"A\" or \"B\"");
  }
}

void to_json(json& j, const Vote& v) {
  j = json{{"v", kSchemaVersion}, {"pair_id", v.pair_id}, {"annotator_id", v.annotator_id},
           {"choice", v.choice}};
  if (v.criteria_notes) {
    json notes = json::object();
    const auto& n = *v.criteria_notes;
    if (n.factual_accuracy) notes["factual_accuracy"] = *n.factual_accuracy;
    if (n.logical_coherence) notes["logical_coherence"] = *n.logical_coherence;
    if (n.persona_consistency) notes["persona_consistency"] = *n.persona_consistency;
    j["criteria_notes"] = std::move(notes);
  }
}

void from_json(const json& j, Vote& v) {
  if (!j.contains("pair_id") || !j.at("pair_id").is_string() ||
      j.at("pair_id").get<std::string>().empty()) {
    throw ValidationError("pair_id", "required");
  }
  if (!j.contains("annotator_id") || !j.at("annotator_id").is_string() ||
      j.at("annotator_id").get<std::string>().empty()) {
    throw ValidationError("annotator_id", "required");
  }
  if (!j.contains("choice")) throw ValidationError("choice", "required");
  v.pair_id = j.at("pair_id").get<std::string>();
  v.annotator_id = j.at("annotator_id").get<std::string>();
  v.choice = j.at("choice").get<Choice>();
  v.criteria_notes.reset();
  if (j.contains("criteria_notes") && j.at("criteria_notes").is_object()) {
    CriteriaNotes n;
    const auto& o = j.at("criteria_notes");
    auto flag = [&](const char* key, std::optional<bool>& out) {
      if (!o.contains(key)) return;
      if (!o.at(key).is_boolean()) throw ValidationError(std::string("criteria_notes.") + key, "must be boolean");
      out = o.at(key).get<bool>();
    };
    flag("factual_accuracy", n.factual_accuracy);
    flag("logical_coherence", n.logical_coherence);
    flag("persona_consistency", n.persona_consistency);
    v.criteria_notes = n;
  }
}

namespace {

bool valid_type1(const std::string& text) {
  try {
    auto p = parser::parse(text);
    return p.reasoning_text.has_value() && !p.reasoning_text->empty() && p.has_factors_line;
  } catch (const Error&) {
    return false;
  }
}

std::optional<std::string> generate_valid(training::ModelBackend& backend,
                                          const training::GenerationRequest& request,
                                          const std::string* other) {
  for (int attempt = 0; attempt <= kMaxRegenerations; ++attempt) {
    std::string text = backend.generate(request);
    if (valid_type1(text) && (!other || text != *other)) return text;
  }
  return std::nullopt;
}

}  // namespace

SampleResult sample_pairs(std::span<const InstanceRef> instances, std::size_t n,
                          training::ModelBackend& backend, std::uint64_t seed) {
  if (n > instances.size()) {
    throw Error(ErrorCode::kInsufficientData, "requested " + std::to_string(n) + " pairs from " +
                                                  std::to_string(instances.size()) + " instances");
  }
  std::vector<std::size_t> idx(instances.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng = make_rng(seed, "sample-pairs");
  shuffle(idx.begin(), idx.end(), rng);

  SampleResult out;
  for (std::size_t k = 0; k < n; ++k) {
    const InstanceRef& inst = instances[idx[k]];
    training::GenerationRequest req{
        inst.persona, inst.image_ref, inst.attributes,
        dataset::render_prompt(dataset::ExampleType::kReasoning, inst.persona, inst.attributes),
        kTemperatureA};
    const bool swapped = uniform01(rng) < 0.5;
    auto a = generate_valid(backend, req, nullptr);
    if (!a) {
      out.skipped.push_back({inst, "no parseable completion at temperature 0.7"});
      continue;
    }
    req.temperature = kTemperatureB;
    auto b = generate_valid(backend, req, &*a);
    if (!b) {
      out.skipped.push_back({inst, "no parseable distinct completion at temperature 1.0"});
      continue;
    }
    char id[32];
    std::snprintf(id, sizeof id, "pair-%04zu", k + 1);
    out.pairs.push_back({id, inst, req.prompt, std::move(*a), std::move(*b), swapped});
  }
  return out;
}

std::optional<PreferencePair> tally(const CandidatePair& pair, std::span<const Vote> votes) {
  if (votes.size() > kQuorum) {
    throw Error(ErrorCode::kDuplicateAnnotator,
                "pair " + pair.pair_id + " has more than " + std::to_string(kQuorum) + " votes");
  }
  std::vector<std::string> seen;
  int for_a = 0;
  for (const auto& v : votes) {
    if (v.pair_id != pair.pair_id) {
      throw ValidationError("pair_id", "vote for " + v.pair_id + " tallied under " + pair.pair_id);
    }
    if (std::find(seen.begin(), seen.end(), v.annotator_id) != seen.end()) {
      throw Error(ErrorCode::kDuplicateAnnotator,
                  "annotator " + v.annotator_id + " voted twice on " + pair.pair_id);
    }
    seen.push_back(v.annotator_id);
    if (v.choice == Choice::kA) ++for_a;
  }
  if (votes.size() < kQuorum) return std::nullopt;
  const bool a_wins = for_a >= 2;
  PreferencePair out;
  out.pair_id = pair.pair_id;
  out.prompt = pair.prompt;
  out.chosen = a_wins ? pair.completion_a : pair.completion_b;
  out.rejected = a_wins ? pair.completion_b : pair.completion_a;
  out.vote_margin = a_wins ? for_a : 3 - for_a;
  return out;
}

TallySummary tally_all(std::span<const CandidatePair> pairs, std::span<const Vote> votes) {
  std::map<std::string, std::vector<Vote>> grouped;
  for (const auto& v : votes) grouped[v.pair_id].push_back(v);
  TallySummary out;
  for (const auto& p : pairs) {
    auto it = grouped.find(p.pair_id);
    std::span<const Vote> mine;
    if (it != grouped.end()) mine = it->second;
    if (auto decided = tally(p, mine)) {
      out.decided.push_back(std::move(*decided));
    } else {
      out.pending.push_back(p.pair_id);
    }
  }
  return out;
}

void VoteLog::add(const Vote& vote) {
  std::lock_guard lock(mutex_);
  auto& mine = by_pair_[vote.pair_id];
  for (auto i : mine) {
    if (votes_[i].annotator_id == vote.annotator_id) {
      throw Error(ErrorCode::kDuplicateAnnotator,
                  "annotator " + vote.annotator_id + " already voted on " + vote.pair_id);
    }
  }
  if (mine.size() >= kQuorum) {
    throw Error(ErrorCode::kDuplicateAnnotator, "pair " + vote.pair_id + " already has 3 votes");
  }
  mine.push_back(votes_.size());
  votes_.push_back(vote);
}

std::vector<Vote> VoteLog::votes_for(const std::string& pair_id) const {
  std::lock_guard lock(mutex_);
  std::vector<Vote> out;
  if (auto it = by_pair_.find(pair_id); it != by_pair_.end()) {
    for (auto i : it->second) out.push_back(votes_[i]);
  }
  return out;
}

std::vector<Vote> VoteLog::all() const {
  std::lock_guard lock(mutex_);
  return votes_;
}

std::size_t VoteLog::count(const std::string& pair_id) const {
  std::lock_guard lock(mutex_);
  auto it = by_pair_.find(pair_id);
  return it == by_pair_.end() ? 0 : it->second.size();
}

}  // namespace bikelab::preference
