#include "bikelab/survey.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>

#include "bikelab/io.hpp"
#include "bikelab/rng.hpp"

namespace bikelab::survey {

namespace {

std::string indexed(std::string_view name, std::size_t i) {
  return std::string(name) + "[" + std::to_string(i) + "]";
}

void reject_first(const ValidationReport& report, const std::string& prefix) {
  if (report.ok()) return;
  const auto& v = report.violations.front();
  throw ValidationError(prefix.empty() ? v.path : prefix + "." + v.path, v.message);
}

int integer_field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object() || !obj.contains(key)) throw ValidationError(path, "required");
  const auto& v = obj.at(key);
  if (!v.is_number_integer()) throw ValidationError(path, "must be an integer");
  return v.get<int>();
}

ComfortProfile parse_comfort(const std::string& participant, const json& j) {
  const std::string prefix = "comfort_profile";
  if (!j.is_object()) throw ValidationError(prefix, "must be an object");
  const json& ratings = j.contains("ratings") ? j.at("ratings") : j;
  if (!ratings.is_object()) throw ValidationError(prefix + ".ratings", "must be an object");
  ComfortProfile p;
  p.participant_id = participant;
  for (const auto& [k, v] : ratings.items()) {
    const std::string path = prefix + ".ratings." + k;
    InfrastructureType t;
    try {
      t = infrastructure_type_from_string(k);
    } catch (const Error&) {
      throw ValidationError(path, "unknown infrastructure type");
    }
    p.ratings[t] = integer_field(ratings, k, path);
  }
  reject_first(validate(p), prefix);
  return p;
}

json parse_demographics(const json& j) {
  if (!j.is_object()) throw ValidationError("demographics", "must be an object");
  const auto& allowed = demographic_keys();
  for (const auto& [k, v] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ValidationError("demographics." + k, "field not collected");
    }
    if (!v.is_string() && !v.is_number()) {
      throw ValidationError("demographics." + k, "must be a string or number");
    }
  }
  return j;
}

}  // namespace

void to_json(json& j, const Assignment& a) {
  j = json{{"v", kSchemaVersion}, {"participant_id", a.participant_id}, {"items", a.items}};
}

void from_json(const json& j, Assignment& a) {
  j.at("participant_id").get_to(a.participant_id);
  j.at("items").get_to(a.items);
}

const std::vector<std::string>& demographic_keys() {
  static const std::vector<std::string> keys = {
      "age_group", "gender", "cycling_frequency", "primary_mode", "education", "income_band",
      "household_vehicles", "region"};
  return keys;
}

void to_json(json& j, const SubmitAck& a) {
  j = json{{"participant_id", a.participant_id},
           {"accepted", a.accepted},
           {"replaced", a.replaced},
           {"assessed", a.assessed},
           {"complete", a.complete}};
}

Service::Service(std::vector<ImageRef> registry, std::optional<std::filesystem::path> data_dir,
                 AssignmentOptions options)
    : data_dir_(std::move(data_dir)), options_(options) {
  std::set<std::string> ids;
  for (auto& img : registry) {
    reject_first(validate(img), "registry." + img.image_id);
    if (!ids.insert(img.image_id).second) {
      throw ValidationError("registry." + img.image_id, "duplicate image id");
    }
    (img.source == ImageSource::kAugmented ? augmented_ : base_).push_back(std::move(img));
  }
  for (const auto& img : base_) counts_[img.image_id] = 0;
  for (const auto& img : augmented_) counts_[img.image_id] = 0;
  if (data_dir_) {
    std::filesystem::create_directories(*data_dir_);
    const auto log = *data_dir_ / "events.jsonl";
    if (std::filesystem::exists(log)) {
      for (const auto& event : io::read_jsonl(log)) apply(event);
    }
  }
}

void Service::append(const json& event) {
  if (!data_dir_) return;
  std::ofstream out(*data_dir_ / "events.jsonl", std::ios::app | std::ios::binary);
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "cannot append to event log");
}

void Service::apply(const json& event) {
  const auto type = event.at("type").get<std::string>();
  if (type == "participant") {
    auto a = event.at("assignment").get<Assignment>();
    for (const auto& item : a.items) ++counts_[item.image_id];
    order_.push_back(a.participant_id);
    sessions_[a.participant_id].assignment = std::move(a);
  } else if (type == "response") {
    auto& s = sessions_.at(event.at("participant_id").get<std::string>());
    if (event.contains("demographics")) s.demographics.update(event.at("demographics"));
    if (event.contains("comfort_profile")) s.comfort = event.at("comfort_profile").get<ComfortProfile>();
    for (const auto& a : event.at("assessments")) {
      auto record = a.get<SegmentAssessment>();
      s.history[record.image_ref.image_id].push_back(std::move(record));
    }
  } else if (type == "pair") {
    auto p = event.at("pair").get<preference::CandidatePair>();
    pair_index_[p.pair_id] = pairs_.size();
    pairs_.push_back(std::move(p));
  } else if (type == "vote") {
    auto v = event.at("vote").get<preference::Vote>();
    voters_[v.pair_id].push_back(v.annotator_id);
    votes_.push_back(std::move(v));
  } else {
    throw Error(ErrorCode::kSchema, "unknown event type: " + type);
  }
}

Assignment Service::draw(std::uint64_t index) {
  if (base_.size() < options_.base_items || augmented_.size() < options_.augmented_items) {
    throw Error(ErrorCode::kInsufficientData, "registry smaller than one assignment");
  }
  Rng rng = make_rng(mix_seed(options_.seed, index), "assignment");
  auto by_count = [&](std::vector<std::size_t>& idx, const std::vector<ImageRef>& pool) {
    shuffle(idx.begin(), idx.end(), rng);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return counts_.at(pool[a].image_id) < counts_.at(pool[b].image_id);
    });
  };
  auto pick_augmented = [&](const std::vector<std::size_t>& base_idx) {
    std::set<std::string> chosen;
    for (std::size_t i = 0; i < options_.base_items; ++i) chosen.insert(base_[base_idx[i]].image_id);
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < augmented_.size(); ++i) {
      if (!chosen.count(*augmented_[i].parent_id)) eligible.push_back(i);
    }
    return eligible;
  };

  std::vector<std::size_t> base_idx(base_.size());
  for (std::size_t i = 0; i < base_idx.size(); ++i) base_idx[i] = i;
  by_count(base_idx, base_);
  auto eligible = pick_augmented(base_idx);
  if (eligible.size() >= options_.augmented_items) {
    by_count(eligible, augmented_);
  } else {
    // Uniform fallback: draw the augmented items first, then base items
    // among segments that are not their parents.
    warnings_.push_back("participant " + std::to_string(index) +
                        ": balanced draw violates parent constraint, using uniform draw");
    std::fprintf(stderr, "survey: %s\n", warnings_.back().c_str());
    eligible.resize(augmented_.size());
    for (std::size_t i = 0; i < eligible.size(); ++i) eligible[i] = i;
    shuffle(eligible.begin(), eligible.end(), rng);
    std::set<std::string> parents;
    for (std::size_t i = 0; i < options_.augmented_items; ++i) {
      parents.insert(*augmented_[eligible[i]].parent_id);
    }
    base_idx.clear();
    for (std::size_t i = 0; i < base_.size(); ++i) {
      if (!parents.count(base_[i].image_id)) base_idx.push_back(i);
    }
    if (base_idx.size() < options_.base_items) {
      throw Error(ErrorCode::kInsufficientData, "no assignment satisfies the parent constraint");
    }
    shuffle(base_idx.begin(), base_idx.end(), rng);
  }

  Assignment a;
  a.participant_id = "anon-" + io::sha256_hex(std::to_string(options_.seed) + ":" +
                                              std::to_string(index)).substr(0, 12);
  for (std::size_t i = 0; i < options_.base_items; ++i) a.items.push_back(base_[base_idx[i]]);
  for (std::size_t i = 0; i < options_.augmented_items; ++i) {
    a.items.push_back(augmented_[eligible[i]]);
  }
  shuffle(a.items.begin(), a.items.end(), rng);
  return a;
}

Assignment Service::create_participant() {
  std::unique_lock lock(mutex_);
  auto a = draw(order_.size());
  json event = {{"v", kSchemaVersion}, {"type", "participant"}, {"assignment", a}};
  append(event);
  apply(event);
  return a;
}

Assignment Service::assignment(const std::string& participant_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(participant_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown participant: " + participant_id);
  return it->second.assignment;
}

SubmitAck Service::submit_response(const json& body) {
  if (!body.is_object()) throw ValidationError("body", "must be an object");
  if (!body.contains("participant_id") || !body.at("participant_id").is_string()) {
    throw ValidationError("participant_id", "required string");
  }
  const auto pid = body.at("participant_id").get<std::string>();

  std::unique_lock lock(mutex_);
  auto sit = sessions_.find(pid);
  if (sit == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown participant: " + pid);
  const Session& session = sit->second;

  json event = {{"v", kSchemaVersion}, {"type", "response"}, {"participant_id", pid}};
  if (body.contains("demographics")) event["demographics"] = parse_demographics(body.at("demographics"));
  if (body.contains("comfort_profile")) {
    event["comfort_profile"] = parse_comfort(pid, body.at("comfort_profile"));
  }

  SubmitAck ack;
  ack.participant_id = pid;
  json records = json::array();
  std::set<std::string> in_body;
  if (body.contains("assessments")) {
    const auto& list = body.at("assessments");
    if (!list.is_array()) throw ValidationError("assessments", "must be an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const auto& item = list[i];
      const auto path = indexed("assessments", i);
      if (!item.is_object()) throw ValidationError(path, "must be an object");
      std::string image_id;
      if (item.contains("image_id") && item.at("image_id").is_string()) {
        image_id = item.at("image_id").get<std::string>();
      } else if (item.contains("image_ref") && item.at("image_ref").is_object() &&
                 item.at("image_ref").contains("image_id")) {
        image_id = item.at("image_ref").at("image_id").get<std::string>();
      } else {
        throw ValidationError(path + ".image_id", "required");
      }
      const auto& items = session.assignment.items;
      auto ref = std::find_if(items.begin(), items.end(),
                              [&](const ImageRef& r) { return r.image_id == image_id; });
      if (ref == items.end()) throw ValidationError(path + ".image_id", "not assigned to participant");
      if (!in_body.insert(image_id).second) {
        throw ValidationError(path + ".image_id", "assessed twice in one submission");
      }

      SegmentAssessment a;
      a.participant_id = pid;
      a.image_ref = *ref;
      if (!item.contains("ratings")) throw ValidationError(path + ".ratings", "required");
      const auto& r = item.at("ratings");
      a.ratings.safety = integer_field(r, "safety", path + ".ratings.safety");
      a.ratings.comfort = integer_field(r, "comfort", path + ".ratings.comfort");
      a.ratings.willingness = integer_field(r, "willingness", path + ".ratings.willingness");
      if (item.contains("factors")) {
        const auto& f = item.at("factors");
        if (!f.is_array() || !std::all_of(f.begin(), f.end(), [](const json& t) { return t.is_string(); })) {
          throw ValidationError(path + ".factors", "must be an array of strings");
        }
        a.factors = make_tags(f.get<std::vector<std::string>>());
      }
      if (item.contains("free_text") && !item.at("free_text").is_null()) {
        if (!item.at("free_text").is_string()) throw ValidationError(path + ".free_text", "must be a string");
        a.free_text = item.at("free_text").get<std::string>();
      }
      if (item.contains("timestamp")) a.timestamp = integer_field(item, "timestamp", path + ".timestamp");
      reject_first(validate(a), path);
      if (session.history.count(image_id)) ++ack.replaced;
      records.push_back(a);
    }
  }
  ack.accepted = records.size();
  event["assessments"] = std::move(records);
  append(event);
  apply(event);
  ack.assessed = sessions_.at(pid).history.size();
  ack.complete = ack.assessed >= kCompletedSession;
  return ack;
}

std::vector<SegmentAssessment> Service::audit(const std::string& participant_id,
                                              const std::string& image_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(participant_id);
  if (it == sessions_.end()) throw Error(ErrorCode::kNotFound, "unknown participant: " + participant_id);
  auto h = it->second.history.find(image_id);
  if (h == it->second.history.end()) return {};
  return h->second;
}

Export Service::export_dataset() const {
  std::shared_lock lock(mutex_);
  std::vector<json> profiles, assessments;
  Export out;
  for (const auto& id : order_) {
    const auto& s = sessions_.at(id);
    if (s.history.size() < kCompletedSession) continue;
    ++out.completed_sessions;
    if (s.comfort) profiles.push_back(to_record(*s.comfort));
    for (const auto& item : s.assignment.items) {
      auto h = s.history.find(item.image_id);
      if (h != s.history.end()) assessments.push_back(to_record(h->second.back()));
    }
  }
  for (auto* list : {&profiles, &assessments}) {
    for (auto& r : *list) r["v"] = kSchemaVersion;
  }
  out.profiles = io::to_jsonl(profiles, "comfort_profile");
  out.assessments = io::to_jsonl(assessments, "segment_assessment");
  return out;
}

void Service::write_export(const std::filesystem::path& dir) const {
  auto e = export_dataset();
  std::filesystem::create_directories(dir);
  io::write_text(dir / "profiles.jsonl", e.profiles);
  io::write_text(dir / "assessments.jsonl", e.assessments);
}

void Service::add_pairs(std::span<const preference::CandidatePair> pairs) {
  std::unique_lock lock(mutex_);
  for (const auto& p : pairs) {
    if (pair_index_.count(p.pair_id)) {
      throw Error(ErrorCode::kConflict, "pair already loaded: " + p.pair_id);
    }
  }
  for (const auto& p : pairs) {
    json event = {{"v", kSchemaVersion}, {"type", "pair"}, {"pair", p}};
    append(event);
    apply(event);
  }
}

std::vector<preference::CandidatePair> Service::list_tasks(const std::string& annotator) const {
  std::shared_lock lock(mutex_);
  std::vector<preference::CandidatePair> out;
  for (const auto& p : pairs_) {
    auto it = voters_.find(p.pair_id);
    if (it == voters_.end()) {
      out.push_back(p);
      continue;
    }
    const auto& who = it->second;
    if (who.size() >= preference::kQuorum) continue;
    if (std::find(who.begin(), who.end(), annotator) != who.end()) continue;
    out.push_back(p);
  }
  return out;
}

void Service::submit_vote(const preference::Vote& vote) {
  if (vote.annotator_id.empty()) throw ValidationError("annotator_id", "empty");
  std::unique_lock lock(mutex_);
  if (!pair_index_.count(vote.pair_id)) throw Error(ErrorCode::kNotFound, "unknown pair: " + vote.pair_id);
  const auto& who = voters_[vote.pair_id];
  if (std::find(who.begin(), who.end(), vote.annotator_id) != who.end()) {
    throw Error(ErrorCode::kConflict, vote.annotator_id + " already voted on " + vote.pair_id);
  }
  if (who.size() >= preference::kQuorum) {
    throw Error(ErrorCode::kConflict, vote.pair_id + " already has a full panel");
  }
  json event = {{"v", kSchemaVersion}, {"type", "vote"}, {"vote", vote}};
  append(event);
  apply(event);
}

std::vector<preference::Vote> Service::votes() const {
  std::shared_lock lock(mutex_);
  return votes_;
}

std::vector<preference::CandidatePair> Service::pairs() const {
  std::shared_lock lock(mutex_);
  return pairs_;
}

std::map<std::string, std::size_t> Service::assignment_counts() const {
  std::shared_lock lock(mutex_);
  return counts_;
}

std::size_t Service::participant_count() const {
  std::shared_lock lock(mutex_);
  return order_.size();
}

std::vector<std::string> Service::warnings() const {
  std::shared_lock lock(mutex_);
  return warnings_;
}

}  // namespace bikelab::survey

namespace bikelab::survey {

std::vector<SimulatedParticipant> simulate_participants(Service& service,
                                                        std::span<const synth::Segment> registry,
                                                        std::size_t n, std::uint64_t seed) {
  std::map<std::string, const synth::Segment*> by_id;
  for (const auto& s : registry) by_id[s.image.image_id] = &s;
  auto people = synth::weighted_population(n, seed, "sim");
  Rng rng = make_rng(seed, "survey-simulation");
  std::vector<SimulatedParticipant> out;
  for (auto& person : people) {
    auto a = service.create_participant();
    json comfort = json::object();
    for (const auto& [t, v] : person.profile.ratings) comfort[std::string(to_string(t))] = v;
    json items = json::array();
    for (const auto& item : a.items) {
      auto it = by_id.find(item.image_id);
      if (it == by_id.end()) throw Error(ErrorCode::kNotFound, "segment not in registry: " + item.image_id);
      auto record = synth::simulate_assessment(a.participant_id, person.persona, *it->second, rng);
      items.push_back({{"image_id", item.image_id},
                       {"ratings", record.ratings},
                       {"factors", record.factors},
                       {"timestamp", static_cast<std::int64_t>(out.size() * 100 + items.size())}});
    }
    const auto half = static_cast<long>(items.size() / 2);
    service.submit_response({{"participant_id", a.participant_id},
                             {"demographics", {{"cycling_frequency", "weekly"}}},
                             {"comfort_profile", {{"ratings", comfort}}},
                             {"assessments", json(std::vector<json>(items.begin(), items.begin() + half))}});
    service.submit_response({{"participant_id", a.participant_id},
                             {"assessments", json(std::vector<json>(items.begin() + half, items.end()))}});
    out.push_back({a.participant_id, person.persona});
  }
  return out;
}

}  // namespace bikelab::survey
