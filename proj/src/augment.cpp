#include "bikelab/augment.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <thread>

#include "bikelab/http.hpp"
#include "bikelab/io.hpp"

namespace bikelab::augment {

namespace {

struct VariableInfo {
  Variable variable;
  std::string_view name;
  std::vector<std::string> domain;
};

const std::vector<VariableInfo>& table() {
  static const std::vector<VariableInfo> t = {
      {Variable::kLanePresence, "lane_presence", {"present", "absent"}},
      {Variable::kLaneWidth, "lane_width", {"narrow", "standard", "wide"}},
      {Variable::kLaneColor, "lane_color", {"green", "no_paint"}},
      {Variable::kBufferType, "buffer_type", {"none", "standard", "bollards", "armadillo"}},
      {Variable::kBufferLocation, "buffer_location", {"adjacent_moving", "adjacent_parked"}},
  };
  return t;
}

const VariableInfo& info(Variable v) { return table().at(static_cast<std::size_t>(v)); }

bool in_domain(Variable v, const std::string& value) {
  const auto& d = domain(v);
  return std::find(d.begin(), d.end(), value) != d.end();
}

std::vector<Change> canonical(std::span<const Change> changes) {
  std::vector<Change> out(changes.begin(), changes.end());
  std::stable_sort(out.begin(), out.end(), [](const Change& a, const Change& b) {
    return static_cast<int>(a.variable) < static_cast<int>(b.variable);
  });
  return out;
}

std::string sentence(const Change& c) {
  static const std::map<std::pair<Variable, std::string>, std::string> templates = {
      {{Variable::kLanePresence, "present"},
       "Add a painted bike lane along the right edge of the roadway."},
      {{Variable::kLanePresence, "absent"},
       "Remove the bike lane and its markings so the space reads as ordinary roadway."},
      {{Variable::kLaneWidth, "narrow"}, "Narrow the bike lane to a minimal width."},
      {{Variable::kLaneWidth, "standard"}, "Set the bike lane to a standard width."},
      {{Variable::kLaneWidth, "wide"}, "Widen the bike lane to a generous width."},
      {{Variable::kLaneColor, "green"}, "Repaint the bike lane surface green."},
      {{Variable::kLaneColor, "no_paint"}, "Remove the colored paint from the bike lane surface."},
      {{Variable::kBufferType, "none"},
       "Remove any buffer between the bike lane and the adjacent lane."},
      {{Variable::kBufferType, "standard"},
       "Add a painted hatched buffer between the bike lane and the adjacent lane."},
      {{Variable::kBufferType, "bollards"},
       "Add a row of flexible bollards between the bike lane and the adjacent lane."},
      {{Variable::kBufferType, "armadillo"},
       "Add low armadillo curbs between the bike lane and the adjacent lane."},
      {{Variable::kBufferLocation, "adjacent_moving"},
       "Place the buffer between the bike lane and moving traffic."},
      {{Variable::kBufferLocation, "adjacent_parked"},
       "Place the buffer between the bike lane and parked cars."},
  };
  return templates.at({c.variable, c.value});
}

}  // namespace

const std::vector<Variable>& all_variables() {
  static const std::vector<Variable> v = {Variable::kLanePresence, Variable::kLaneWidth,
                                          Variable::kLaneColor, Variable::kBufferType,
                                          Variable::kBufferLocation};
  return v;
}

std::string_view to_string(Variable v) { return info(v).name; }

Variable variable_from_string(std::string_view s) {
  for (const auto& i : table()) {
    if (i.name == s) return i.variable;
  }
  throw ParseError("unknown augmentation variable: " + std::string(s), 0);
}

const std::vector<std::string>& domain(Variable v) { return info(v).domain; }

bool lane_dependent(Variable v) { return v != Variable::kLanePresence; }

void to_json(json& j, Variable v) { j = std::string(to_string(v)); }
void from_json(const json& j, Variable& v) { v = variable_from_string(j.get<std::string>()); }

void to_json(json& j, const BaseImage& b) {
  json meta = json::object();
  for (const auto& [k, v] : b.metadata) meta[std::string(to_string(k))] = v;
  j = json{{"v", kSchemaVersion}, {"image", b.image}, {"metadata", meta}};
}

void from_json(const json& j, BaseImage& b) {
  j.at("image").get_to(b.image);
  b.metadata.clear();
  for (const auto& [k, v] : j.at("metadata").items()) {
    b.metadata[variable_from_string(k)] = v.get<std::string>();
  }
}

void check_metadata(const Metadata& m) {
  for (const auto& [k, v] : m) {
    if (!in_domain(k, v)) {
      throw ValidationError(std::string(to_string(k)), "value '" + v + "' outside domain");
    }
  }
  auto lane = m.find(Variable::kLanePresence);
  if (lane == m.end()) throw ValidationError("lane_presence", "baseline value required");
  if (lane->second != "present") return;
  for (Variable v : all_variables()) {
    if (lane_dependent(v) && !m.count(v)) {
      throw ValidationError(std::string(to_string(v)), "baseline value required for a present lane");
    }
  }
}

void to_json(json& j, const AugmentationSpec& s) {
  json changes = json::array();
  for (const auto& c : s.changes) changes.push_back({{"variable", c.variable}, {"value", c.value}});
  j = json{{"v", kSchemaVersion},
           {"base_image", s.base_image},
           {"changes", changes},
           {"instruction_text", s.instruction_text}};
  if (s.result) j["result"] = *s.result;
}

void from_json(const json& j, AugmentationSpec& s) {
  j.at("base_image").get_to(s.base_image);
  s.changes.clear();
  for (const auto& c : j.at("changes")) {
    s.changes.push_back({c.at("variable").get<Variable>(), c.at("value").get<std::string>()});
  }
  s.instruction_text = j.value("instruction_text", std::string());
  s.result.reset();
  if (j.contains("result") && !j.at("result").is_null()) s.result = j.at("result").get<ImageRef>();
}

Metadata apply_changes(const Metadata& base, std::span<const Change> changes) {
  if (changes.empty()) throw Error(ErrorCode::kConstraint, "no changes");
  std::set<Variable> seen;
  Metadata out = base;
  for (const auto& c : changes) {
    if (!seen.insert(c.variable).second) {
      throw Error(ErrorCode::kConstraint,
                  "variable changed twice: " + std::string(to_string(c.variable)));
    }
    if (!in_domain(c.variable, c.value)) {
      throw Error(ErrorCode::kConstraint, std::string(to_string(c.variable)) + " has no value '" +
                                              c.value + "'");
    }
    out[c.variable] = c.value;
  }
  auto lane = out.find(Variable::kLanePresence);
  const bool present = lane != out.end() && lane->second == "present";
  for (const auto& c : changes) {
    if (lane_dependent(c.variable) && !present) {
      throw Error(ErrorCode::kConstraint,
                  std::string(to_string(c.variable)) + " requires lane_presence=present");
    }
  }
  if (!present) {
    for (Variable v : all_variables()) {
      if (lane_dependent(v)) out.erase(v);
    }
  }
  return out;
}

std::vector<AugmentationSpec> plan_pairs(std::span<const BaseImage> images, Variable variable) {
  std::vector<AugmentationSpec> out;
  for (const auto& base : images) {
    if (base.image.source != ImageSource::kStreetview) {
      throw Error(ErrorCode::kConstraint, base.image.image_id + " is not a base image");
    }
    check_metadata(base.metadata);
    const auto current = base.metadata.find(variable);
    for (const auto& value : domain(variable)) {
      if (current != base.metadata.end() && current->second == value) continue;
      AugmentationSpec spec;
      spec.base_image = base.image;
      spec.changes = {{variable, value}};
      apply_changes(base.metadata, spec.changes);
      spec.instruction_text = render_instruction(spec.changes);
      out.push_back(std::move(spec));
    }
  }
  return out;
}

std::string render_instruction(std::span<const Change> changes) {
  std::string out;
  for (const auto& c : canonical(changes)) {
    out += sentence(c);
    out += ' ';
  }
  out += "Change nothing else in the image.";
  return out;
}

std::string job_key(const std::string& base_image_id, std::span<const Change> changes) {
  std::string key = base_image_id + "|";
  bool first = true;
  for (const auto& c : canonical(changes)) {
    if (!first) key += ';';
    first = false;
    key += std::string(to_string(c.variable)) + "=" + c.value;
  }
  return key;
}

// ---- edit clients ------------------------------------------------------

FixtureEditClient::FixtureEditClient(const std::filesystem::path& dir)
    : FixtureEditClient(io::read_jsonl(dir / "edits.jsonl")) {}

FixtureEditClient::FixtureEditClient(std::vector<json> rows) {
  for (const auto& r : rows) {
    table_[{r.at("image_uri").get<std::string>(), r.at("instruction_text").get<std::string>()}] =
        r.at("result_uri").get<std::string>();
  }
}

std::string FixtureEditClient::edit(const std::string& image_uri,
                                    const std::string& instruction_text) {
  auto it = table_.find({image_uri, instruction_text});
  if (it == table_.end()) {
    throw Error(ErrorCode::kBackend, "no recorded edit for " + image_uri);
  }
  return it->second;
}

void FixtureEditClient::write(const std::filesystem::path& dir, const std::vector<json>& rows) {
  std::filesystem::create_directories(dir);
  io::write_jsonl(dir / "edits.jsonl", rows, "edit_fixture");
}

HttpEditClient::HttpEditClient(std::string base_url, std::string path, int timeout_seconds)
    : base_url_(std::move(base_url)), path_(std::move(path)), timeout_seconds_(timeout_seconds) {}

std::string HttpEditClient::edit(const std::string& image_uri,
                                 const std::string& instruction_text) {
  json reply = http::post_json(base_url_, path_,
                               {{"image_uri", image_uri}, {"instruction_text", instruction_text}},
                               ErrorCode::kBackend, timeout_seconds_);
  if (!reply.contains("result_uri") || !reply["result_uri"].is_string()) {
    throw Error(ErrorCode::kBackend, "edit reply lacks result_uri");
  }
  return reply["result_uri"].get<std::string>();
}

std::unique_ptr<EditClient> make_edit_client(const std::string& spec) {
  if (spec.rfind("fixture:", 0) == 0) {
    return std::make_unique<FixtureEditClient>(std::filesystem::path(spec.substr(8)));
  }
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    return std::make_unique<HttpEditClient>(spec);
  }
  throw Error(ErrorCode::kConfig, "edit client must be fixture:<dir> or a url: " + spec);
}

// ---- provenance --------------------------------------------------------

void to_json(json& j, const Provenance& p) {
  json changes = json::array();
  for (const auto& c : p.changes) changes.push_back({{"variable", c.variable}, {"value", c.value}});
  j = json{{"v", kSchemaVersion}, {"key", p.key}, {"result", p.result}, {"changes", changes},
           {"instruction_text", p.instruction_text}};
}

void from_json(const json& j, Provenance& p) {
  j.at("key").get_to(p.key);
  j.at("result").get_to(p.result);
  p.changes.clear();
  for (const auto& c : j.at("changes")) {
    p.changes.push_back({c.at("variable").get<Variable>(), c.at("value").get<std::string>()});
  }
  p.instruction_text = j.value("instruction_text", std::string());
}

void to_json(json& j, const FailedJob& f) {
  j = json{{"v", kSchemaVersion}, {"key", f.key}, {"base_image_id", f.base_image_id},
           {"error", f.error}, {"attempts", f.attempts}};
}

void Registry::register_base(const ImageRef& image) {
  auto report = validate(image);
  if (!report.ok()) throw ValidationError("image", report.summary());
  std::lock_guard lock(mutex_);
  images_[image.image_id] = image;
}

ImageRef Registry::execute(const AugmentationSpec& spec, EditClient& client,
                           const RetryPolicy& policy) {
  const std::string& base_id = spec.base_image.image_id;
  const std::string key = job_key(base_id, spec.changes);
  std::unique_lock lock(mutex_);
  if (!images_.count(base_id)) throw Error(ErrorCode::kNotFound, "base image not registered: " + base_id);
  done_.wait(lock, [&] { return !in_flight_.count(key); });
  if (auto it = by_key_.find(key); it != by_key_.end()) return it->second.result;
  in_flight_[key] = 1;
  const ImageRef base = images_.at(base_id);
  lock.unlock();

  const std::string instruction =
      spec.instruction_text.empty() ? render_instruction(spec.changes) : spec.instruction_text;
  std::string result_uri;
  std::string last_error;
  int attempts = 0;
  int backoff = policy.backoff_ms;
  for (; attempts < std::max(policy.attempts, 1); ++attempts) {
    try {
      result_uri = client.edit(base.uri, instruction);
      break;
    } catch (const Error& e) {
      last_error = e.what();
      if (backoff > 0) std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff *= 2;
    }
  }

  lock.lock();
  in_flight_.erase(key);
  if (result_uri.empty()) {
    failed_.push_back({key, base_id, last_error, attempts});
    done_.notify_all();
    throw Error(ErrorCode::kBackend, "edit failed after " + std::to_string(attempts) +
                                         " attempts: " + last_error);
  }
  ImageRef result;
  result.image_id = "aug-" + io::sha256_hex(key).substr(0, 16);
  result.source = ImageSource::kAugmented;
  result.parent_id = base_id;
  result.uri = result_uri;
  images_[result.image_id] = result;
  by_key_[key] = {key, result, canonical(spec.changes), instruction};
  done_.notify_all();
  return result;
}

std::optional<Provenance> Registry::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = by_key_.find(key);
  if (it == by_key_.end()) return std::nullopt;
  return it->second;
}

std::optional<ImageRef> Registry::image(const std::string& image_id) const {
  std::lock_guard lock(mutex_);
  auto it = images_.find(image_id);
  if (it == images_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> Registry::lineage(const std::string& image_id) const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> chain;
  std::string id = image_id;
  while (true) {
    auto it = images_.find(id);
    if (it == images_.end()) throw Error(ErrorCode::kNotFound, "unknown image: " + id);
    if (chain.size() > images_.size()) throw Error(ErrorCode::kConsistency, "provenance cycle at " + id);
    chain.push_back(id);
    if (!it->second.parent_id) return chain;
    id = *it->second.parent_id;
  }
}

std::vector<Provenance> Registry::entries() const {
  std::lock_guard lock(mutex_);
  std::vector<Provenance> out;
  for (const auto& [k, p] : by_key_) out.push_back(p);
  return out;
}

std::vector<FailedJob> Registry::failed_jobs() const {
  std::lock_guard lock(mutex_);
  return failed_;
}

ValidationReport Registry::verify() const {
  std::lock_guard lock(mutex_);
  ValidationReport report;
  for (const auto& [id, img] : images_) {
    report.merge(validate(img), id);
    if (!img.parent_id) continue;
    if (!images_.count(*img.parent_id)) {
      report.add(id + ".parent_id", "parent not registered");
      continue;
    }
    std::set<std::string> seen = {id};
    std::optional<std::string> cur = img.parent_id;
    while (cur) {
      if (!seen.insert(*cur).second) {
        report.add(id, "provenance cycle");
        break;
      }
      auto it = images_.find(*cur);
      if (it == images_.end()) break;
      cur = it->second.parent_id;
    }
  }
  return report;
}

void Registry::save(const std::filesystem::path& path) const {
  std::vector<json> rows;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, img] : images_) {
      if (!img.parent_id) rows.push_back({{"v", kSchemaVersion}, {"base", img}});
    }
    for (const auto& [k, p] : by_key_) rows.push_back(p);
  }
  io::write_jsonl(path, rows, "augmentation_registry");
}

void Registry::load(const std::filesystem::path& path) {
  auto rows = io::read_jsonl(path);
  std::lock_guard lock(mutex_);
  for (const auto& row : rows) {
    if (row.contains("base")) {
      auto img = row.at("base").get<ImageRef>();
      images_[img.image_id] = img;
    } else {
      auto p = row.get<Provenance>();
      images_[p.result.image_id] = p.result;
      by_key_[p.key] = std::move(p);
    }
  }
}

}  // namespace bikelab::augment
