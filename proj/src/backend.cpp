#include "bikelab/backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bikelab/http.hpp"
#include "bikelab/parser.hpp"
#include "bikelab/synth.hpp"
#include "bikelab/training.hpp"

namespace bikelab::training {

void to_json(json& j, const GenerationRequest& r) {
  j = json{{"persona", r.persona},       {"image_ref", r.image_ref},
           {"attributes", r.attributes}, {"prompt", r.prompt},
           {"temperature", r.temperature}, {"max_tokens", r.max_tokens}};
}

void from_json(const json& j, GenerationRequest& r) {
  j.at("persona").get_to(r.persona);
  j.at("image_ref").get_to(r.image_ref);
  r.attributes = j.contains("attributes") ? j.at("attributes").get<AttributeSet>() : AttributeSet{};
  j.at("prompt").get_to(r.prompt);
  r.temperature = j.value("temperature", 0.0);
  r.max_tokens = j.value("max_tokens", 512);
}

void to_json(json& j, const PreferenceUpdate& u) {
  j = json{{"prompt", u.prompt}, {"chosen", u.chosen}, {"rejected", u.rejected},
           {"weight", u.weight}};
}

void from_json(const json& j, PreferenceUpdate& u) {
  j.at("prompt").get_to(u.prompt);
  j.at("chosen").get_to(u.chosen);
  j.at("rejected").get_to(u.rejected);
  j.at("weight").get_to(u.weight);
}

// ---- mock -------------------------------------------------------------------

namespace {

constexpr std::array<std::array<std::string_view, 3>, 3> kCannedFactors = {{
    {"no bike lane", "mixed traffic", "parked cars"},
    {"painted bike lane", "moderate traffic", "parked cars"},
    {"physical separation", "buffered lane", "low traffic stress"},
}};

constexpr std::array<std::array<std::string_view, 3>, 3> kObservation = {{
    {"The street has no dedicated space for cycling and riders share the lane with cars.",
     "Cyclists here ride in the general travel lane alongside motor traffic.",
     "There is no marked bicycle facility on this segment."},
    {"A painted bike lane runs along the curb with no physical buffer.",
     "The bike lane is marked with paint only, next to moving traffic.",
     "A striped lane gives cyclists their own space, separated only by a line."},
    {"The bike lane is separated from traffic by a buffer or physical barrier.",
     "A protected facility keeps cyclists apart from motor vehicles.",
     "Cyclists have a dedicated lane with clear separation from the roadway."},
}};

constexpr std::array<std::string_view, 4> kVerdict = {
    "I would avoid riding here.",
    "I would ride here only if I had no alternative.",
    "I would be fairly willing to ride here.",
    "I would happily ride here.",
};

double prior_rating(int level) { return 2.25 + 0.25 * level; }

std::uint64_t completion_key(std::string_view prompt, std::string_view completion) {
  return mix_seed(stable_hash(prompt), stable_hash(completion));
}

enum class PromptKind { kReasoning, kStructured, kRating };

PromptKind prompt_kind(std::string_view prompt) {
  if (prompt.find("STRUCTURED OUTPUT:") != std::string_view::npos) return PromptKind::kReasoning;
  if (prompt.find("Factors: [") != std::string_view::npos) return PromptKind::kStructured;
  return PromptKind::kRating;
}

}  // namespace

MockBackend::MockBackend(MockBackendOptions options) : options_(options) {
  for (auto& by_level : table_) {
    for (int level = 0; level < 3; ++level) {
      by_level[level].rating.fill(prior_rating(level));
      for (auto f : kCannedFactors[level]) by_level[level].factor_weight[std::string(f)] = 0.5;
    }
  }
}

int MockBackend::image_feature(const AttributeSet& attrs, std::string_view image_id) {
  if (attrs.get("cycleway")) return synth::protection_level(attrs);
  return static_cast<int>(stable_hash(image_id) % 3);
}

std::string MockBackend::render(const GenerationRequest& request, Rng& rng) const {
  const int level = image_feature(request.attributes, request.image_ref.image_id);
  const Cell& c = table_[static_cast<int>(request.persona)][level];
  const double t = request.temperature;

  RatingTriple r;
  for (int d = 0; d < 3; ++d) {
    double v = c.rating[d] + (t > 0 ? t * 0.8 * standard_normal(rng) : 0.0);
    r.set(static_cast<RatingDimension>(d),
          static_cast<int>(std::clamp(std::floor(v + 0.5), 1.0, 4.0)));
  }

  std::vector<std::pair<std::string, double>> ranked(c.factor_weight.begin(),
                                                     c.factor_weight.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < ranked.size() && tags.size() < 3; ++i) tags.push_back(ranked[i].first);
  if (t > 0 && !tags.empty() && uniform01(rng) < 0.5 * t) {
    const auto& vocab = synth::factor_vocabulary();
    tags.back() = vocab[uniform_index(rng, vocab.size())];
  }
  FactorTagList factors = make_tags(tags);

  const std::string ratings_line = parser::render_ratings_line(r);
  switch (prompt_kind(request.prompt)) {
    case PromptKind::kRating: return ratings_line;
    case PromptKind::kStructured: return parser::render_factors_line(factors) + "\n" + ratings_line;
    case PromptKind::kReasoning: break;
  }
  const std::size_t variant = t > 0 ? uniform_index(rng, 3) : 0;
  std::string text(kObservation[level][variant]);
  if (!factors.tags.empty()) {
    text += " The main factors for me are ";
    for (std::size_t i = 0; i < factors.tags.size(); ++i) {
      if (i) text += i + 1 == factors.tags.size() ? " and " : ", ";
      text += factors.tags[i];
    }
    text += ".";
  }
  text += " ";
  text += kVerdict[r.willingness - 1];
  return text + "\n\nSTRUCTURED OUTPUT:\n" + parser::render_factors_line(factors) + "\n" +
         ratings_line;
}

std::string MockBackend::generate(const GenerationRequest& request) {
  std::lock_guard lock(mutex_);
  std::uint64_t stream = mix_seed(stable_hash(request.prompt), stable_hash(request.image_ref.image_id));
  if (request.temperature > 0) stream = mix_seed(stream, ++nonce_);
  Rng rng(mix_seed(options_.seed, stream));
  return render(request, rng);
}

double MockBackend::sequence_logprob(std::string_view prompt, std::string_view completion) {
  std::lock_guard lock(mutex_);
  const std::uint64_t key = completion_key(prompt, completion);
  const double base = 0.1 + 0.02 * count_words(completion) +
                      0.5 * static_cast<double>(mix_seed(key, options_.seed) >> 11) /
                          9007199254740992.0;
  auto it = logprob_shift_.find(key);
  const double shift = it == logprob_shift_.end() ? 0.0 : it->second;
  return -softplus(base - shift);
}

double MockBackend::apply_sft_step(std::span<const dataset::TrainingExample> batch, double lr) {
  if (batch.empty()) throw Error(ErrorCode::kBackend, "empty SFT batch");
  std::lock_guard lock(mutex_);
  const double alpha = std::clamp(lr * options_.sft_lr_scale, 0.0, 1.0);

  struct Acc {
    std::array<double, 3> sum{};
    int n = 0;
  };
  std::map<std::pair<int, int>, Acc> acc;
  double loss = 0.0;
  for (const auto& ex : batch) {
    const int level = image_feature(ex.attributes, ex.image_ref.image_id);
    const auto target = parser::parse(ex.target);
    Cell& c = cell(ex.persona, level);
    auto& a = acc[{static_cast<int>(ex.persona), level}];
    for (int d = 0; d < 3; ++d) {
      const double y = target.ratings.get(static_cast<RatingDimension>(d));
      loss += (c.rating[d] - y) * (c.rating[d] - y) / 3.0;
      a.sum[d] += y;
    }
    ++a.n;
    for (const auto& tag : target.factors.tags) c.factor_weight[tag] += alpha;
  }
  for (const auto& [key, a] : acc) {
    Cell& c = table_[key.first][key.second];
    for (int d = 0; d < 3; ++d) c.rating[d] += alpha * (a.sum[d] / a.n - c.rating[d]);
  }
  return loss / static_cast<double>(batch.size());
}

void MockBackend::apply_preference_step(std::span<const PreferenceUpdate> updates, double lr) {
  std::lock_guard lock(mutex_);
  for (const auto& u : updates) {
    const double step = lr * options_.preference_lr_scale * u.weight;
    logprob_shift_[completion_key(u.prompt, u.chosen)] += step;
    logprob_shift_[completion_key(u.prompt, u.rejected)] -= step;
  }
}

std::string MockBackend::snapshot() {
  std::lock_guard lock(mutex_);
  json cells = json::array();
  for (const auto& by_level : table_) {
    json row = json::array();
    for (const auto& c : by_level) row.push_back({{"rating", c.rating}, {"factors", c.factor_weight}});
    cells.push_back(std::move(row));
  }
  std::map<std::string, double> shifts;
  for (const auto& [k, v] : logprob_shift_) shifts[std::to_string(k)] = v;
  return json{{"kind", "mock"}, {"seed", options_.seed}, {"nonce", nonce_},
              {"table", std::move(cells)}, {"shifts", shifts}}
      .dump();
}

void MockBackend::restore(std::string_view blob) {
  json j;
  try {
    j = json::parse(blob);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kBackend, std::string("bad mock snapshot: ") + e.what());
  }
  if (j.value("kind", "") != "mock") throw Error(ErrorCode::kBackend, "not a mock snapshot");
  std::lock_guard lock(mutex_);
  nonce_ = j.at("nonce").get<std::uint64_t>();
  const auto& cells = j.at("table");
  for (int p = 0; p < 4; ++p) {
    for (int level = 0; level < 3; ++level) {
      const auto& c = cells.at(p).at(level);
      table_[p][level].rating = c.at("rating").get<std::array<double, 3>>();
      table_[p][level].factor_weight = c.at("factors").get<std::map<std::string, double>>();
    }
  }
  logprob_shift_.clear();
  for (const auto& [k, v] : j.at("shifts").items()) {
    logprob_shift_[std::stoull(k)] = v.get<double>();
  }
}

// ---- remote -----------------------------------------------------------------

RemoteBackend::RemoteBackend(std::string base_url, int timeout_seconds)
    : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {}

RemoteBackend::~RemoteBackend() = default;

json RemoteBackend::post(const std::string& path, const json& body) {
  return http::post_json(base_url_, path, body, ErrorCode::kBackend, timeout_seconds_);
}

std::string RemoteBackend::generate(const GenerationRequest& request) {
  return post("/generate", request).at("text").get<std::string>();
}

double RemoteBackend::sequence_logprob(std::string_view prompt, std::string_view completion) {
  double lp = post("/logprob", {{"prompt", prompt}, {"completion", completion}})
                  .at("logprob")
                  .get<double>();
  if (!(lp <= 0.0)) throw Error(ErrorCode::kBackend, "backend returned a positive log-probability");
  return lp;
}

double RemoteBackend::apply_sft_step(std::span<const dataset::TrainingExample> batch, double lr) {
  json items = json::array();
  for (const auto& ex : batch) items.push_back(ex);
  return post("/sft_step", {{"batch", std::move(items)}, {"lr", lr}}).at("loss").get<double>();
}

void RemoteBackend::apply_preference_step(std::span<const PreferenceUpdate> updates, double lr) {
  json items = json::array();
  for (const auto& u : updates) items.push_back(u);
  post("/dpo_step", {{"updates", std::move(items)}, {"lr", lr}});
}

std::string RemoteBackend::snapshot() {
  return post("/snapshot", json::object()).at("snapshot").get<std::string>();
}

void RemoteBackend::restore(std::string_view blob) {
  post("/restore", {{"snapshot", blob}});
}

std::unique_ptr<ModelBackend> make_backend(std::string_view kind, std::uint64_t seed,
                                           std::string_view url) {
  if (kind == "mock") return std::make_unique<MockBackend>(MockBackendOptions{.seed = seed});
  if (kind == "remote") {
    if (url.empty()) throw Error(ErrorCode::kConfig, "remote backend needs a URL");
    return std::make_unique<RemoteBackend>(std::string(url));
  }
  throw Error(ErrorCode::kConfig, "unknown backend '" + std::string(kind) + "'");
}

}  // namespace bikelab::training
