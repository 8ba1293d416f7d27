#include "bikelab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bikelab/parser.hpp"
#include "bikelab/rng.hpp"

namespace bikelab::dataset {

namespace {

constexpr std::string_view kOsmSection = "\n\nOpenStreetMap attributes:\n{osm_text}";

constexpr std::string_view kType1Template =
    R"(As a {persona} cyclist ({persona_desc}),
analyze this street image for bikeability.

Provide a brief assessment covering:
- Key observations about the street
- Factors affecting your cycling experience
- Your comfort and safety evaluation

Rate the following on a scale of 1-4:
- Comfortable: How comfortable would you feel
  cycling here?
- Safe: How safe would you perceive this road?
- Overall: Your overall willingness to cycle
  on this road

End with:
STRUCTURED OUTPUT:
Factors: [list specific factors]
Ratings: comfortable: X, safe: Y, overall: Z

OpenStreetMap attributes:
{osm_text})";

constexpr std::string_view kType2Template =
    R"(As a {persona} cyclist ({persona_desc}),
assess this street for bikeability.

Identify the most important factors affecting
bikeability for someone with your cycling
preferences, then rate the street.

Format your response as:
Factors: [list key factors]
Ratings: comfortable: X, safe: Y, overall: Z

Use a 1-4 scale for ratings.

OpenStreetMap attributes:
{osm_text})";

constexpr std::string_view kType3Template =
    R"(As a {persona} cyclist ({persona_desc}),
rate this street's bikeability.

Provide ratings (1-4 scale):
Ratings: comfortable: X, safe: Y, overall: Z

OpenStreetMap attributes:
{osm_text})";

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string_view type_tag(ExampleType t) {
  switch (t) {
    case ExampleType::kReasoning: return "t1";
    case ExampleType::kStructured: return "t2";
    case ExampleType::kRating: return "t3";
  }
  return "t?";
}

TrainingExample base_example(const SegmentAssessment& a, ExampleType type, Persona persona,
                             const AttributeSet& attrs) {
  auto report = validate(a);
  if (!report.ok()) {
    throw ValidationError("assessment", report.summary());
  }
  TrainingExample ex;
  ex.example_id = example_id(a, type);
  ex.type = type;
  ex.persona = persona;
  ex.image_ref = a.image_ref;
  ex.attributes = attrs;
  ex.prompt = render_prompt(type, persona, attrs);
  ex.ratings = a.ratings;
  ex.factors = a.factors;
  return ex;
}

}  // namespace

std::string_view persona_description(Persona p) {
  switch (p) {
    case Persona::kSF:
      return "Comfortable with all infrastructure types, showing little preference between "
             "protected and unprotected facilities.";
    case Persona::kEC:
      return "Regular cyclists who prefer bike lanes but will ride in mixed traffic when "
             "necessary.";
    case Persona::kIBC:
      return "Would cycle more if separated from traffic; requires protected infrastructure to "
             "feel safe.";
    case Persona::kNWNH:
      return "Non-cyclists who find cycling too dangerous regardless of infrastructure.";
  }
  return {};
}

std::string_view template_text(ExampleType type) {
  switch (type) {
    case ExampleType::kReasoning: return kType1Template;
    case ExampleType::kStructured: return kType2Template;
    case ExampleType::kRating: return kType3Template;
  }
  return {};
}

std::string render_osm_text(const AttributeSet& attrs) {
  auto sorted = attrs.attributes;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i) out += '\n';
    out += sorted[i].first + ": " + sorted[i].second;
  }
  return out;
}

std::string render_prompt(ExampleType type, Persona persona, const AttributeSet& attrs) {
  std::string text(template_text(type));
  if (attrs.attributes.empty()) text.erase(text.rfind(kOsmSection));
  replace_all(text, "{persona_desc}", persona_description(persona));
  replace_all(text, "{persona}", persona_display_name(persona));
  replace_all(text, "{osm_text}", render_osm_text(attrs));
  return text;
}

std::string example_id(const SegmentAssessment& a, ExampleType type) {
  return a.participant_id + "/" + a.image_ref.image_id + "/" + std::string(type_tag(type));
}

TrainingExample build_type1(const SegmentAssessment& assessment, std::string_view expert_reasoning,
                            Persona persona, const AttributeSet& attrs) {
  auto first = expert_reasoning.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    throw Error(ErrorCode::kInsufficientData, "type 1 example needs non-empty expert reasoning");
  }
  auto last = expert_reasoning.find_last_not_of(" \t\r\n");
  std::string_view reasoning = expert_reasoning.substr(first, last - first + 1);

  // A reasoning chain that already states ratings must agree with the
  // participant's ratings.
  try {
    auto embedded = parser::parse(reasoning);
    if (!(embedded.ratings == assessment.ratings)) {
      throw Error(ErrorCode::kConsistency,
                  "expert reasoning states ratings that differ from the assessment");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConsistency) throw;
  }

  auto ex = base_example(assessment, ExampleType::kReasoning, persona, attrs);
  ex.target = std::string(reasoning) + "\n\nSTRUCTURED OUTPUT:\n" +
              parser::render_factors_line(assessment.factors) + "\n" +
              parser::render_ratings_line(assessment.ratings);
  return ex;
}

TrainingExample build_type2(const SegmentAssessment& assessment, Persona persona,
                            const AttributeSet& attrs) {
  auto ex = base_example(assessment, ExampleType::kStructured, persona, attrs);
  ex.target = parser::render_factors_line(assessment.factors) + "\n" +
              parser::render_ratings_line(assessment.ratings);
  return ex;
}

TrainingExample build_type3(const SegmentAssessment& assessment, Persona persona,
                            const AttributeSet& attrs) {
  auto ex = base_example(assessment, ExampleType::kRating, persona, attrs);
  ex.factors = {};
  ex.target = parser::render_ratings_line(assessment.ratings);
  return ex;
}

void to_json(json& j, const TrainingExample& e) {
  j = json{{"v", kSchemaVersion},
           {"example_id", e.example_id},
           {"type", static_cast<int>(e.type)},
           {"persona", e.persona},
           {"image_ref", e.image_ref},
           {"attributes", e.attributes},
           {"prompt", e.prompt},
           {"target", e.target},
           {"ratings", e.ratings},
           {"factors", e.factors}};
}

void from_json(const json& j, TrainingExample& e) {
  e.example_id = j.at("example_id").get<std::string>();
  int t = j.at("type").get<int>();
  if (t < 1 || t > 3) throw ParseError("example type must be 1, 2 or 3", 0);
  e.type = static_cast<ExampleType>(t);
  e.persona = j.at("persona").get<Persona>();
  e.image_ref = j.at("image_ref").get<ImageRef>();
  e.attributes = j.value("attributes", json::array()).get<AttributeSet>();
  e.prompt = j.at("prompt").get<std::string>();
  e.target = j.at("target").get<std::string>();
  e.ratings = j.at("ratings").get<RatingTriple>();
  e.factors = j.value("factors", json::array()).get<FactorTagList>();
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> apportion(std::size_t total, const std::vector<double>& weights) {
  std::vector<std::size_t> out(weights.size(), 0);
  double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (weights.empty() || wsum <= 0.0) return out;
  std::vector<double> remainder(weights.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double exact = static_cast<double>(total) * weights[i] / wsum;
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b] + 1e-12; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    if (weights[order[k]] > 0.0) {
      ++out[order[k]];
      ++assigned;
    }
  }
  return out;
}

std::array<std::size_t, 3> plan_counts(const std::array<std::size_t, 3>& pool_sizes,
                                       std::size_t budget, const std::array<double, 3>& ratios) {
  if (budget < 3) throw Error(ErrorCode::kConfig, "epoch budget must be at least 3");
  for (double r : ratios) {
    if (!(r >= 0.0)) throw Error(ErrorCode::kConfig, "sampling ratios must be non-negative");
  }
  std::size_t available = pool_sizes[0] + pool_sizes[1] + pool_sizes[2];
  if (available < budget) {
    throw Error(ErrorCode::kInsufficientData,
                "pools hold " + std::to_string(available) + " examples, budget is " +
                    std::to_string(budget));
  }

  auto quota = apportion(budget, {ratios.begin(), ratios.end()});
  std::array<std::size_t, 3> counts{quota[0], quota[1], quota[2]};
  std::array<bool, 3> capped{};
  while (true) {
    std::size_t deficit = 0;
    for (int t = 0; t < 3; ++t) {
      if (!capped[t] && counts[t] > pool_sizes[t]) {
        deficit += counts[t] - pool_sizes[t];
        counts[t] = pool_sizes[t];
        capped[t] = true;
      }
    }
    if (deficit == 0) break;
    std::vector<double> w(3, 0.0);
    for (int t = 0; t < 3; ++t) {
      if (!capped[t]) w[t] = ratios[t];
    }
    if (w[0] + w[1] + w[2] <= 0.0) {
      // Remaining types carry zero ratio; spread by spare capacity instead.
      for (int t = 0; t < 3; ++t) {
        if (!capped[t]) w[t] = static_cast<double>(pool_sizes[t] - counts[t]);
      }
    }
    auto extra = apportion(deficit, w);
    for (int t = 0; t < 3; ++t) counts[t] += extra[t];
  }
  return counts;
}

EpochPlan plan_epoch(const std::array<std::size_t, 3>& pool_sizes, std::size_t budget,
                     const std::array<double, 3>& ratios, std::uint64_t seed) {
  EpochPlan plan;
  plan.budget = budget;
  plan.counts = plan_counts(pool_sizes, budget, ratios);
  for (int t = 0; t < 3; ++t) {
    Rng rng = make_rng(seed, "epoch-type-" + std::to_string(t + 1));
    std::vector<std::size_t> idx(pool_sizes[t]);
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first counts[t] slots are the draw.
    for (std::size_t i = 0; i < plan.counts[t]; ++i) {
      std::size_t j = i + uniform_index(rng, idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(plan.counts[t]);
    plan.drawn[t] = std::move(idx);
  }
  return plan;
}

void to_json(json& j, const EpochPlan& p) {
  j = json{{"v", kSchemaVersion},
           {"budget", p.budget},
           {"counts", p.counts},
           {"drawn", {{"type1", p.drawn[0]}, {"type2", p.drawn[1]}, {"type3", p.drawn[2]}}}};
}

}  // namespace bikelab::dataset
