#include "bikelab/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <regex>
#include <sstream>

#include "bikelab/dataset.hpp"
#include "bikelab/http.hpp"
#include "bikelab/io.hpp"
#include "bikelab/parser.hpp"
#include "bikelab/rng.hpp"
#include "bikelab/stats.hpp"

namespace bikelab::eval {

// ---- ratings -------------------------------------------------------------

void to_json(json& j, const DimensionMetrics& m) {
  j = json{{"mae", m.mae}, {"em", m.em}, {"w1", m.w1}};
  j["pearson"] = m.pearson ? json(*m.pearson) : json(nullptr);
}

void to_json(json& j, const RatingMetrics& m) {
  j = json{{"n", m.n}, {"average", m.average}, {"warnings", m.warnings}};
  for (int d = 0; d < 3; ++d) {
    j["per_dimension"][std::string(to_string(static_cast<RatingDimension>(d)))] = m.per_dimension[d];
  }
}

RatingMetrics rating_metrics(std::span<const RatingTriple> pred, std::span<const RatingTriple> gt) {
  if (pred.size() != gt.size()) {
    throw Error(ErrorCode::kAlignment, "prediction/ground-truth length mismatch: " +
                                           std::to_string(pred.size()) + " vs " +
                                           std::to_string(gt.size()));
  }
  if (pred.empty()) throw Error(ErrorCode::kAlignment, "no aligned instances");
  RatingMetrics out;
  out.n = pred.size();
  const double n = static_cast<double>(pred.size());
  double pearson_sum = 0.0;
  int pearson_defined = 0;
  for (int d = 0; d < 3; ++d) {
    const auto dim = static_cast<RatingDimension>(d);
    std::vector<double> p(pred.size()), g(gt.size());
    double abs_sum = 0;
    std::size_t exact = 0, within = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      p[i] = pred[i].get(dim);
      g[i] = gt[i].get(dim);
      const double diff = std::abs(p[i] - g[i]);
      abs_sum += diff;
      exact += diff == 0;
      within += diff <= 1;
    }
    auto& m = out.per_dimension[d];
    m.mae = abs_sum / n;
    m.em = static_cast<double>(exact) / n;
    m.w1 = static_cast<double>(within) / n;
    m.pearson = stats::pearson(p, g);
    if (m.pearson) {
      pearson_sum += *m.pearson;
      ++pearson_defined;
    } else {
      out.warnings.push_back("pearson undefined for " + std::string(to_string(dim)) +
                             " (constant series); excluded from the average");
    }
    out.average.mae += m.mae / 3.0;
    out.average.em += m.em / 3.0;
    out.average.w1 += m.w1 / 3.0;
  }
  if (pearson_defined > 0) out.average.pearson = pearson_sum / pearson_defined;
  return out;
}

// ---- embedders -----------------------------------------------------------

namespace {

void normalize(std::vector<double>& v) {
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm == 0) {
    throw Error(ErrorCode::kBackend, "zero embedding vector");
  }
  for (double& x : v) x /= norm;
}

std::vector<std::string> words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

std::vector<std::vector<double>> HashingEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& text : texts) {
    std::vector<double> v(dimension_, 0.0);
    auto add = [&](std::string_view feature, double weight) {
      const std::uint64_t h = stable_hash(feature);
      v[h % dimension_] += (h >> 63) ? -weight : weight;
    };
    for (const auto& w : words(text)) {
      add("w:" + w, 1.0);
      const std::string padded = "#" + w + "#";
      for (std::size_t i = 0; i + 3 <= padded.size(); ++i) add("c:" + padded.substr(i, 3), 0.35);
    }
    if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0; })) v[0] = 1.0;
    normalize(v);
    out.push_back(std::move(v));
  }
  return out;
}

VectorTableEmbedder::VectorTableEmbedder(const std::filesystem::path& path) {
  for (const auto& rec : io::read_jsonl(path)) {
    auto v = rec.at("vector").get<std::vector<double>>();
    normalize(v);
    table_[rec.at("text").get<std::string>()] = std::move(v);
  }
}

VectorTableEmbedder::VectorTableEmbedder(std::map<std::string, std::vector<double>> table)
    : table_(std::move(table)) {
  for (auto& [k, v] : table_) normalize(v);
}

std::vector<std::vector<double>> VectorTableEmbedder::embed(const std::vector<std::string>& texts) {
  std::vector<std::vector<double>> out;
  for (const auto& t : texts) {
    auto it = table_.find(t);
    if (it == table_.end()) throw Error(ErrorCode::kBackend, "no vector for '" + t + "'");
    out.push_back(it->second);
  }
  return out;
}

HttpEmbedder::HttpEmbedder(std::string base_url, std::string model)
    : base_url_(std::move(base_url)), model_(std::move(model)) {}

std::vector<std::vector<double>> HttpEmbedder::embed(const std::vector<std::string>& texts) {
  json reply = http::post_json(base_url_, "/embed", {{"model", model_}, {"texts", texts}},
                               ErrorCode::kBackend);
  auto out = reply.at("embeddings").get<std::vector<std::vector<double>>>();
  if (out.size() != texts.size()) throw Error(ErrorCode::kBackend, "embedding count mismatch");
  for (auto& v : out) normalize(v);
  return out;
}

std::unique_ptr<Embedder> make_embedder(std::string_view spec) {
  if (spec == "hashing") return std::make_unique<HashingEmbedder>();
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    return std::make_unique<HttpEmbedder>(std::string(spec));
  }
  return std::make_unique<VectorTableEmbedder>(std::filesystem::path(spec));
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kBackend, "embedding dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

// ---- matching ------------------------------------------------------------

void to_json(json& j, const FactorMatchResult& r) {
  json matches = json::array();
  for (const auto& m : r.matches) {
    matches.push_back({{"pred", m.pred_tag}, {"gt", m.gt_tag}, {"similarity", m.similarity}});
  }
  j = json{{"matches", matches}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
}

FactorMatchResult greedy_match(const std::vector<std::vector<double>>& similarity,
                               double threshold) {
  const std::size_t n_pred = similarity.size();
  const std::size_t n_gt = n_pred ? similarity[0].size() : 0;
  for (const auto& row : similarity) {
    if (row.size() != n_gt) throw Error(ErrorCode::kAlignment, "ragged similarity matrix");
  }
  FactorMatchResult out;
  std::vector<bool> pred_used(n_pred, false), gt_used(n_gt, false);
  for (;;) {
    std::optional<std::pair<std::size_t, std::size_t>> best;
    for (std::size_t i = 0; i < n_pred; ++i) {
      if (pred_used[i]) continue;
      for (std::size_t j = 0; j < n_gt; ++j) {
        if (gt_used[j] || !(similarity[i][j] >= threshold)) continue;
        // Strict '>' keeps the first (lowest (i, j)) cell among ties.
        if (!best || similarity[i][j] > similarity[best->first][best->second]) best = {{i, j}};
      }
    }
    if (!best) break;
    pred_used[best->first] = gt_used[best->second] = true;
    out.matches.push_back({best->first, best->second, {}, {}, similarity[best->first][best->second]});
  }
  if (n_pred == 0 && n_gt == 0) {
    out.precision = out.recall = out.f1 = 1.0;
    return out;
  }
  const double k = static_cast<double>(out.matches.size());
  out.precision = n_pred ? k / static_cast<double>(n_pred) : 0.0;
  out.recall = n_gt ? k / static_cast<double>(n_gt) : 0.0;
  const double s = out.precision + out.recall;
  out.f1 = s > 0 ? 2 * out.precision * out.recall / s : 0.0;
  return out;
}

FactorMatchResult greedy_match(const FactorTagList& pred, const FactorTagList& gt,
                               Embedder& embedder, double threshold) {
  if (pred.tags.empty() != gt.tags.empty()) return {};
  std::vector<std::vector<double>> sim(pred.tags.size(), std::vector<double>(gt.tags.size()));
  if (!pred.tags.empty()) {
    auto pv = embedder.embed(pred.tags);
    auto gv = embedder.embed(gt.tags);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      for (std::size_t j = 0; j < gv.size(); ++j) sim[i][j] = cosine(pv[i], gv[j]);
    }
  }
  auto out = greedy_match(sim, threshold);
  for (auto& m : out.matches) {
    m.pred_tag = pred.tags[m.pred_index];
    m.gt_tag = gt.tags[m.gt_index];
  }
  return out;
}

void to_json(json& j, const FactorMetrics& m) {
  j = json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
           {"evaluated", m.evaluated}, {"excluded", m.excluded}};
}

FactorMetrics factor_metrics(std::span<const FactorTagList> pred, std::span<const FactorTagList> gt,
                             std::span<const std::string> ids, Embedder& embedder,
                             double threshold) {
  if (pred.size() != gt.size() || ids.size() != gt.size()) {
    throw Error(ErrorCode::kAlignment, "factor lists are not aligned");
  }
  FactorMetrics out;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    try {
      auto r = greedy_match(pred[i], gt[i], embedder, threshold);
      out.precision += r.precision;
      out.recall += r.recall;
      out.f1 += r.f1;
      ++out.evaluated;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kBackend) throw;
      out.excluded.push_back(ids[i]);
    }
  }
  if (out.evaluated == 0) throw Error(ErrorCode::kInsufficientData, "no instance could be embedded");
  const double n = static_cast<double>(out.evaluated);
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

// ---- judge ---------------------------------------------------------------

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::kFactualAccuracy: return "factual_accuracy";
    case Criterion::kLogicalCoherence: return "logical_coherence";
    case Criterion::kPersonaConsistency: return "persona_consistency";
  }
  return "?";
}

namespace {

constexpr std::array<std::string_view, 3> kCriterionTitle = {
    "Factual Accuracy", "Logical Coherence", "Persona Consistency"};

constexpr std::array<std::string_view, 3> kRubric = {
    "Does the explanation correctly describe the infrastructure features visible in the image "
    "and listed in the road attributes?\n"
    "1 = mostly incorrect, 2 = partly correct, 3 = largely correct, 4 = fully correct",
    "Is the explanation clear, and do its observations lead logically to its ratings?\n"
    "1 = incoherent, 2 = weak, 3 = mostly coherent, 4 = fully coherent",
    "Does the explanation reflect the concerns and ratings typical of the stated cyclist "
    "persona?\n"
    "1 = contradicts the persona, 2 = weak fit, 3 = good fit, 4 = fully consistent",
};

std::string section(std::string_view prompt, std::string_view header) {
  auto start = prompt.find(header);
  if (start == std::string_view::npos) return {};
  start += header.size();
  auto end = prompt.find('\n', start);
  return std::string(prompt.substr(start, end == std::string_view::npos ? end : end - start));
}

}  // namespace

std::string judge_prompt(Criterion c, std::string_view explanation, const JudgeContext& ctx) {
  const int i = static_cast<int>(c);
  std::string p;
  p += "You are an expert in transportation planning evaluating a street bikeability assessment "
       "written for a specific cyclist persona.\n\n";
  p += "Criterion: ";
  p += kCriterionTitle[i];
  p += "\n";
  p += kRubric[i];
  p += "\n\nPersona: ";
  p += persona_display_name(ctx.persona);
  p += " (";
  p += dataset::persona_description(ctx.persona);
  p += ")\nImage: " + ctx.image_ref.image_id + "\n";
  p += "Road attributes:\n" + dataset::render_osm_text(ctx.attributes) + "\n";
  p += "Reference ratings: " + parser::render_ratings_line(ctx.ground_truth.ratings) + "\n";
  p += "Reference factors: " + parser::render_factors_line(ctx.ground_truth.factors) + "\n";
  p += "\nAssessment to evaluate:\n<<<\n";
  p += explanation;
  p += "\n>>>\n\nReply with one line of the form \"Score: N\" where N is 1, 2, 3 or 4.";
  return p;
}

std::optional<double> normalize_score(std::string_view reply) {
  static const std::regex fraction(R"((\d+(?:\.\d+)?)\s*/\s*(\d+(?:\.\d+)?))");
  static const std::regex number(R"((\d+(?:\.\d+)?))");
  const std::string s(reply);
  std::smatch m;
  if (std::regex_search(s, m, fraction)) {
    const double a = std::stod(m[1]), b = std::stod(m[2]);
    if (b > 0 && a >= 0 && a <= b) return a / b;
    return std::nullopt;
  }
  if (std::regex_search(s, m, number)) {
    const double v = std::stod(m[1]);
    if (v >= 1 && v <= 4) return (v - 1) / 3.0;
  }
  return std::nullopt;
}

FixtureJudgeClient::FixtureJudgeClient(const std::filesystem::path& path) {
  for (const auto& rec : io::read_jsonl(path)) {
    replies_[rec.at("prompt_sha256").get<std::string>()] = rec.at("reply").get<std::string>();
  }
}

FixtureJudgeClient::FixtureJudgeClient(std::map<std::string, std::string> replies)
    : replies_(std::move(replies)) {}

std::string FixtureJudgeClient::complete(const std::string& prompt) {
  auto it = replies_.find(io::sha256_hex(prompt));
  if (it == replies_.end()) throw Error(ErrorCode::kNotFound, "no recorded judge reply for prompt");
  return it->second;
}

std::string RecordingJudgeClient::complete(const std::string& prompt) {
  std::string reply = inner_.complete(prompt);
  log_.emplace_back(prompt, reply);
  return reply;
}

std::vector<json> RecordingJudgeClient::fixtures() const {
  std::vector<json> out;
  for (const auto& [prompt, reply] : log_) {
    out.push_back({{"v", kSchemaVersion}, {"prompt_sha256", io::sha256_hex(prompt)},
                   {"prompt", prompt}, {"reply", reply}});
  }
  return out;
}

HttpJudgeClient::HttpJudgeClient(std::string base_url, std::string model, std::string api_key)
    : base_url_(std::move(base_url)), model_(std::move(model)), api_key_(std::move(api_key)) {}

std::string HttpJudgeClient::complete(const std::string& prompt) {
  json body = {{"model", model_},
               {"temperature", 0},
               {"messages", json::array({{{"role", "user"}, {"content", prompt}}})}};
  json reply = http::post_json(base_url_, "/v1/chat/completions", body, ErrorCode::kBackend, 120,
                               api_key_);
  return reply.at("choices").at(0).at("message").at("content").get<std::string>();
}

std::unique_ptr<JudgeClient> make_judge_client(std::string_view spec) {
  if (spec == "heuristic") return std::make_unique<HeuristicJudgeClient>();
  if (spec.rfind("fixture:", 0) == 0) {
    return std::make_unique<FixtureJudgeClient>(std::filesystem::path(std::string(spec.substr(8))));
  }
  if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) {
    const char* model = std::getenv("BIKELAB_JUDGE_MODEL");
    const char* key = std::getenv("BIKELAB_JUDGE_API_KEY");
    return std::make_unique<HttpJudgeClient>(std::string(spec), model ? model : "gpt-4o",
                                             key ? key : "");
  }
  throw Error(ErrorCode::kConfig, "judge must be heuristic, fixture:<path> or a url: " + std::string(spec));
}

std::string HeuristicJudgeClient::complete(const std::string& prompt) {
  const auto open = prompt.find("<<<\n");
  const auto close = prompt.rfind("\n>>>");
  if (open == std::string::npos || close == std::string::npos || close < open) {
    return "Score: 1";
  }
  const std::string explanation = prompt.substr(open + 4, close - open - 4);
  std::optional<parser::ParsedOutput> parsed;
  try {
    parsed = parser::parse(explanation);
  } catch (const Error&) {
    return "Score: 1";
  }
  const auto gt_ratings = parser::parse(section(prompt, "Reference ratings: "));
  const auto gt_factors = parser::parse(section(prompt, "Reference factors: ") + "\nRatings: comfortable: 1, safe: 1, overall: 1");

  int score = 1;
  const std::string criterion = section(prompt, "Criterion: ");
  if (criterion == kCriterionTitle[0]) {
    // Share of reference factors sharing a word with a predicted factor.
    std::size_t hit = 0;
    for (const auto& g : gt_factors.factors.tags) {
      const auto gw = words(g);
      bool found = false;
      for (const auto& p : parsed->factors.tags) {
        for (const auto& w : words(p)) found |= std::find(gw.begin(), gw.end(), w) != gw.end();
      }
      hit += found;
    }
    const double frac = gt_factors.factors.tags.empty()
                            ? (parsed->factors.tags.empty() ? 1.0 : 0.5)
                            : static_cast<double>(hit) / gt_factors.factors.tags.size();
    score = 1 + static_cast<int>(std::floor(frac * 3.0 + 0.5));
  } else if (criterion == kCriterionTitle[1]) {
    score = 2;
    if (parsed->reasoning_text && count_words(*parsed->reasoning_text) >= 8) ++score;
    if (parsed->has_factors_line && !parsed->factors.tags.empty()) ++score;
  } else {
    const int gap = std::abs(parsed->ratings.willingness - gt_ratings.ratings.willingness) +
                    std::abs(parsed->ratings.comfort - gt_ratings.ratings.comfort);
    score = std::max(1, 4 - gap);
  }
  return "Score: " + std::to_string(std::clamp(score, 1, 4));
}

void to_json(json& j, const JudgeResult& r) {
  j = json::object();
  for (auto c : kCriteria) {
    const auto& s = r.scores[static_cast<int>(c)];
    j["scores"][std::string(to_string(c))] = s ? json(*s) : json(nullptr);
  }
  json ts = json::array();
  for (const auto& t : r.transcripts) {
    ts.push_back({{"criterion", to_string(t.criterion)}, {"prompt", t.prompt}, {"replies", t.replies}});
  }
  j["transcripts"] = std::move(ts);
}

JudgeResult judge(std::string_view explanation, const JudgeContext& ctx, JudgeClient& client) {
  JudgeResult out;
  for (auto c : kCriteria) {
    Transcript t{c, judge_prompt(c, explanation, ctx), {}};
    for (int attempt = 0; attempt < 2; ++attempt) {
      std::string reply;
      try {
        reply = client.complete(t.prompt);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kBackend) throw;
        t.replies.push_back(std::string("<error: ") + e.what() + ">");
        continue;
      }
      t.replies.push_back(reply);
      if (auto s = normalize_score(reply)) {
        out.scores[static_cast<int>(c)] = *s;
        break;
      }
    }
    out.transcripts.push_back(std::move(t));
  }
  return out;
}

JudgeSummary summarize(std::span<const JudgeResult> results) {
  JudgeSummary out;
  for (int c = 0; c < 3; ++c) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : results) {
      if (r.scores[c]) {
        sum += *r.scores[c];
        ++n;
      } else {
        ++out.missing[c];
      }
    }
    if (n > 0) out.mean[c] = sum / static_cast<double>(n);
  }
  return out;
}

// ---- reports -------------------------------------------------------------

Table2Row table2_row(std::string method, const RatingMetrics& r,
                     const std::optional<FactorMetrics>& f) {
  Table2Row row{std::move(method), r.average.mae, r.average.em, r.average.w1, r.average.pearson,
                {}, {}, {}};
  if (f) {
    row.prec = f->precision;
    row.rec = f->recall;
    row.f1 = f->f1;
  }
  return row;
}

std::vector<Table2Row> reference_table2() {
  return {
      {"GPT-4o Zero-shot", 1.00, 0.30, 0.70, 0.25, 0.12, 0.08, 0.10},
      {"KS-RF (Rating-only)", 0.70, 0.45, 0.85, 0.50, {}, {}, {}},
      {"KS-RF", 0.80, 0.38, 0.82, 0.45, 0.33, 0.30, 0.31},
      {"Ours", 0.71, 0.41, 0.87, 0.48, 0.52, 0.46, 0.49},
  };
}

std::vector<AblationRow> reference_ablation() {
  return {
      {"Type 3 only", 0.75, 0.85, {}},
      {"Type 3 + Type 2", 0.73, 0.86, {}},
      {"Full (Type 1+2+3, 15/40/45)", 0.71, 0.87, 0.49},
  };
}

std::vector<Table3Row> reference_table3() {
  return {
      {"GPT-4o", 0.25, 0.694, 0.995},
      {"Ours (SFT)", 0.58, 0.580, 0.920},
      {"Ours+DPO", 0.59, 0.610, 0.950},
  };
}

std::string format_increase(double before, double after) {
  if (before == 0) return "n/a";
  const double pct = (after - before) / before * 100.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f%%", pct);
  return buf;
}

namespace {

std::string cell(const std::optional<double>& v, int decimals) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *v);
  return buf;
}

std::string render(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows, std::size_t rule_before = 0) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& r) {
    std::string s;
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c == 0) {
        s += r[c] + std::string(width[c] - r[c].size(), ' ');
      } else {
        s += "  " + std::string(width[c] - r[c].size(), ' ') + r[c];
      }
    }
    return s + "\n";
  };
  std::size_t total = 0;
  for (auto w : width) total += w;
  total += 2 * (width.size() - 1);
  const std::string rule(total, '-');
  std::string out = line(header) + rule + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rule_before && i == rule_before) out += rule + "\n";
    out += line(rows[i]);
  }
  return out;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string render_table2(std::span<const Table2Row> rows) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) {
    body.push_back({r.method, cell(r.mae, 2), cell(r.em, 2), cell(r.w1, 2), cell(r.corr, 2),
                    cell(r.prec, 2), cell(r.rec, 2), cell(r.f1, 2)});
  }
  return render({"Method", "MAE", "EM", "W1", "Corr", "Prec", "Rec", "F1"}, body);
}

std::string render_ablation(std::span<const AblationRow> rows) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) body.push_back({r.variant, cell(r.mae, 2), cell(r.w1, 2), cell(r.f1, 2)});
  return render({"Training data", "MAE", "W1", "F1"}, body);
}

std::string render_table3(std::span<const Table3Row> rows, std::optional<std::size_t> from,
                          std::optional<std::size_t> to) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) body.push_back({r.method, cell(r.acc, 3), cell(r.coh, 3), cell(r.cons, 3)});
  std::size_t rule = 0;
  if (from && to && *from < rows.size() && *to < rows.size()) {
    const auto& a = rows[*from];
    const auto& b = rows[*to];
    auto inc = [](const std::optional<double>& x, const std::optional<double>& y) {
      return x && y ? format_increase(*x, *y) : std::string("-");
    };
    rule = body.size();
    body.push_back({"Increase", inc(a.acc, b.acc), inc(a.coh, b.coh), inc(a.cons, b.cons)});
  }
  return render({"Method", "Acc.", "Coh.", "Cons."}, body, rule);
}

json table2_json(std::span<const Table2Row> rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"method", r.method}, {"mae", opt(r.mae)}, {"em", opt(r.em)}, {"w1", opt(r.w1)},
                   {"corr", opt(r.corr)}, {"prec", opt(r.prec)}, {"rec", opt(r.rec)},
                   {"f1", opt(r.f1)}});
  }
  return out;
}

json ablation_json(std::span<const AblationRow> rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"variant", r.variant}, {"mae", opt(r.mae)}, {"w1", opt(r.w1)}, {"f1", opt(r.f1)}});
  }
  return out;
}

json table3_json(std::span<const Table3Row> rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"method", r.method}, {"acc", opt(r.acc)}, {"coh", opt(r.coh)}, {"cons", opt(r.cons)}});
  }
  return out;
}

}  // namespace bikelab::eval
