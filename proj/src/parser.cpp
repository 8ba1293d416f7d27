#include "bikelab/parser.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <sstream>

namespace bikelab::parser {

namespace {

constexpr std::string_view kStructuredMarker = "STRUCTURED OUTPUT:";

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (true) {
    auto nl = text.find('\n', pos);
    lines.push_back(text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos));
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return lines;
}

// Position just past `label` (case-insensitive) in `line`, or npos.
std::size_t after_label(std::string_view line, std::string_view label) {
  auto pos = lower(line).find(lower(label));
  return pos == std::string::npos ? std::string_view::npos : pos + label.size();
}

FactorTagList parse_factor_list(std::string_view body) {
  body = trim(body);
  auto open = body.find('[');
  if (open != std::string_view::npos) {
    auto close = body.rfind(']');
    body = body.substr(open + 1, close == std::string_view::npos || close < open
                                     ? std::string_view::npos
                                     : close - open - 1);
  }
  std::vector<std::string> raw;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto comma = body.find(',', pos);
    auto item = trim(body.substr(pos, comma == std::string_view::npos ? body.npos : comma - pos));
    if (item.size() >= 2 && (item.front() == '"' || item.front() == '\'') &&
        item.back() == item.front()) {
      item = item.substr(1, item.size() - 2);
    }
    if (!item.empty()) raw.emplace_back(item);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return make_tags(raw);
}

}  // namespace

ParsedOutput parse(std::string_view text) {
  const auto lines = split_lines(text);

  std::ptrdiff_t ratings_idx = -1;
  for (std::ptrdiff_t i = static_cast<std::ptrdiff_t>(lines.size()) - 1; i >= 0; --i) {
    if (after_label(lines[i], "Ratings:") != std::string_view::npos) {
      ratings_idx = i;
      break;
    }
  }
  if (ratings_idx < 0) {
    throw Error(ErrorCode::kUnparseableOutput, "no \"Ratings:\" line in output");
  }

  ParsedOutput out;
  std::string_view rline = lines[ratings_idx];
  std::string body(rline.substr(after_label(rline, "Ratings:")));

  static const std::regex kKeyValue(R"(\b(comfortable|safe|overall)\b\s*[:=]\s*([-+]?(?:\d+\.?\d*|\.\d+)))",
                                    std::regex::icase);
  std::optional<double> comfortable, safe, overall;
  for (auto it = std::sregex_iterator(body.begin(), body.end(), kKeyValue);
       it != std::sregex_iterator(); ++it) {
    std::string key = lower((*it)[1].str());
    double value = std::stod((*it)[2].str());
    auto& slot = key == "comfortable" ? comfortable : key == "safe" ? safe : overall;
    if (!slot) slot = value;
  }
  if (!comfortable || !safe || !overall) {
    std::string missing;
    if (!comfortable) missing += " comfortable";
    if (!safe) missing += " safe";
    if (!overall) missing += " overall";
    throw Error(ErrorCode::kIncompleteRatings, "ratings line missing:" + missing);
  }

  auto correct = [&](const char* field, double raw) {
    int v = static_cast<int>(std::clamp(std::floor(raw + 0.5), 1.0, 4.0));
    if (static_cast<double>(v) != raw) out.corrections.push_back({field, raw, v});
    return v;
  };
  out.ratings.safety = correct("safety", *safe);
  out.ratings.comfort = correct("comfort", *comfortable);
  out.ratings.willingness = correct("willingness", *overall);

  // Prefer the Factors line that precedes the chosen Ratings line.
  std::ptrdiff_t factors_idx = -1;
  for (std::ptrdiff_t i = ratings_idx; i >= 0; --i) {
    if (after_label(lines[i], "Factors:") != std::string_view::npos) {
      factors_idx = i;
      break;
    }
  }
  if (factors_idx >= 0) {
    out.has_factors_line = true;
    std::string_view fline = lines[factors_idx];
    out.factors = parse_factor_list(fline.substr(after_label(fline, "Factors:")));
  }

  auto marker = text.find(kStructuredMarker);
  if (marker != std::string_view::npos) {
    auto reasoning = trim(text.substr(0, marker));
    if (!reasoning.empty()) out.reasoning_text = std::string(reasoning);
  }
  return out;
}

std::string render_ratings_line(const RatingTriple& r) {
  std::ostringstream os;
  os << "Ratings: comfortable: " << r.comfort << ", safe: " << r.safety
     << ", overall: " << r.willingness;
  return os.str();
}

std::string render_factors_line(const FactorTagList& f) {
  std::string s = "Factors: [";
  for (std::size_t i = 0; i < f.tags.size(); ++i) {
    if (i) s += ", ";
    s += f.tags[i];
  }
  s += "]";
  return s;
}

void to_json(json& j, const ParsedOutput& p) {
  json corrections = json::array();
  for (const auto& c : p.corrections) {
    corrections.push_back(
        json{{"field", c.field}, {"raw_value", c.raw_value}, {"corrected_value", c.corrected_value}});
  }
  j = json{{"factors", p.factors}, {"ratings", p.ratings}, {"corrections", corrections}};
  if (p.reasoning_text) j["reasoning_text"] = *p.reasoning_text;
}

}  // namespace bikelab::parser
