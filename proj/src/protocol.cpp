#include "evoqa/protocol.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "evoqa/template_engine.hpp"

namespace evoqa {

using nlohmann::json;

const char* to_string(ProtocolErrc code) noexcept {
  switch (code) {
    case ProtocolErrc::NoStructuredBlock:
      return "NoStructuredBlock";
    case ProtocolErrc::InvalidJson:
      return "InvalidJson";
    case ProtocolErrc::MalformedRecord:
      return "MalformedRecord";
    case ProtocolErrc::WrongCount:
      return "WrongCount";
    case ProtocolErrc::DuplicatePair:
      return "DuplicatePair";
    case ProtocolErrc::MissingMetric:
      return "MissingMetric";
    case ProtocolErrc::UnknownMetric:
      return "UnknownMetric";
    case ProtocolErrc::ScoreOutOfRange:
      return "ScoreOutOfRange";
    case ProtocolErrc::NonNumericScore:
      return "NonNumericScore";
    case ProtocolErrc::InvalidPair:
      return "InvalidPair";
  }
  return "Unknown";
}

const char* to_string(PromptRole role) noexcept {
  switch (role) {
    case PromptRole::Seed:
      return "seed";
    case PromptRole::Variation:
      return "variation";
    case PromptRole::Judge:
      return "judge";
  }
  return "unknown";
}

std::optional<PromptRole> prompt_role_from_string(std::string_view name) noexcept {
  if (name == "seed") return PromptRole::Seed;
  if (name == "variation") return PromptRole::Variation;
  if (name == "judge") return PromptRole::Judge;
  return std::nullopt;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n\v\f");
  if (first == std::string_view::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r\n\v\f");
  return s.substr(first, last - first + 1);
}

bool blank(std::string_view s) { return trim(s).empty(); }

}  // namespace

std::string compute_pair_id(std::string_view question, std::string_view answer) {
  std::string material = std::to_string(question.size());
  material += ':';
  material += question;
  material += answer;
  return fingerprint(material);
}

QAPair make_qa_pair(std::string question, std::string answer, std::string lineage_id, int generation,
                    std::optional<std::string> parent_id) {
  if (blank(question) || blank(answer)) {
    throw ProtocolError(ProtocolErrc::InvalidPair, "question and answer must be non-empty");
  }
  if (generation < 0) {
    throw ProtocolError(ProtocolErrc::InvalidPair, "generation must be non-negative");
  }
  if ((generation == 0) != !parent_id.has_value()) {
    throw ProtocolError(ProtocolErrc::InvalidPair, "a pair has a parent exactly when its generation is above 0");
  }
  QAPair p;
  p.pair_id = compute_pair_id(question, answer);
  p.question = std::move(question);
  p.answer = std::move(answer);
  p.lineage_id = std::move(lineage_id);
  p.generation = generation;
  p.parent_id = std::move(parent_id);
  return p;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

struct RoleSpec {
  std::set<std::string> required;
  std::set<std::string> allowed;
};

void check_one(const std::string& name, const std::string& tpl, const RoleSpec& spec) {
  const auto used = placeholders_in(tpl);
  for (const auto& r : spec.required) {
    if (!used.contains(r)) {
      throw TemplateError(name + " template is missing required placeholder {{" + r + "}}");
    }
  }
  for (const auto& u : used) {
    if (!spec.allowed.contains(u)) {
      throw TemplateError(name + " template uses unsupported placeholder {{" + u + "}}");
    }
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw TemplateError("cannot read template " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

std::string qa_output_contract(int count) {
  std::string n = std::to_string(count);
  return "\n\nOutput format (strict):\n"
         "Return exactly one fenced code block containing a JSON array of exactly " + n +
         " objects. Each object has exactly two non-empty string fields, \"question\" and \"answer\", "
         "and nothing else. The block must look like this:\n"
         "```json\n"
         "[\n"
         "  {\"question\": \"...\", \"answer\": \"...\"}\n"
         "]\n"
         "```\n";
}

std::string judge_output_contract(const Rubric& rubric) {
  std::string keys;
  for (std::size_t i = 0; i < rubric.metrics.size(); ++i) {
    keys += "    \"" + rubric.metrics[i].id + "\": <number>";
    keys += i + 1 < rubric.metrics.size() ? ",\n" : "\n";
  }
  return "\n\nOutput format (strict):\n"
         "Return exactly one fenced code block containing a JSON object with a \"scores\" object "
         "holding one number between 0 and " + std::to_string(rubric.scale_max) +
         " for every metric id listed above (no other keys), and a short \"rationale\" string. "
         "The block must look like this:\n"
         "```json\n"
         "{\n"
         "  \"scores\": {\n" + keys +
         "  },\n"
         "  \"rationale\": \"...\"\n"
         "}\n"
         "```\n";
}

std::string metrics_block(const Rubric& rubric) {
  std::string out;
  const std::string scale = "0-" + std::to_string(rubric.scale_max);
  for (const auto& m : rubric.metrics) {
    out += "- " + m.id + " (" + m.display_name + "): " + m.description + " Scale " + scale + ".\n";
  }
  if (!out.empty()) {
    out.pop_back();
  }
  return out;
}

}  // namespace

void check_templates(const PromptTemplates& t) {
  check_one("seed", t.seed, {{"document", "count"}, {"document", "count"}});
  check_one("variation", t.variation, {{"question", "answer", "count"}, {"question", "answer", "count"}});
  check_one("judge", t.judge, {{"document", "question", "answer", "metrics"},
                               {"document", "question", "answer", "metrics", "scale_max"}});
}

PromptTemplates load_templates(const std::filesystem::path& dir) {
  PromptTemplates t;
  t.version = dir.filename().string();
  t.seed = read_text(dir / "seed.txt");
  t.variation = read_text(dir / "variation.txt");
  t.judge = read_text(dir / "judge.txt");
  check_templates(t);
  return t;
}

PromptText render_seed_prompt(const SourceDocument& doc, int count, const PromptTemplates& templates) {
  if (count < 1) {
    throw TemplateError("seed count must be at least 1");
  }
  PromptText p;
  p.role = PromptRole::Seed;
  p.text = render_template(templates.seed, {{"document", doc.text}, {"count", std::to_string(count)}}) +
           qa_output_contract(count);
  p.context_digest = doc.doc_id;
  return p;
}

PromptText render_variation_prompt(const QAPair& parent, int count, const PromptTemplates& templates) {
  if (count < 1) {
    throw TemplateError("variation count must be at least 1");
  }
  PromptText p;
  p.role = PromptRole::Variation;
  p.text = render_template(templates.variation, {{"question", parent.question},
                                                 {"answer", parent.answer},
                                                 {"count", std::to_string(count)}}) +
           qa_output_contract(count);
  p.context_digest = fingerprint("");
  return p;
}

PromptText render_judge_prompt(const SourceDocument& doc, const QAPair& candidate, const Rubric& rubric,
                               const PromptTemplates& templates) {
  PromptText p;
  p.role = PromptRole::Judge;
  p.text = render_template(templates.judge, {{"document", doc.text},
                                             {"question", candidate.question},
                                             {"answer", candidate.answer},
                                             {"metrics", metrics_block(rubric)},
                                             {"scale_max", std::to_string(rubric.scale_max)}}) +
           judge_output_contract(rubric);
  p.context_digest = doc.doc_id;
  return p;
}

// ---------------------------------------------------------------------------
// Extraction and parsing

namespace {

bool at_line_start(std::string_view s, std::size_t pos) { return pos == 0 || s[pos - 1] == '\n'; }

std::optional<std::string> fenced_contents(std::string_view raw) {
  std::size_t open = raw.find("```");
  while (open != std::string_view::npos && !at_line_start(raw, open)) {
    open = raw.find("```", open + 1);
  }
  if (open == std::string_view::npos) {
    return std::nullopt;
  }
  const std::size_t line_end = raw.find('\n', open + 3);
  if (line_end == std::string_view::npos) {
    return std::nullopt;
  }
  const std::size_t body = line_end + 1;
  std::size_t close = raw.find("```", body);
  while (close != std::string_view::npos && !at_line_start(raw, close)) {
    close = raw.find("```", close + 1);
  }
  if (close == std::string_view::npos) {
    return std::nullopt;
  }
  return std::string(trim(raw.substr(body, close - body)));
}

// Balanced block starting at `start`, skipping brackets inside JSON strings.
std::optional<std::string_view> balanced_from(std::string_view raw, std::size_t start) {
  std::string stack;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = start; i < raw.size(); ++i) {
    const char c = raw[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    switch (c) {
      case '"':
        in_string = true;
        break;
      case '[':
        stack.push_back(']');
        break;
      case '{':
        stack.push_back('}');
        break;
      case ']':
      case '}':
        if (stack.empty() || stack.back() != c) {
          return std::nullopt;
        }
        stack.pop_back();
        if (stack.empty()) {
          return raw.substr(start, i - start + 1);
        }
        break;
      default:
        break;
    }
  }
  return std::nullopt;
}

json parse_block(std::string_view raw) {
  const std::string block = extract_structured_block(raw);
  json doc = json::parse(block, nullptr, false);
  if (doc.is_discarded()) {
    throw ProtocolError(ProtocolErrc::InvalidJson, "structured block is not valid JSON");
  }
  return doc;
}

}  // namespace

std::string extract_structured_block(std::string_view raw) {
  if (auto fenced = fenced_contents(raw)) {
    return *fenced;
  }
  for (std::size_t pos = raw.find_first_of("[{"); pos != std::string_view::npos;
       pos = raw.find_first_of("[{", pos + 1)) {
    if (auto block = balanced_from(raw, pos)) {
      return std::string(*block);
    }
  }
  throw ProtocolError(ProtocolErrc::NoStructuredBlock, "response contains no fenced or bracketed block");
}

std::vector<QAPair> parse_qa_batch(std::string_view raw, std::size_t expected_count) {
  const json doc = parse_block(raw);
  if (!doc.is_array()) {
    throw ProtocolError(ProtocolErrc::InvalidJson, "QA batch must be a JSON array");
  }
  if (doc.size() != expected_count) {
    ProtocolError err(ProtocolErrc::WrongCount, "expected " + std::to_string(expected_count) +
                                                    " QA pairs, got " + std::to_string(doc.size()));
    err.got = doc.size();
    err.expected = expected_count;
    throw err;
  }
  std::vector<QAPair> pairs;
  pairs.reserve(doc.size());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& item = doc[i];
    const std::string where = "record " + std::to_string(i);
    if (!item.is_object() || item.size() != 2 || !item.contains("question") || !item.contains("answer")) {
      throw ProtocolError(ProtocolErrc::MalformedRecord,
                          where + " must be an object with exactly \"question\" and \"answer\"");
    }
    const json& q = item["question"];
    const json& a = item["answer"];
    if (!q.is_string() || !a.is_string() || blank(q.get_ref<const std::string&>()) ||
        blank(a.get_ref<const std::string&>())) {
      throw ProtocolError(ProtocolErrc::MalformedRecord, where + " has an empty or non-string field");
    }
    QAPair p = make_qa_pair(q.get<std::string>(), a.get<std::string>());
    if (!seen.insert(p.pair_id).second) {
      throw ProtocolError(ProtocolErrc::DuplicatePair, where + " duplicates an earlier pair");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

EvaluationReport parse_judge_report(std::string_view raw, const Rubric& rubric, const std::string& candidate_id) {
  const json doc = parse_block(raw);
  if (!doc.is_object()) {
    throw ProtocolError(ProtocolErrc::InvalidJson, "judge report must be a JSON object");
  }
  auto scores_it = doc.find("scores");
  if (scores_it == doc.end() || !scores_it->is_object()) {
    throw ProtocolError(ProtocolErrc::MalformedRecord, "judge report lacks a \"scores\" object");
  }
  const json& scores = *scores_it;

  EvaluationReport report;
  report.candidate_id = candidate_id;
  for (const auto& m : rubric.metrics) {
    auto it = scores.find(m.id);
    if (it == scores.end()) {
      ProtocolError err(ProtocolErrc::MissingMetric, "judge report is missing metric " + m.id);
      err.metric_id = m.id;
      throw err;
    }
    if (!it->is_number()) {
      ProtocolError err(ProtocolErrc::NonNumericScore, "score for " + m.id + " is not a number: " + it->dump());
      err.metric_id = m.id;
      err.value = it->dump();
      throw err;
    }
    Rational value = it->is_number_integer() && !it->is_number_unsigned()
                         ? Rational(it->get<long long>())
                         : it->is_number_unsigned() ? Rational(it->get<unsigned long long>())
                                                    : rational_from_double(it->get<double>());
    if (value < 0 || value > rubric.scale_max) {
      ProtocolError err(ProtocolErrc::ScoreOutOfRange, "score for " + m.id + " out of range: " + it->dump());
      err.metric_id = m.id;
      err.value = it->dump();
      throw err;
    }
    report.scores.emplace(m.id, std::move(value));
  }
  for (const auto& item : scores.items()) {
    if (rubric.find(item.key()) == nullptr) {
      ProtocolError err(ProtocolErrc::UnknownMetric, "judge report has unknown metric " + item.key());
      err.metric_id = item.key();
      throw err;
    }
  }
  if (auto r = doc.find("rationale"); r != doc.end()) {
    if (!r->is_string()) {
      throw ProtocolError(ProtocolErrc::MalformedRecord, "rationale must be a string");
    }
    report.judge_rationale = r->get<std::string>();
  }
  report.overall = aggregate_overall(report.scores, rubric);
  report.raw_response_digest = fingerprint(raw);
  return report;
}

std::string serialize_qa_batch(const std::vector<QAPair>& pairs) {
  json arr = json::array();
  for (const auto& p : pairs) {
    arr.push_back({{"question", p.question}, {"answer", p.answer}});
  }
  return "```json\n" + arr.dump(2) + "\n```\n";
}

std::string serialize_judge_response(const ScoreMap& scores, const std::string& rationale, const Rubric& rubric) {
  json s = json::object();
  for (const auto& m : rubric.metrics) {
    if (auto it = scores.find(m.id); it != scores.end()) {
      s[m.id] = to_double(it->second);
    }
  }
  for (const auto& [id, value] : scores) {
    if (!s.contains(id)) {
      s[id] = to_double(value);
    }
  }
  json doc = {{"scores", s}, {"rationale", rationale}};
  return "```json\n" + doc.dump(2) + "\n```\n";
}

}  // namespace evoqa
