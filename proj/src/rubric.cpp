#include "evoqa/rubric.hpp"

#include <fstream>
#include <set>

namespace evoqa {

using nlohmann::json;

const Metric* Rubric::find(const std::string& id) const {
  for (const auto& m : metrics) {
    if (m.id == id) {
      return &m;
    }
  }
  return nullptr;
}

Rubric default_rubric() {
  Rubric r;
  r.version = "evoqa-default-15-v1";
  r.scale_max = 10;
  r.metrics = {
      {"relevance", "Relevance", "How closely the pair relates to the content of the source document.", 1},
      {"depth", "Depth", "Whether the pair probes understanding beyond surface-level recall.", 1},
      {"factual_accuracy", "Factual Accuracy", "Whether every claim in the answer is correct according to the document.", 1},
      {"conciseness", "Conciseness", "Whether question and answer are free of padding and unnecessary words.", 1},
      {"clarity", "Clarity", "Whether the question is unambiguous and the answer easy to understand.", 1},
      {"hallucination_absence", "Absence of Hallucination", "Whether the answer avoids any fabricated or unsupported content.", 1},
      {"coverage", "Coverage", "Whether the answer covers all aspects of the question that the document addresses.", 1},
      {"coherence", "Coherence", "Whether the answer is logically organized and internally consistent.", 1},
      {"specificity", "Specificity", "Whether the pair targets concrete details rather than vague generalities.", 1},
      {"answer_completeness", "Answer Completeness", "Whether the answer fully resolves the question asked.", 1},
      {"question_quality", "Question Quality", "Whether the question is well-formed and worth asking about this document.", 1},
      {"grounding", "Grounding", "Whether the answer can be traced to specific passages of the document.", 1},
      {"non_redundancy", "Non-Redundancy", "Whether the answer avoids restating the question or repeating itself.", 1},
      {"fluency", "Fluency", "Grammatical, natural language in both question and answer.", 1},
      {"self_containment", "Self-Containment", "Whether the pair is understandable without seeing the document.", 1},
  };
  return r;
}

namespace {

bool is_snake_case(const std::string& id) {
  if (id.empty() || id.front() < 'a' || id.front() > 'z' || id.back() == '_') {
    return false;
  }
  char prev = '\0';
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok || (c == '_' && prev == '_')) {
      return false;
    }
    prev = c;
  }
  return true;
}

}  // namespace

std::vector<RubricViolation> validate_rubric(const Rubric& rubric) {
  std::vector<RubricViolation> out;
  if (rubric.metrics.empty()) {
    out.push_back({RubricViolationKind::EmptyMetricList, "rubric has no metrics"});
  }
  if (rubric.scale_max < 1) {
    out.push_back({RubricViolationKind::ScaleMaxTooSmall,
                   "scale_max must be >= 1, got " + std::to_string(rubric.scale_max)});
  }
  std::set<std::string> seen;
  for (const auto& m : rubric.metrics) {
    if (!seen.insert(m.id).second) {
      out.push_back({RubricViolationKind::DuplicateMetricId, m.id});
    }
    if (!is_snake_case(m.id)) {
      out.push_back({RubricViolationKind::InvalidMetricId, m.id});
    }
    if (m.weight <= 0) {
      out.push_back({RubricViolationKind::NonPositiveWeight, m.id + " weight " + to_exact_string(m.weight)});
    }
  }
  return out;
}

Rational aggregate_overall(const ScoreMap& scores, const Rubric& rubric) {
  Rational weighted{0};
  Rational total_weight{0};
  for (const auto& m : rubric.metrics) {
    auto it = scores.find(m.id);
    if (it == scores.end()) {
      throw RubricError(RubricErrc::MissingMetric, m.id, "missing score for metric " + m.id);
    }
    if (it->second < 0 || it->second > rubric.scale_max) {
      throw RubricError(RubricErrc::ScoreOutOfRange, m.id,
                        "score for " + m.id + " out of range: " + to_exact_string(it->second));
    }
    weighted += m.weight * it->second;
    total_weight += m.weight;
  }
  for (const auto& [id, value] : scores) {
    if (rubric.find(id) == nullptr) {
      throw RubricError(RubricErrc::UnknownMetric, id, "unknown metric " + id);
    }
  }
  if (total_weight <= 0) {
    throw RubricError(RubricErrc::InvalidRubric, {}, "rubric total weight must be positive");
  }
  return weighted / total_weight;
}

void validate_report(const EvaluationReport& report, const Rubric& rubric) {
  const Rational expected = aggregate_overall(report.scores, rubric);
  Rational diff = expected - report.overall;
  if (diff < 0) {
    diff = -diff;
  }
  if (diff > Rational(1, 1'000'000'000)) {
    throw RubricError(RubricErrc::OverallMismatch, {},
                      "report " + report.candidate_id + " overall does not match its scores");
  }
}

MetricMeans mean_per_metric(const std::vector<EvaluationReport>& reports, const Rubric& rubric) {
  if (reports.empty()) {
    throw RubricError(RubricErrc::EmptyReportList, {}, "cannot average an empty report list");
  }
  MetricMeans out;
  for (const auto& m : rubric.metrics) {
    out.per_metric[m.id] = 0;
  }
  for (const auto& report : reports) {
    validate_report(report, rubric);
    for (const auto& [id, value] : report.scores) {
      out.per_metric[id] += value;
    }
    out.overall_mean += report.overall;
  }
  const Rational n(static_cast<long long>(reports.size()));
  for (auto& [id, sum] : out.per_metric) {
    sum /= n;
  }
  out.overall_mean /= n;
  out.overall_of_metric_means = aggregate_overall(out.per_metric, rubric);
  out.count = reports.size();
  return out;
}

namespace {

json rational_to_json(const Rational& value) {
  // Weights that are not finite decimals keep their exact fraction form.
  Rational back = rational_from_double(to_double(value));
  if (back == value) {
    return to_double(value);
  }
  return to_exact_string(value);
}

Rational rational_field(const json& node, const std::string& what) {
  if (node.is_number()) {
    return rational_from_double(node.get<double>());
  }
  if (node.is_string()) {
    return parse_rational(node.get<std::string>());
  }
  throw RubricError(RubricErrc::InvalidRubric, {}, what + " must be a number");
}

}  // namespace

json rubric_to_json(const Rubric& rubric) {
  json metrics = json::array();
  for (const auto& m : rubric.metrics) {
    metrics.push_back({{"id", m.id},
                       {"name", m.display_name},
                       {"description", m.description},
                       {"weight", rational_to_json(m.weight)}});
  }
  return {{"rubric_version", rubric.version}, {"scale_max", rubric.scale_max}, {"metrics", metrics}};
}

Rubric rubric_from_json(const json& doc) {
  Rubric r;
  try {
    if (!doc.is_object()) {
      throw RubricError(RubricErrc::InvalidRubric, {}, "rubric must be an object");
    }
    r.version = doc.at("rubric_version").get<std::string>();
    r.scale_max = doc.value("scale_max", 10);
    for (const auto& node : doc.at("metrics")) {
      Metric m;
      m.id = node.at("id").get<std::string>();
      m.display_name = node.value("name", m.id);
      m.description = node.value("description", std::string{});
      m.weight = node.contains("weight") ? rational_field(node.at("weight"), "weight of " + m.id) : Rational(1);
      r.metrics.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw RubricError(RubricErrc::InvalidRubric, {}, std::string("malformed rubric: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw RubricError(RubricErrc::InvalidRubric, {}, std::string("malformed rubric: ") + e.what());
  }
  auto violations = validate_rubric(r);
  if (!violations.empty()) {
    std::string msg = "invalid rubric:";
    for (const auto& v : violations) {
      msg += std::string(" ") + to_string(v.kind) + "(" + v.detail + ")";
    }
    throw RubricError(RubricErrc::InvalidRubric, {}, msg);
  }
  return r;
}

Rubric load_rubric(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw RubricError(RubricErrc::InvalidRubric, {}, "cannot read rubric file " + path.string());
  }
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw RubricError(RubricErrc::InvalidRubric, {}, "rubric file is not valid JSON: " + path.string());
  }
  return rubric_from_json(doc);
}

const char* to_string(RubricViolationKind kind) noexcept {
  switch (kind) {
    case RubricViolationKind::EmptyMetricList:
      return "EmptyMetricList";
    case RubricViolationKind::DuplicateMetricId:
      return "DuplicateMetricId";
    case RubricViolationKind::NonPositiveWeight:
      return "NonPositiveWeight";
    case RubricViolationKind::ScaleMaxTooSmall:
      return "ScaleMaxTooSmall";
    case RubricViolationKind::InvalidMetricId:
      return "InvalidMetricId";
  }
  return "Unknown";
}

}  // namespace evoqa
