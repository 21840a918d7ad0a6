#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "evoqa/error.hpp"
#include "evoqa/rational.hpp"

namespace evoqa {

enum class RubricErrc {
  MissingMetric,
  UnknownMetric,
  ScoreOutOfRange,
  NonNumericScore,
  EmptyReportList,
  InvalidRubric,
  OverallMismatch,
};

class RubricError : public Error {
 public:
  RubricError(RubricErrc code, std::string metric_id, const std::string& message)
      : Error(message), code_(code), metric_id_(std::move(metric_id)) {}
  [[nodiscard]] RubricErrc code() const noexcept { return code_; }
  /// Offending metric id; empty when the error is not metric-specific.
  [[nodiscard]] const std::string& metric_id() const noexcept { return metric_id_; }

 private:
  RubricErrc code_;
  std::string metric_id_;
};

struct Metric {
  std::string id;
  std::string display_name;
  std::string description;
  Rational weight{1};

  friend bool operator==(const Metric&, const Metric&) = default;
};

/// The fitness definition: an ordered metric list and a 0..scale_max scale.
struct Rubric {
  std::string version;
  std::vector<Metric> metrics;
  int scale_max = 10;

  [[nodiscard]] const Metric* find(const std::string& id) const;
  friend bool operator==(const Rubric&, const Rubric&) = default;
};

using ScoreMap = std::map<std::string, Rational>;

/// One judge's scoring of one candidate.
struct EvaluationReport {
  std::string candidate_id;
  ScoreMap scores;
  Rational overall{0};
  std::string judge_rationale;
  std::string raw_response_digest;

  friend bool operator==(const EvaluationReport&, const EvaluationReport&) = default;
};

/// The built-in 15-metric rubric. Six names (relevance through
/// hallucination_absence) plus coverage describe the published method; the
/// other eight are defaults of this tool and can be replaced via --rubric.
Rubric default_rubric();

enum class RubricViolationKind {
  EmptyMetricList,
  DuplicateMetricId,
  NonPositiveWeight,
  ScaleMaxTooSmall,
  InvalidMetricId,
};

struct RubricViolation {
  RubricViolationKind kind;
  std::string detail;
};

/// Empty result means the rubric is valid.
std::vector<RubricViolation> validate_rubric(const Rubric& rubric);

/// Σ(w_i·s_i) / Σ(w_i). Throws RubricError on missing/unknown ids or out-of-range scores.
Rational aggregate_overall(const ScoreMap& scores, const Rubric& rubric);

/// Checks key set, ranges, and that overall matches the aggregate within 1e-9.
void validate_report(const EvaluationReport& report, const Rubric& rubric);

struct MetricMeans {
  ScoreMap per_metric;
  /// Mean of the reports' overall values.
  Rational overall_mean{0};
  /// aggregate_overall applied to per_metric. Equal to overall_mean by linearity.
  Rational overall_of_metric_means{0};
  std::size_t count = 0;
};

MetricMeans mean_per_metric(const std::vector<EvaluationReport>& reports, const Rubric& rubric);

nlohmann::json rubric_to_json(const Rubric& rubric);
/// Throws RubricError(InvalidRubric) on schema errors or validation violations.
Rubric rubric_from_json(const nlohmann::json& doc);
Rubric load_rubric(const std::filesystem::path& path);

const char* to_string(RubricViolationKind kind) noexcept;

}  // namespace evoqa
