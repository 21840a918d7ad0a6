#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evoqa/error.hpp"
#include "evoqa/ingest.hpp"
#include "evoqa/rubric.hpp"

namespace evoqa {

enum class ProtocolErrc {
  NoStructuredBlock,
  InvalidJson,
  MalformedRecord,
  WrongCount,
  DuplicatePair,
  MissingMetric,
  UnknownMetric,
  ScoreOutOfRange,
  NonNumericScore,
  InvalidPair,
};

const char* to_string(ProtocolErrc code) noexcept;

class ProtocolError : public Error {
 public:
  ProtocolError(ProtocolErrc code, const std::string& message) : Error(message), code_(code) {}
  [[nodiscard]] ProtocolErrc code() const noexcept { return code_; }

  /// Metric involved in a judge-report error.
  std::string metric_id;
  /// WrongCount details.
  std::size_t got = 0;
  std::size_t expected = 0;
  /// Offending value text for ScoreOutOfRange / NonNumericScore.
  std::string value;

 private:
  ProtocolErrc code_;
};

/// One question-answer candidate plus its lineage bookkeeping.
struct QAPair {
  std::string pair_id;
  std::string question;
  std::string answer;
  std::string lineage_id;
  int generation = 0;
  std::optional<std::string> parent_id;

  friend bool operator==(const QAPair&, const QAPair&) = default;
};

/// Content identity of a pair: SHA-256 over "<len(question)>:" question answer.
std::string compute_pair_id(std::string_view question, std::string_view answer);

/// Validates the QAPair invariants and fills pair_id. Throws ProtocolError(InvalidPair).
QAPair make_qa_pair(std::string question, std::string answer, std::string lineage_id = {},
                    int generation = 0, std::optional<std::string> parent_id = std::nullopt);

enum class PromptRole { Seed, Variation, Judge };

const char* to_string(PromptRole role) noexcept;
std::optional<PromptRole> prompt_role_from_string(std::string_view name) noexcept;

struct PromptText {
  PromptRole role = PromptRole::Seed;
  std::string text;
  /// Digest of the document text embedded in `text` (digest of "" when none).
  std::string context_digest;

  friend bool operator==(const PromptText&, const PromptText&) = default;
};

/// Per-role prompt bodies with {{document}}, {{count}}, {{question}},
/// {{answer}}, {{metrics}} (and optionally {{scale_max}}) placeholders.
struct PromptTemplates {
  std::string version;
  std::string seed;
  std::string variation;
  std::string judge;
};

/// The templates shipped in templates/v1, embedded at build time.
PromptTemplates builtin_templates();

/// Reads seed.txt, variation.txt and judge.txt from `dir` and checks that each
/// uses only the placeholders its role supports and all that it requires.
PromptTemplates load_templates(const std::filesystem::path& dir);
void check_templates(const PromptTemplates& templates);

PromptText render_seed_prompt(const SourceDocument& doc, int count,
                              const PromptTemplates& templates = builtin_templates());
PromptText render_variation_prompt(const QAPair& parent, int count,
                                   const PromptTemplates& templates = builtin_templates());
PromptText render_judge_prompt(const SourceDocument& doc, const QAPair& candidate, const Rubric& rubric,
                               const PromptTemplates& templates = builtin_templates());

/// Fenced-block contents when a ``` fence exists, else the first balanced
/// top-level JSON object or array. Throws ProtocolError(NoStructuredBlock).
std::string extract_structured_block(std::string_view raw);

/// Parses a QA batch response. Returned pairs carry pair_id only; lineage
/// fields are left for the caller (generation 0, no parent).
std::vector<QAPair> parse_qa_batch(std::string_view raw, std::size_t expected_count);

EvaluationReport parse_judge_report(std::string_view raw, const Rubric& rubric, const std::string& candidate_id);

/// Renders pairs in exactly the form the QA batch contract demands.
std::string serialize_qa_batch(const std::vector<QAPair>& pairs);

/// Renders scores in the judge-report contract. Scores must be finite
/// decimals to survive the round trip exactly.
std::string serialize_judge_response(const ScoreMap& scores, const std::string& rationale,
                                     const Rubric& rubric);

}  // namespace evoqa
