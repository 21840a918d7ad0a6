#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evoqa/protocol.hpp"
#include "evoqa/rational.hpp"
#include "evoqa/rubric.hpp"

namespace evoqa {

/// Evolution parameters. Defaults follow the published method: ten seed
/// pairs, ten variations per parent, acceptance at 8/10.
struct EngineConfig {
  int n_seeds = 10;
  int n_variations = 10;
  Rational threshold{8};
  int max_rounds = 10;
  bool include_parent_in_pool = true;
  int judge_parse_retries = 2;

  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

struct ScoredCandidate {
  QAPair pair;
  EvaluationReport report;

  friend bool operator==(const ScoredCandidate&, const ScoredCandidate&) = default;
};

enum class LineageStatus { ThresholdMet, RoundCapReached };

const char* to_string(LineageStatus status) noexcept;
std::optional<LineageStatus> lineage_status_from_string(std::string_view name) noexcept;

struct LineageOutcome {
  std::string lineage_id;
  QAPair seed;
  ScoredCandidate accepted;
  LineageStatus status = LineageStatus::RoundCapReached;
  int rounds_used = 0;
  /// Best overall of each round's pool, in round order.
  std::vector<Rational> history;
  std::uint64_t calls_made = 0;
  /// Ancestors of the accepted pair, nearest first, ending with the seed.
  /// Empty when the seed itself was accepted.
  std::vector<QAPair> ancestry;

  friend bool operator==(const LineageOutcome&, const LineageOutcome&) = default;
};

}  // namespace evoqa
