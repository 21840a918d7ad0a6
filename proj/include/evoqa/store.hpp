#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "evoqa/engine_types.hpp"
#include "evoqa/error.hpp"
#include "evoqa/gateway.hpp"

namespace evoqa {

enum class StoreErrc {
  StoreNotWritable,
  CheckpointCorrupt,
  ConfigMismatch,
  InvalidRecord,
  EmptyReportList,
};

const char* to_string(StoreErrc code) noexcept;

class StoreError : public Error {
 public:
  StoreError(StoreErrc code, const std::string& message) : Error(message), code_(code) {}
  [[nodiscard]] StoreErrc code() const noexcept { return code_; }

 private:
  StoreErrc code_;
};

// ---------------------------------------------------------------------------
// Dataset

struct DatasetRecord {
  std::string lineage_id;
  std::string question;
  std::string answer;
  Rational overall{0};
  ScoreMap scores;
  LineageStatus status = LineageStatus::RoundCapReached;
  int generation = 0;
  int rounds_used = 0;
};

nlohmann::ordered_json dataset_record_json(const LineageOutcome& outcome);

/// Appends one NDJSON line and flushes before returning.
void append_dataset_record(const std::filesystem::path& path, const LineageOutcome& outcome);

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path);

/// Emits records in lineage order even when lineages finish out of order:
/// outcome i is appended once outcomes 0..i-1 have been.
class OrderedDatasetWriter {
 public:
  /// Truncates `path`.
  OrderedDatasetWriter(std::filesystem::path path, std::size_t total);
  void submit(std::size_t index, const LineageOutcome& outcome);
  [[nodiscard]] std::size_t written() const;

 private:
  std::filesystem::path path_;
  std::size_t total_;
  std::size_t next_ = 0;
  std::map<std::size_t, LineageOutcome> pending_;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
  std::string run_id;
  std::string doc_id;
  nlohmann::ordered_json config_snapshot;
  std::string started_at;
  std::optional<std::string> finished_at;
  std::uint64_t total_calls = 0;
  std::uint64_t total_token_estimate = 0;
  std::map<std::string, std::uint64_t> outcome_summary;
};

nlohmann::ordered_json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::ordered_json& doc);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);

/// Engine configuration, rubric version and backend identity: everything
/// that must match for a checkpoint to be resumable.
nlohmann::ordered_json config_snapshot(const EngineConfig& cfg, const std::string& rubric_version,
                                       BackendKind backend, const std::string& model_name);
std::string config_digest(const nlohmann::ordered_json& snapshot);

std::string utc_timestamp_now();

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint {
  std::string run_id;
  std::string doc_id;
  std::string config_digest;
  nlohmann::ordered_json config_snapshot;
  std::vector<LineageOutcome> completed;
  std::vector<QAPair> pending;
  /// File name of the evaluation-cache snapshot, relative to the checkpoint.
  std::string cache_snapshot;
  std::uint64_t journal_sequence = 0;
  std::uint64_t seeding_calls = 0;
  std::uint64_t tokens_spent = 0;
  std::string doc_path;
  std::string config_path;
  nlohmann::ordered_json cli_overrides = nlohmann::ordered_json::object();

  /// All seeds in lineage order (completed and pending), by lineage id.
  [[nodiscard]] std::vector<QAPair> all_seeds() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

nlohmann::ordered_json lineage_outcome_to_json(const LineageOutcome& outcome);
LineageOutcome lineage_outcome_from_json(const nlohmann::json& doc);
nlohmann::ordered_json report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& doc);
nlohmann::ordered_json pair_to_json(const QAPair& pair);
QAPair pair_from_json(const nlohmann::json& doc);

/// Atomic write: temp file in the same directory, then rename.
void save_checkpoint(const Checkpoint& state, const std::filesystem::path& path);

/// Throws CheckpointCorrupt for unreadable/partial files and ConfigMismatch
/// when the expected digest or doc id (if given) differ from the stored ones.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_config_digest = std::nullopt,
                           const std::optional<std::string>& expected_doc_id = std::nullopt);

void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// ---------------------------------------------------------------------------
// Evaluation cache snapshot

using CacheEntries = std::vector<std::pair<std::string, EvaluationReport>>;
void save_cache_snapshot(const CacheEntries& entries, const std::filesystem::path& path);
CacheEntries load_cache_snapshot(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Scores files and comparison

struct ScoredItem {
  std::string item_id;
  std::string question;
  std::string answer;
  EvaluationReport report;
};

void write_scores_file(const std::filesystem::path& path, const std::vector<ScoredItem>& items);
/// Reads and validates reports; overall is replaced by its exact aggregate.
std::vector<EvaluationReport> read_scores_file(const std::filesystem::path& path, const Rubric& rubric);

struct MetricComparison {
  std::string metric_id;
  Rational mean_a{0};
  Rational mean_b{0};
};

struct ComparisonReport {
  /// Rubric order.
  std::vector<MetricComparison> per_metric;
  /// Means of per-report overall values.
  Rational overall_a{0};
  Rational overall_b{0};
  /// Aggregate of the per-metric means (equal to overall_* by linearity).
  Rational overall_of_means_a{0};
  Rational overall_of_means_b{0};
  std::size_t n_a = 0;
  std::size_t n_b = 0;
};

ComparisonReport compare_report(const std::vector<EvaluationReport>& reports_a,
                                const std::vector<EvaluationReport>& reports_b, const Rubric& rubric);
nlohmann::ordered_json comparison_to_json(const ComparisonReport& report, const std::string& label_a = "a",
                                          const std::string& label_b = "b");
/// Fixed-width table: metric, side A mean, side B mean, delta (A - B), two decimals.
std::string comparison_table(const ComparisonReport& report, const std::string& label_a = "A",
                             const std::string& label_b = "B");

}  // namespace evoqa
