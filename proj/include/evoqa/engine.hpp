#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "evoqa/engine_types.hpp"
#include "evoqa/error.hpp"
#include "evoqa/gateway.hpp"
#include "evoqa/ingest.hpp"
#include "evoqa/protocol.hpp"
#include "evoqa/rubric.hpp"
#include "evoqa/store.hpp"

namespace evoqa {

enum class EngineErrc {
  InvalidConfig,
  SeedGenerationFailed,
  VariationFailed,
  EvaluationFailed,
  LineageFailed,
  RunFailed,
  RunCancelled,
  EmptyPool,
};

const char* to_string(EngineErrc code) noexcept;

class EngineError : public Error {
 public:
  EngineError(EngineErrc code, const std::string& message, std::exception_ptr cause = nullptr)
      : Error(message), code_(code), cause_(std::move(cause)) {}
  [[nodiscard]] EngineErrc code() const noexcept { return code_; }
  /// The parse or gateway error that caused this failure, if any.
  [[nodiscard]] std::exception_ptr cause() const noexcept { return cause_; }

 private:
  EngineErrc code_;
  std::exception_ptr cause_;
};

/// Throws EngineError(InvalidConfig) naming the first violated constraint.
void validate_engine_config(const EngineConfig& cfg, const Rubric& rubric);

/// Index of the highest overall; the first index wins ties. Throws EmptyPool.
std::size_t select_best_index(std::span<const ScoredCandidate> pool);
const ScoredCandidate& select_best(std::span<const ScoredCandidate> pool);

/// Inclusive comparison against the acceptance threshold.
bool threshold_met(const Rational& overall, const EngineConfig& cfg);

/// Lineage id for seed `index` of `total`: seed-00, seed-01, ... (wider when total > 100).
std::string seed_lineage_id(std::size_t index, std::size_t total);

/// Judge results keyed by (doc_id, pair_id, rubric_version). Concurrent
/// requests for the same key share one computation.
class EvaluationCache {
 public:
  static std::string key(const std::string& doc_id, const std::string& pair_id, const std::string& rubric_version);

  /// Returns the cached report or runs `compute` exactly once per key. A
  /// failed computation is not cached.
  template <typename Compute>
  EvaluationReport get_or_compute(const std::string& key, Compute&& compute) {
    std::shared_ptr<std::promise<EvaluationReport>> owned;
    std::shared_future<EvaluationReport> future;
    {
      std::lock_guard lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) {
        future = it->second;
      } else {
        owned = std::make_shared<std::promise<EvaluationReport>>();
        future = owned->get_future().share();
        entries_.emplace(key, future);
      }
    }
    if (!owned) {
      return future.get();
    }
    try {
      EvaluationReport report = compute();
      owned->set_value(report);
      return report;
    } catch (...) {
      {
        std::lock_guard lock(mutex_);
        entries_.erase(key);
      }
      owned->set_exception(std::current_exception());
      throw;
    }
  }

  void insert(const std::string& key, const EvaluationReport& report);
  [[nodiscard]] bool contains(const std::string& key) const;
  [[nodiscard]] std::size_t size() const;
  /// Completed entries only, sorted by key.
  [[nodiscard]] CacheEntries snapshot() const;
  void load(const CacheEntries& entries);

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_future<EvaluationReport>> entries_;
};

/// Model settings for the three prompt roles.
struct GenerationSettings {
  std::string model_name = "evoqa-default";
  double seed_temperature = 0.7;
  double variation_temperature = 0.7;
  double judge_temperature = 0.0;
  int max_output_tokens = 4096;
};

struct RunOptions {
  int max_concurrent_lineages = 4;
  /// Defaults to a digest of doc id and config digest.
  std::string run_id;
  std::string doc_path;
  std::string config_path;
  /// Command-line overrides in effect, stored so a resume can reapply them.
  nlohmann::ordered_json cli_overrides = nlohmann::ordered_json::object();
  std::string cache_snapshot_name = "cache.ndjson";
};

struct RunResult {
  std::string doc_id;
  std::vector<LineageOutcome> outcomes;
  RunManifest manifest;
};

/// Receives run progress. Callbacks are serialized by the engine.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_seeds(const std::vector<QAPair>& /*seeds*/) {}
  virtual void on_lineage_complete(std::size_t /*index*/, const LineageOutcome& /*outcome*/) {}
  virtual void on_checkpoint(const Checkpoint& /*state*/, const EvaluationCache& /*cache*/) {}
  virtual void on_run_finished(const RunResult& /*result*/) {}
  /// Called after the final checkpoint of an aborted run.
  virtual void on_run_aborted(const RunManifest& /*partial*/) {}
};

/// Counts successful gateway completions made on behalf of one caller.
struct CallCounter {
  std::uint64_t calls = 0;
};

class Engine {
 public:
  Engine(Gateway& gateway, Rubric rubric, EngineConfig config, GenerationSettings settings = {},
         PromptTemplates templates = builtin_templates());

  std::vector<QAPair> generate_seeds(const SourceDocument& doc, CallCounter* counter = nullptr);
  std::vector<QAPair> generate_variations(const QAPair& parent, int round, CallCounter* counter = nullptr);
  ScoredCandidate evaluate_candidate(const SourceDocument& doc, const QAPair& pair, CallCounter* counter = nullptr);
  LineageOutcome evolve_lineage(const QAPair& seed, const SourceDocument& doc);

  /// Full pipeline. With `resume`, seeding is skipped and only the
  /// checkpoint's pending lineages run.
  RunResult run(const SourceDocument& doc, const RunOptions& options = {}, RunObserver* observer = nullptr,
                const Checkpoint* resume = nullptr);

  /// Cooperative cancellation: checked between lineages and rounds.
  void request_stop() noexcept { stop_.store(true); }
  void set_stop_flag(const std::atomic<bool>* external) noexcept { external_stop_ = external; }

  [[nodiscard]] EvaluationCache& cache() noexcept { return cache_; }
  [[nodiscard]] const EngineConfig& config() const noexcept { return config_; }
  [[nodiscard]] const Rubric& rubric() const noexcept { return rubric_; }
  [[nodiscard]] nlohmann::ordered_json snapshot() const;

 private:
  [[nodiscard]] bool stop_requested() const noexcept;
  std::string complete_text(const PromptText& prompt, double temperature, CallCounter* counter);

  Gateway& gateway_;
  Rubric rubric_;
  EngineConfig config_;
  GenerationSettings settings_;
  PromptTemplates templates_;
  EvaluationCache cache_;
  std::atomic<bool> stop_{false};
  const std::atomic<bool>* external_stop_ = nullptr;
};

}  // namespace evoqa
