#include "evoqa/engine.hpp"

#include <algorithm>
#include <optional>
#include <thread>

namespace evoqa {

const char* to_string(EngineErrc code) noexcept {
  switch (code) {
    case EngineErrc::InvalidConfig:
      return "InvalidConfig";
    case EngineErrc::SeedGenerationFailed:
      return "SeedGenerationFailed";
    case EngineErrc::VariationFailed:
      return "VariationFailed";
    case EngineErrc::EvaluationFailed:
      return "EvaluationFailed";
    case EngineErrc::LineageFailed:
      return "LineageFailed";
    case EngineErrc::RunFailed:
      return "RunFailed";
    case EngineErrc::RunCancelled:
      return "RunCancelled";
    case EngineErrc::EmptyPool:
      return "EmptyPool";
  }
  return "Unknown";
}

const char* to_string(LineageStatus status) noexcept {
  return status == LineageStatus::ThresholdMet ? "threshold_met" : "round_cap_reached";
}

std::optional<LineageStatus> lineage_status_from_string(std::string_view name) noexcept {
  if (name == "threshold_met") return LineageStatus::ThresholdMet;
  if (name == "round_cap_reached") return LineageStatus::RoundCapReached;
  return std::nullopt;
}

void validate_engine_config(const EngineConfig& cfg, const Rubric& rubric) {
  auto fail = [](const std::string& what) { throw EngineError(EngineErrc::InvalidConfig, what); };
  if (cfg.n_seeds < 1) fail("n_seeds must be >= 1");
  if (cfg.n_variations < 1) fail("n_variations must be >= 1");
  if (cfg.max_rounds < 1) fail("max_rounds must be >= 1");
  if (cfg.judge_parse_retries < 0) fail("judge_parse_retries must be >= 0");
  if (cfg.threshold <= 0) fail("threshold must be > 0");
  if (cfg.threshold > rubric.scale_max) {
    fail("threshold " + to_exact_string(cfg.threshold) + " exceeds rubric scale_max " +
         std::to_string(rubric.scale_max));
  }
  if (auto violations = validate_rubric(rubric); !violations.empty()) {
    fail(std::string("rubric is invalid: ") + to_string(violations.front().kind) + " " + violations.front().detail);
  }
}

std::size_t select_best_index(std::span<const ScoredCandidate> pool) {
  if (pool.empty()) {
    throw EngineError(EngineErrc::EmptyPool, "cannot select from an empty pool");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (pool[i].report.overall > pool[best].report.overall) {
      best = i;
    }
  }
  return best;
}

const ScoredCandidate& select_best(std::span<const ScoredCandidate> pool) { return pool[select_best_index(pool)]; }

bool threshold_met(const Rational& overall, const EngineConfig& cfg) { return overall >= cfg.threshold; }

std::string seed_lineage_id(std::size_t index, std::size_t total) {
  std::size_t width = 2;
  for (std::size_t n = total > 0 ? total - 1 : 0; n >= 100; n /= 10) {
    ++width;
  }
  std::string digits = std::to_string(index);
  if (digits.size() < width) {
    digits.insert(0, width - digits.size(), '0');
  }
  return "seed-" + digits;
}

// ---------------------------------------------------------------------------
// EvaluationCache

std::string EvaluationCache::key(const std::string& doc_id, const std::string& pair_id,
                                 const std::string& rubric_version) {
  return doc_id + "|" + pair_id + "|" + rubric_version;
}

void EvaluationCache::insert(const std::string& key, const EvaluationReport& report) {
  std::promise<EvaluationReport> promise;
  promise.set_value(report);
  std::lock_guard lock(mutex_);
  entries_.insert_or_assign(key, promise.get_future().share());
}

bool EvaluationCache::contains(const std::string& key) const {
  std::lock_guard lock(mutex_);
  return entries_.contains(key);
}

std::size_t EvaluationCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

CacheEntries EvaluationCache::snapshot() const {
  std::lock_guard lock(mutex_);
  CacheEntries out;
  for (const auto& [key, future] : entries_) {
    if (future.wait_for(std::chrono::seconds(0)) == std::future_status::ready) {
      out.emplace_back(key, future.get());
    }
  }
  return out;
}

void EvaluationCache::load(const CacheEntries& entries) {
  for (const auto& [key, report] : entries) {
    insert(key, report);
  }
}

// ---------------------------------------------------------------------------
// Engine

namespace {

template <typename Attempt>
auto with_parse_retries(int retries, Attempt&& attempt) {
  for (int i = 0;; ++i) {
    try {
      return attempt();
    } catch (const ProtocolError&) {
      if (i >= retries) {
        throw;
      }
    }
  }
}

}  // namespace

Engine::Engine(Gateway& gateway, Rubric rubric, EngineConfig config, GenerationSettings settings,
               PromptTemplates templates)
    : gateway_(gateway),
      rubric_(std::move(rubric)),
      config_(std::move(config)),
      settings_(std::move(settings)),
      templates_(std::move(templates)) {
  validate_engine_config(config_, rubric_);
  check_templates(templates_);
}

bool Engine::stop_requested() const noexcept {
  return stop_.load() || (external_stop_ != nullptr && external_stop_->load());
}

nlohmann::ordered_json Engine::snapshot() const {
  return config_snapshot(config_, rubric_.version, gateway_.backend_kind(), settings_.model_name);
}

std::string Engine::complete_text(const PromptText& prompt, double temperature, CallCounter* counter) {
  auto request = make_completion_request(prompt, settings_.model_name, temperature, settings_.max_output_tokens);
  CompletionResult result = gateway_.complete_with_retry(request);
  if (counter != nullptr) {
    ++counter->calls;
  }
  return std::move(result.text);
}

std::vector<QAPair> Engine::generate_seeds(const SourceDocument& doc, CallCounter* counter) {
  const auto n = static_cast<std::size_t>(config_.n_seeds);
  try {
    const PromptText prompt = render_seed_prompt(doc, config_.n_seeds, templates_);
    auto parsed = with_parse_retries(config_.judge_parse_retries, [&] {
      return parse_qa_batch(complete_text(prompt, settings_.seed_temperature, counter), n);
    });
    std::vector<QAPair> seeds;
    seeds.reserve(n);
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      seeds.push_back(make_qa_pair(std::move(parsed[i].question), std::move(parsed[i].answer),
                                   seed_lineage_id(i, n), 0, std::nullopt));
    }
    return seeds;
  } catch (const EngineError&) {
    throw;
  } catch (const Error& e) {
    throw EngineError(EngineErrc::SeedGenerationFailed, std::string("seed generation failed: ") + e.what(),
                      std::current_exception());
  }
}

std::vector<QAPair> Engine::generate_variations(const QAPair& parent, int round, CallCounter* counter) {
  const auto n = static_cast<std::size_t>(config_.n_variations);
  try {
    const PromptText prompt = render_variation_prompt(parent, config_.n_variations, templates_);
    auto parsed = with_parse_retries(config_.judge_parse_retries, [&] {
      return parse_qa_batch(complete_text(prompt, settings_.variation_temperature, counter), n);
    });
    std::vector<QAPair> children;
    children.reserve(n);
    for (auto& p : parsed) {
      children.push_back(
          make_qa_pair(std::move(p.question), std::move(p.answer), parent.lineage_id, round, parent.pair_id));
    }
    return children;
  } catch (const EngineError&) {
    throw;
  } catch (const Error& e) {
    throw EngineError(EngineErrc::VariationFailed,
                      parent.lineage_id + " round " + std::to_string(round) + ": variation failed: " + e.what(),
                      std::current_exception());
  }
}

ScoredCandidate Engine::evaluate_candidate(const SourceDocument& doc, const QAPair& pair, CallCounter* counter) {
  const std::string key = EvaluationCache::key(doc.doc_id, pair.pair_id, rubric_.version);
  EvaluationReport report = cache_.get_or_compute(key, [&] {
    try {
      const PromptText prompt = render_judge_prompt(doc, pair, rubric_, templates_);
      return with_parse_retries(config_.judge_parse_retries, [&] {
        return parse_judge_report(complete_text(prompt, settings_.judge_temperature, counter), rubric_, pair.pair_id);
      });
    } catch (const EngineError&) {
      throw;
    } catch (const Error& e) {
      throw EngineError(EngineErrc::EvaluationFailed,
                        "evaluation of " + pair.pair_id.substr(0, 12) + " failed: " + e.what(),
                        std::current_exception());
    }
  });
  return ScoredCandidate{pair, std::move(report)};
}

LineageOutcome Engine::evolve_lineage(const QAPair& seed, const SourceDocument& doc) {
  if (seed.generation != 0) {
    throw EngineError(EngineErrc::LineageFailed, "lineage must start from a generation-0 seed");
  }
  LineageOutcome outcome;
  outcome.lineage_id = seed.lineage_id;
  outcome.seed = seed;
  CallCounter counter;

  // path[0] is the seed; path.back() is the current parent.
  std::vector<QAPair> path{seed};
  std::optional<ScoredCandidate> parent_scored;
  std::optional<ScoredCandidate> best_ever;
  std::vector<QAPair> best_ever_path;

  auto finish = [&](const ScoredCandidate& accepted, const std::vector<QAPair>& accepted_path, LineageStatus status,
                    int rounds) {
    outcome.accepted = accepted;
    outcome.status = status;
    outcome.rounds_used = rounds;
    outcome.calls_made = counter.calls;
    // accepted_path ends with the accepted pair itself.
    outcome.ancestry.assign(accepted_path.rbegin() + 1, accepted_path.rend());
    return outcome;
  };

  try {
    for (int round = 1; round <= config_.max_rounds; ++round) {
      if (stop_requested()) {
        throw EngineError(EngineErrc::RunCancelled, "stop requested");
      }
      const QAPair& parent = path.back();
      std::vector<QAPair> children = generate_variations(parent, round, &counter);

      std::vector<ScoredCandidate> pool;
      pool.reserve(children.size() + 1);
      for (const auto& child : children) {
        pool.push_back(evaluate_candidate(doc, child, &counter));
      }
      if (config_.include_parent_in_pool) {
        if (!parent_scored) {
          parent_scored = evaluate_candidate(doc, parent, &counter);
        }
        pool.push_back(*parent_scored);
      }

      const std::size_t best_index = select_best_index(pool);
      const ScoredCandidate& best = pool[best_index];
      const bool best_is_parent = config_.include_parent_in_pool && best_index + 1 == pool.size();
      std::vector<QAPair> best_path = path;
      if (!best_is_parent) {
        best_path.push_back(best.pair);
      }
      outcome.history.push_back(best.report.overall);
      if (!best_ever || best.report.overall > best_ever->report.overall) {
        best_ever = best;
        best_ever_path = best_path;
      }

      if (threshold_met(best.report.overall, config_)) {
        return finish(best, best_path, LineageStatus::ThresholdMet, round);
      }
      if (round == config_.max_rounds) {
        return finish(*best_ever, best_ever_path, LineageStatus::RoundCapReached, round);
      }
      parent_scored = best;
      path = std::move(best_path);
    }
  } catch (const EngineError& e) {
    if (e.code() == EngineErrc::RunCancelled) {
      throw;
    }
    throw EngineError(EngineErrc::LineageFailed, seed.lineage_id + " failed: " + e.what(), std::current_exception());
  }
  throw EngineError(EngineErrc::LineageFailed, "unreachable: lineage loop exited without an outcome");
}

RunResult Engine::run(const SourceDocument& doc, const RunOptions& options, RunObserver* observer,
                      const Checkpoint* resume) {
  const auto snapshot_json = snapshot();
  const std::string digest = config_digest(snapshot_json);

  RunManifest manifest;
  manifest.doc_id = doc.doc_id;
  manifest.config_snapshot = snapshot_json;
  manifest.started_at = utc_timestamp_now();

  const std::uint64_t tokens_at_start = gateway_.tokens_used();
  std::vector<QAPair> seeds;
  std::vector<std::optional<LineageOutcome>> outcomes;
  std::uint64_t seeding_calls = 0;
  std::uint64_t prior_tokens = 0;
  std::uint64_t journal = 0;

  if (resume != nullptr) {
    if (resume->config_digest != digest || resume->doc_id != doc.doc_id) {
      throw StoreError(StoreErrc::ConfigMismatch, "checkpoint was written for a different document or config");
    }
    manifest.run_id = resume->run_id;
    seeds = resume->all_seeds();
    outcomes.resize(seeds.size());
    for (const auto& done : resume->completed) {
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (seeds[i].lineage_id == done.lineage_id) {
          outcomes[i] = done;
        }
      }
    }
    seeding_calls = resume->seeding_calls;
    prior_tokens = resume->tokens_spent;
    journal = resume->journal_sequence;
  } else {
    manifest.run_id =
        options.run_id.empty() ? "run-" + fingerprint(doc.doc_id + digest).substr(0, 16) : options.run_id;
    CallCounter seeding;
    seeds = generate_seeds(doc, &seeding);
    seeding_calls = seeding.calls;
    outcomes.resize(seeds.size());
  }

  std::mutex mutex;
  auto make_checkpoint = [&] {
    Checkpoint cp;
    cp.run_id = manifest.run_id;
    cp.doc_id = doc.doc_id;
    cp.config_digest = digest;
    cp.config_snapshot = snapshot_json;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      if (outcomes[i]) {
        cp.completed.push_back(*outcomes[i]);
      } else {
        cp.pending.push_back(seeds[i]);
      }
    }
    cp.cache_snapshot = options.cache_snapshot_name;
    cp.journal_sequence = ++journal;
    cp.seeding_calls = seeding_calls;
    cp.tokens_spent = prior_tokens + (gateway_.tokens_used() - tokens_at_start);
    cp.doc_path = options.doc_path.empty() && resume != nullptr ? resume->doc_path : options.doc_path;
    cp.config_path = options.config_path.empty() && resume != nullptr ? resume->config_path : options.config_path;
    cp.cli_overrides = options.cli_overrides.empty() && resume != nullptr ? resume->cli_overrides : options.cli_overrides;
    return cp;
  };

  std::vector<std::size_t> pending;
  if (observer != nullptr) {
    observer->on_seeds(seeds);
  }
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (outcomes[i]) {
      if (observer != nullptr) {
        observer->on_lineage_complete(i, *outcomes[i]);
      }
    } else {
      pending.push_back(i);
    }
  }
  if (observer != nullptr) {
    observer->on_checkpoint(make_checkpoint(), cache_);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr first_error;

  auto worker = [&] {
    for (;;) {
      if (abort.load() || stop_requested()) {
        return;
      }
      const std::size_t slot = next.fetch_add(1);
      if (slot >= pending.size()) {
        return;
      }
      const std::size_t index = pending[slot];
      try {
        LineageOutcome outcome = evolve_lineage(seeds[index], doc);
        std::lock_guard lock(mutex);
        outcomes[index] = std::move(outcome);
        if (observer != nullptr) {
          observer->on_lineage_complete(index, *outcomes[index]);
          observer->on_checkpoint(make_checkpoint(), cache_);
        }
      } catch (const EngineError& e) {
        if (e.code() == EngineErrc::RunCancelled) {
          return;
        }
        std::lock_guard lock(mutex);
        if (!first_error) {
          first_error = std::current_exception();
        }
        abort.store(true);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!first_error) {
          first_error = std::current_exception();
        }
        abort.store(true);
      }
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(1, options.max_concurrent_lineages)), pending.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) {
      pool.emplace_back(worker);
    }
  }

  manifest.total_calls = seeding_calls;
  std::size_t completed = 0;
  for (const auto& o : outcomes) {
    if (o) {
      manifest.total_calls += o->calls_made;
      ++manifest.outcome_summary[to_string(o->status)];
      ++completed;
    }
  }
  manifest.total_token_estimate = prior_tokens + (gateway_.tokens_used() - tokens_at_start);

  if (completed < seeds.size()) {
    if (observer != nullptr) {
      observer->on_checkpoint(make_checkpoint(), cache_);
      observer->on_run_aborted(manifest);
    }
    if (first_error) {
      std::string what = "run aborted";
      try {
        std::rethrow_exception(first_error);
      } catch (const std::exception& e) {
        what += ": ";
        what += e.what();
      }
      throw EngineError(EngineErrc::RunFailed, what, first_error);
    }
    throw EngineError(EngineErrc::RunCancelled, "run stopped with " + std::to_string(seeds.size() - completed) +
                                                    " lineage(s) pending");
  }

  manifest.finished_at = utc_timestamp_now();
  RunResult result;
  result.doc_id = doc.doc_id;
  result.manifest = manifest;
  for (auto& o : outcomes) {
    result.outcomes.push_back(std::move(*o));
  }
  if (observer != nullptr) {
    observer->on_run_finished(result);
  }
  return result;
}

}  // namespace evoqa
