#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "evoqa/error.hpp"
#include "evoqa/protocol.hpp"

namespace evoqa {

enum class BackendKind { Live, Scripted, Replay };

const char* to_string(BackendKind kind) noexcept;
std::optional<BackendKind> backend_kind_from_string(std::string_view name) noexcept;

enum class GatewayErrc {
  TransportError,
  AuthError,
  RateLimited,
  NoScriptedResponse,
  NoRecordedResponse,
  BudgetExhausted,
  RetriesExhausted,
  RequestRejected,
  StoreNotWritable,
  CassetteCorrupt,
};

const char* to_string(GatewayErrc code) noexcept;

class GatewayError : public Error {
 public:
  GatewayError(GatewayErrc code, const std::string& message) : Error(message), code_(code) {}
  [[nodiscard]] GatewayErrc code() const noexcept { return code_; }

  /// Server-provided Retry-After for RateLimited.
  std::optional<std::chrono::milliseconds> retry_after;
  /// For RetriesExhausted: the error of the final attempt and the attempt count.
  std::optional<GatewayErrc> last_code;
  int attempts = 0;

 private:
  GatewayErrc code_;
};

/// TransportError and RateLimited are the only transient classes.
bool is_retryable(GatewayErrc code) noexcept;

struct CompletionRequest {
  PromptText prompt;
  std::string model_name;
  double temperature = 0.0;
  int max_output_tokens = 4096;
  std::string request_fingerprint;
};

/// SHA-256 over the length-prefixed prompt text, model name and the
/// shortest decimal form of the temperature.
std::string compute_request_fingerprint(const std::string& prompt_text, const std::string& model_name,
                                        double temperature);

CompletionRequest make_completion_request(PromptText prompt, std::string model_name, double temperature,
                                          int max_output_tokens = 4096);

struct CompletionResult {
  std::string text;
  std::size_t prompt_token_estimate = 0;
  std::size_t output_token_estimate = 0;
  std::uint64_t latency_ms = 0;
  BackendKind backend_kind = BackendKind::Scripted;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// One attempt; throws GatewayError. Implementations must be thread-safe.
  virtual CompletionResult complete(const CompletionRequest& request) = 0;
  [[nodiscard]] virtual BackendKind kind() const noexcept = 0;
};

/// Deterministic backend driven by a lookup table. Resolution order for a
/// request: queued failure injections, exact fingerprint entry, role rule.
/// A role rule is either a responder callback or a response sequence whose
/// last element repeats once the sequence is exhausted.
class ScriptedBackend final : public Backend {
 public:
  using Responder = std::function<std::string(const CompletionRequest&)>;

  void set_response(const std::string& request_fingerprint, std::string text);
  void set_role_responses(PromptRole role, std::vector<std::string> responses);
  void set_role_responder(PromptRole role, Responder responder);
  /// Queue an error for the next dispatch matching `role` (any role when nullopt).
  void inject_failure(GatewayError error, std::optional<PromptRole> role = std::nullopt);

  /// Script file schema: {"by_fingerprint": {fp: text}, "by_role": {role: text | [text, ...]}}.
  static std::shared_ptr<ScriptedBackend> from_json(const nlohmann::json& script);
  static std::shared_ptr<ScriptedBackend> from_file(const std::filesystem::path& path);

  CompletionResult complete(const CompletionRequest& request) override;
  [[nodiscard]] BackendKind kind() const noexcept override { return BackendKind::Scripted; }

 private:
  struct RoleRule {
    std::vector<std::string> sequence;
    std::size_t next = 0;
    Responder responder;
  };
  struct Injection {
    GatewayError error;
    std::optional<PromptRole> role;
  };

  std::mutex mutex_;
  std::map<std::string, std::string> by_fingerprint_;
  std::map<PromptRole, RoleRule> by_role_;
  std::deque<Injection> failures_;
};

struct CassetteEntry {
  std::string request_fingerprint;
  std::string prompt_digest;
  std::string role;
  std::string model_name;
  std::string text;
  std::size_t prompt_token_estimate = 0;
  std::size_t output_token_estimate = 0;
};

/// Line-delimited request/response store. Later lines win on load, and
/// record() appends (last-write-wins on replay). Appends are serialized.
class Cassette {
 public:
  explicit Cassette(std::filesystem::path path);

  /// Loads `path` if it exists, otherwise starts empty. Throws CassetteCorrupt.
  static std::shared_ptr<Cassette> open(const std::filesystem::path& path);

  [[nodiscard]] std::optional<CassetteEntry> find(const std::string& request_fingerprint) const;
  void record(const CompletionRequest& request, const CompletionResult& result);
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::string, CassetteEntry> entries_;
};

class ReplayBackend final : public Backend {
 public:
  explicit ReplayBackend(std::shared_ptr<const Cassette> cassette) : cassette_(std::move(cassette)) {}
  CompletionResult complete(const CompletionRequest& request) override;
  [[nodiscard]] BackendKind kind() const noexcept override { return BackendKind::Replay; }

 private:
  std::shared_ptr<const Cassette> cassette_;
};

/// Decorator that records every successful completion of `inner`.
class RecordingBackend final : public Backend {
 public:
  RecordingBackend(std::shared_ptr<Backend> inner, std::shared_ptr<Cassette> cassette)
      : inner_(std::move(inner)), cassette_(std::move(cassette)) {}
  CompletionResult complete(const CompletionRequest& request) override;
  [[nodiscard]] BackendKind kind() const noexcept override { return inner_->kind(); }

 private:
  std::shared_ptr<Backend> inner_;
  std::shared_ptr<Cassette> cassette_;
};

/// Time source for backoff and rate limiting; replaceable in tests.
class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(std::chrono::milliseconds duration) = 0;
};

class SystemClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_for(std::chrono::milliseconds duration) override;
};

/// Manual clock: sleep_for advances time instantly and records the request.
class VirtualClock final : public Clock {
 public:
  time_point now() override;
  void sleep_for(std::chrono::milliseconds duration) override;
  void advance(std::chrono::milliseconds duration);
  [[nodiscard]] std::vector<std::chrono::milliseconds> sleeps() const;

 private:
  mutable std::mutex mutex_;
  time_point now_{};
  std::vector<std::chrono::milliseconds> sleeps_;
};

/// Sliding one-second window: at most `per_second` acquisitions in any
/// interval of length 1 s. A limit of 0 disables limiting.
class RateLimiter {
 public:
  RateLimiter(double per_second, std::shared_ptr<Clock> clock);
  void acquire();

 private:
  std::size_t limit_;
  std::shared_ptr<Clock> clock_;
  std::mutex mutex_;
  std::deque<Clock::time_point> window_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::int64_t base_backoff_ms = 500;
  double backoff_multiplier = 2.0;

  /// Wait after failed attempt k (1-indexed): base · multiplier^(k-1).
  [[nodiscard]] std::chrono::milliseconds backoff_after(int attempt) const;
};

struct GatewayOptions {
  RetryPolicy retry;
  double rate_limit_per_sec = 0.0;
  std::optional<std::uint64_t> max_total_tokens;
};

struct CallLogEntry {
  std::uint64_t sequence = 0;
  PromptRole role = PromptRole::Seed;
  std::string request_fingerprint;
  int attempt = 1;
  std::optional<GatewayErrc> error;
  std::size_t prompt_tokens = 0;
  std::size_t output_tokens = 0;
};

/// Shared front door to a backend: budget accounting, rate limiting, retry
/// and a call log. Safe to call from many lineage workers at once.
class Gateway {
 public:
  Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {},
          std::shared_ptr<Clock> clock = std::make_shared<SystemClock>());

  /// Single attempt.
  CompletionResult complete(const CompletionRequest& request);
  CompletionResult complete_with_retry(const CompletionRequest& request, const RetryPolicy& policy);
  CompletionResult complete_with_retry(const CompletionRequest& request) {
    return complete_with_retry(request, options_.retry);
  }

  [[nodiscard]] BackendKind backend_kind() const noexcept { return backend_->kind(); }
  [[nodiscard]] std::vector<CallLogEntry> call_log() const;
  /// Successful completions so far.
  [[nodiscard]] std::uint64_t completed_calls() const;
  [[nodiscard]] std::uint64_t tokens_used() const;
  /// Pre-charges the budget (used when resuming a run).
  void add_tokens_spent(std::uint64_t tokens);
  [[nodiscard]] const GatewayOptions& options() const noexcept { return options_; }

 private:
  CompletionResult attempt(const CompletionRequest& request, int attempt_number);

  std::shared_ptr<Backend> backend_;
  GatewayOptions options_;
  std::shared_ptr<Clock> clock_;
  RateLimiter limiter_;
  mutable std::mutex mutex_;
  std::vector<CallLogEntry> log_;
  std::uint64_t completed_ = 0;
  std::uint64_t tokens_ = 0;
};

}  // namespace evoqa
