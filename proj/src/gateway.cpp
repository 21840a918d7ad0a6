#include "evoqa/gateway.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <thread>

namespace evoqa {

const char* to_string(BackendKind kind) noexcept {
  switch (kind) {
    case BackendKind::Live:
      return "live";
    case BackendKind::Scripted:
      return "scripted";
    case BackendKind::Replay:
      return "replay";
  }
  return "unknown";
}

std::optional<BackendKind> backend_kind_from_string(std::string_view name) noexcept {
  if (name == "live") return BackendKind::Live;
  if (name == "scripted") return BackendKind::Scripted;
  if (name == "replay") return BackendKind::Replay;
  return std::nullopt;
}

const char* to_string(GatewayErrc code) noexcept {
  switch (code) {
    case GatewayErrc::TransportError:
      return "TransportError";
    case GatewayErrc::AuthError:
      return "AuthError";
    case GatewayErrc::RateLimited:
      return "RateLimited";
    case GatewayErrc::NoScriptedResponse:
      return "NoScriptedResponse";
    case GatewayErrc::NoRecordedResponse:
      return "NoRecordedResponse";
    case GatewayErrc::BudgetExhausted:
      return "BudgetExhausted";
    case GatewayErrc::RetriesExhausted:
      return "RetriesExhausted";
    case GatewayErrc::RequestRejected:
      return "RequestRejected";
    case GatewayErrc::StoreNotWritable:
      return "StoreNotWritable";
    case GatewayErrc::CassetteCorrupt:
      return "CassetteCorrupt";
  }
  return "Unknown";
}

bool is_retryable(GatewayErrc code) noexcept {
  return code == GatewayErrc::TransportError || code == GatewayErrc::RateLimited;
}

std::string compute_request_fingerprint(const std::string& prompt_text, const std::string& model_name,
                                        double temperature) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), temperature);
  std::string material;
  material.reserve(prompt_text.size() + model_name.size() + 48);
  material += std::to_string(prompt_text.size()) + ":" + prompt_text;
  material += std::to_string(model_name.size()) + ":" + model_name;
  material.append(buf.data(), ec == std::errc{} ? end : buf.data());
  return fingerprint(material);
}

CompletionRequest make_completion_request(PromptText prompt, std::string model_name, double temperature,
                                          int max_output_tokens) {
  CompletionRequest req;
  req.request_fingerprint = compute_request_fingerprint(prompt.text, model_name, temperature);
  req.prompt = std::move(prompt);
  req.model_name = std::move(model_name);
  req.temperature = temperature;
  req.max_output_tokens = max_output_tokens;
  return req;
}

namespace {

CompletionResult make_result(const CompletionRequest& request, std::string text, BackendKind kind) {
  CompletionResult r;
  r.prompt_token_estimate = estimate_tokens(request.prompt.text);
  r.output_token_estimate = estimate_tokens(text);
  r.text = std::move(text);
  r.backend_kind = kind;
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// ScriptedBackend

void ScriptedBackend::set_response(const std::string& request_fingerprint, std::string text) {
  std::lock_guard lock(mutex_);
  by_fingerprint_[request_fingerprint] = std::move(text);
}

void ScriptedBackend::set_role_responses(PromptRole role, std::vector<std::string> responses) {
  std::lock_guard lock(mutex_);
  by_role_[role] = RoleRule{std::move(responses), 0, {}};
}

void ScriptedBackend::set_role_responder(PromptRole role, Responder responder) {
  std::lock_guard lock(mutex_);
  by_role_[role] = RoleRule{{}, 0, std::move(responder)};
}

void ScriptedBackend::inject_failure(GatewayError error, std::optional<PromptRole> role) {
  std::lock_guard lock(mutex_);
  failures_.push_back(Injection{std::move(error), role});
}

CompletionResult ScriptedBackend::complete(const CompletionRequest& request) {
  Responder responder;
  std::string text;
  {
    std::lock_guard lock(mutex_);
    for (auto it = failures_.begin(); it != failures_.end(); ++it) {
      if (!it->role || *it->role == request.prompt.role) {
        GatewayError error = it->error;
        failures_.erase(it);
        throw error;
      }
    }
    if (auto it = by_fingerprint_.find(request.request_fingerprint); it != by_fingerprint_.end()) {
      return make_result(request, it->second, BackendKind::Scripted);
    }
    auto rule = by_role_.find(request.prompt.role);
    if (rule == by_role_.end() || (!rule->second.responder && rule->second.sequence.empty())) {
      throw GatewayError(GatewayErrc::NoScriptedResponse,
                         std::string("no scripted response for ") + to_string(request.prompt.role) +
                             " request " + request.request_fingerprint.substr(0, 12));
    }
    if (rule->second.responder) {
      responder = rule->second.responder;
    } else {
      auto& r = rule->second;
      text = r.sequence[std::min(r.next, r.sequence.size() - 1)];
      if (r.next < r.sequence.size()) {
        ++r.next;
      }
    }
  }
  if (responder) {
    text = responder(request);
  }
  return make_result(request, std::move(text), BackendKind::Scripted);
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_json(const nlohmann::json& script) {
  auto backend = std::make_shared<ScriptedBackend>();
  if (!script.is_object()) {
    throw Error("script must be a JSON object");
  }
  if (auto it = script.find("by_fingerprint"); it != script.end()) {
    for (const auto& [fp, text] : it->items()) {
      backend->set_response(fp, text.get<std::string>());
    }
  }
  if (auto it = script.find("by_role"); it != script.end()) {
    for (const auto& [name, value] : it->items()) {
      auto role = prompt_role_from_string(name);
      if (!role) {
        throw Error("unknown role in script: " + name);
      }
      std::vector<std::string> seq;
      if (value.is_string()) {
        seq.push_back(value.get<std::string>());
      } else {
        seq = value.get<std::vector<std::string>>();
      }
      backend->set_role_responses(*role, std::move(seq));
    }
  }
  return backend;
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot read script file " + path.string());
  }
  auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw Error("script file is not valid JSON: " + path.string());
  }
  try {
    return from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed script file " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Replay / recording

CompletionResult ReplayBackend::complete(const CompletionRequest& request) {
  auto entry = cassette_->find(request.request_fingerprint);
  if (!entry) {
    throw GatewayError(GatewayErrc::NoRecordedResponse,
                       std::string("cassette has no entry for ") + to_string(request.prompt.role) + " request " +
                           request.request_fingerprint.substr(0, 12));
  }
  CompletionResult r;
  r.text = entry->text;
  r.prompt_token_estimate = entry->prompt_token_estimate;
  r.output_token_estimate = entry->output_token_estimate;
  r.backend_kind = BackendKind::Replay;
  return r;
}

CompletionResult RecordingBackend::complete(const CompletionRequest& request) {
  CompletionResult result = inner_->complete(request);
  cassette_->record(request, result);
  return result;
}

// ---------------------------------------------------------------------------
// Clocks and rate limiting

void SystemClock::sleep_for(std::chrono::milliseconds duration) { std::this_thread::sleep_for(duration); }

Clock::time_point VirtualClock::now() {
  std::lock_guard lock(mutex_);
  return now_;
}

void VirtualClock::sleep_for(std::chrono::milliseconds duration) {
  std::lock_guard lock(mutex_);
  sleeps_.push_back(duration);
  now_ += duration;
}

void VirtualClock::advance(std::chrono::milliseconds duration) {
  std::lock_guard lock(mutex_);
  now_ += duration;
}

std::vector<std::chrono::milliseconds> VirtualClock::sleeps() const {
  std::lock_guard lock(mutex_);
  return sleeps_;
}

RateLimiter::RateLimiter(double per_second, std::shared_ptr<Clock> clock)
    : limit_(per_second > 0 ? static_cast<std::size_t>(std::floor(per_second)) : 0), clock_(std::move(clock)) {
  if (per_second > 0 && limit_ == 0) {
    limit_ = 1;
  }
}

void RateLimiter::acquire() {
  if (limit_ == 0) {
    return;
  }
  using namespace std::chrono;
  std::lock_guard lock(mutex_);
  for (;;) {
    const auto now = clock_->now();
    while (!window_.empty() && now - window_.front() >= seconds(1)) {
      window_.pop_front();
    }
    if (window_.size() < limit_) {
      window_.push_back(now);
      return;
    }
    const auto wait = duration_cast<milliseconds>(window_.front() + seconds(1) - now);
    clock_->sleep_for(std::max(wait, milliseconds(1)));
  }
}

std::chrono::milliseconds RetryPolicy::backoff_after(int attempt) const {
  const double factor = std::pow(backoff_multiplier, std::max(0, attempt - 1));
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(static_cast<double>(base_backoff_ms) * factor)));
}

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options, std::shared_ptr<Clock> clock)
    : backend_(std::move(backend)),
      options_(options),
      clock_(std::move(clock)),
      limiter_(options.rate_limit_per_sec, clock_) {
  if (!backend_) {
    throw Error("gateway requires a backend");
  }
}

CompletionResult Gateway::complete(const CompletionRequest& request) { return attempt(request, 1); }

CompletionResult Gateway::attempt(const CompletionRequest& request, int attempt_number) {
  CallLogEntry entry;
  entry.role = request.prompt.role;
  entry.request_fingerprint = request.request_fingerprint;
  entry.attempt = attempt_number;
  entry.prompt_tokens = estimate_tokens(request.prompt.text);

  if (options_.max_total_tokens) {
    std::lock_guard lock(mutex_);
    if (tokens_ + entry.prompt_tokens > *options_.max_total_tokens) {
      entry.sequence = log_.size();
      entry.error = GatewayErrc::BudgetExhausted;
      log_.push_back(entry);
      throw GatewayError(GatewayErrc::BudgetExhausted,
                         "token budget exhausted: " + std::to_string(tokens_) + " used of " +
                             std::to_string(*options_.max_total_tokens));
    }
  }

  limiter_.acquire();
  const auto start = std::chrono::steady_clock::now();
  try {
    CompletionResult result = backend_->complete(request);
    if (result.backend_kind == BackendKind::Live) {
      result.latency_ms = static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count());
    }
    std::lock_guard lock(mutex_);
    entry.sequence = log_.size();
    entry.prompt_tokens = result.prompt_token_estimate;
    entry.output_tokens = result.output_token_estimate;
    log_.push_back(entry);
    ++completed_;
    tokens_ += result.prompt_token_estimate + result.output_token_estimate;
    return result;
  } catch (const GatewayError& e) {
    std::lock_guard lock(mutex_);
    entry.sequence = log_.size();
    entry.error = e.code();
    log_.push_back(entry);
    throw;
  }
}

CompletionResult Gateway::complete_with_retry(const CompletionRequest& request, const RetryPolicy& policy) {
  const int max_attempts = std::max(1, policy.max_attempts);
  for (int k = 1;; ++k) {
    try {
      return attempt(request, k);
    } catch (const GatewayError& e) {
      if (!is_retryable(e.code())) {
        throw;
      }
      if (k >= max_attempts) {
        GatewayError exhausted(GatewayErrc::RetriesExhausted, "gave up after " + std::to_string(k) +
                                                                  " attempts: " + e.what());
        exhausted.last_code = e.code();
        exhausted.attempts = k;
        throw exhausted;
      }
      auto wait = policy.backoff_after(k);
      if (e.retry_after && *e.retry_after > wait) {
        wait = *e.retry_after;
      }
      clock_->sleep_for(wait);
    }
  }
}

std::vector<CallLogEntry> Gateway::call_log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::uint64_t Gateway::completed_calls() const {
  std::lock_guard lock(mutex_);
  return completed_;
}

std::uint64_t Gateway::tokens_used() const {
  std::lock_guard lock(mutex_);
  return tokens_;
}

void Gateway::add_tokens_spent(std::uint64_t tokens) {
  std::lock_guard lock(mutex_);
  tokens_ += tokens;
}

}  // namespace evoqa
