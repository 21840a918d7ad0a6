#pragma once

#include <chrono>
#include <string>

#include "evoqa/gateway.hpp"

namespace evoqa {

inline constexpr const char* kEndpointEnvVar = "EVOQA_ENDPOINT";
inline constexpr const char* kApiKeyEnvVar = "EVOQA_API_KEY";

struct LiveBackendOptions {
  /// Full URL of the chat-completions endpoint, e.g. https://host/v1/chat/completions.
  std::string endpoint;
  std::string api_key;
  std::chrono::seconds timeout{120};
};

/// OpenAI-compatible chat-completions client. Sends
/// {model, messages:[{role:"user", content}], temperature, max_tokens} and
/// reads choices[0].message.content from the response.
class LiveBackend final : public Backend {
 public:
  explicit LiveBackend(LiveBackendOptions options);

  CompletionResult complete(const CompletionRequest& request) override;
  [[nodiscard]] BackendKind kind() const noexcept override { return BackendKind::Live; }

  static std::string request_body(const CompletionRequest& request);
  /// Extracts the generated text; throws GatewayError(RequestRejected) on shape errors.
  static std::string response_text(const std::string& body);

 private:
  LiveBackendOptions options_;
  std::string scheme_host_port_;
  std::string path_;
};

}  // namespace evoqa
