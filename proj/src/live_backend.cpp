#include "evoqa/live_backend.hpp"

#include <httplib.h>

namespace evoqa {

using nlohmann::json;

LiveBackend::LiveBackend(LiveBackendOptions options) : options_(std::move(options)) {
  const std::string& url = options_.endpoint;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error("endpoint must be an absolute http(s) URL: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

std::string LiveBackend::request_body(const CompletionRequest& request) {
  json body = {{"model", request.model_name},
               {"messages", json::array({{{"role", "user"}, {"content", request.prompt.text}}})},
               {"temperature", request.temperature},
               {"max_tokens", request.max_output_tokens}};
  return body.dump();
}

std::string LiveBackend::response_text(const std::string& body) {
  auto doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) {
    throw GatewayError(GatewayErrc::RequestRejected, "endpoint returned a non-JSON body");
  }
  try {
    const json& content = doc.at("choices").at(0).at("message").at("content");
    return content.get<std::string>();
  } catch (const json::exception&) {
    throw GatewayError(GatewayErrc::RequestRejected, "endpoint response lacks choices[0].message.content");
  }
}

CompletionResult LiveBackend::complete(const CompletionRequest& request) {
  if (options_.api_key.empty()) {
    throw GatewayError(GatewayErrc::AuthError, std::string("missing API key (set ") + kApiKeyEnvVar + ")");
  }
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(options_.timeout);
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);
  client.set_bearer_token_auth(options_.api_key);

  auto res = client.Post(path_, request_body(request), "application/json");
  if (!res) {
    throw GatewayError(GatewayErrc::TransportError, "request failed: " + httplib::to_string(res.error()));
  }
  const int status = res->status;
  if (status == 401 || status == 403) {
    throw GatewayError(GatewayErrc::AuthError, "endpoint rejected credentials (HTTP " + std::to_string(status) + ")");
  }
  if (status == 429) {
    GatewayError err(GatewayErrc::RateLimited, "rate limited (HTTP 429)");
    if (res->has_header("Retry-After")) {
      try {
        err.retry_after = std::chrono::milliseconds(
            static_cast<std::int64_t>(std::stod(res->get_header_value("Retry-After")) * 1000));
      } catch (const std::exception&) {
        // HTTP-date form is not supported; fall back to policy backoff.
      }
    }
    throw err;
  }
  if (status >= 500 || status == 408) {
    throw GatewayError(GatewayErrc::TransportError, "server error (HTTP " + std::to_string(status) + ")");
  }
  if (status < 200 || status >= 300) {
    throw GatewayError(GatewayErrc::RequestRejected,
                       "endpoint returned HTTP " + std::to_string(status) + ": " + res->body.substr(0, 512));
  }

  CompletionResult result;
  result.text = response_text(res->body);
  result.prompt_token_estimate = estimate_tokens(request.prompt.text);
  result.output_token_estimate = estimate_tokens(result.text);
  result.backend_kind = BackendKind::Live;
  return result;
}

}  // namespace evoqa
