#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "evoqa/engine.hpp"
#include "evoqa/error.hpp"
#include "evoqa/gateway.hpp"
#include "evoqa/protocol.hpp"
#include "evoqa/rubric.hpp"

namespace evoqa {

/// A setting that could not be resolved. `key` is the dotted config key,
/// `source` where the bad value came from ("flag", "env", "file <path>").
class ConfigError : public Error {
 public:
  ConfigError(std::string key, std::string source, const std::string& message)
      : Error(key + " (from " + source + "): " + message), key_(std::move(key)), source_(std::move(source)) {}
  [[nodiscard]] const std::string& key() const noexcept { return key_; }
  [[nodiscard]] const std::string& source() const noexcept { return source_; }

 private:
  std::string key_;
  std::string source_;
};

/// Values given on the command line. Paths are taken relative to the
/// working directory.
struct CliOverrides {
  std::optional<std::string> backend;
  std::optional<std::string> cassette;
  std::optional<std::string> script;
  std::optional<std::string> rubric;
  std::optional<std::string> model;
  std::optional<int> max_rounds;
  std::optional<std::string> threshold;
  std::optional<int> seeds;
  std::optional<int> variations;
  std::optional<int> concurrency;

  friend bool operator==(const CliOverrides&, const CliOverrides&) = default;
};

nlohmann::ordered_json overrides_to_json(const CliOverrides& flags);
CliOverrides overrides_from_json(const nlohmann::json& doc);
/// Fields set in `top` win over `base`.
CliOverrides merge_overrides(const CliOverrides& base, const CliOverrides& top);

struct ResolvedConfig {
  EngineConfig engine;
  int max_concurrent_lineages = 4;
  GenerationSettings generation;
  BackendKind backend = BackendKind::Live;
  std::optional<std::filesystem::path> cassette;
  std::optional<std::filesystem::path> script;
  std::string endpoint;
  std::string api_key;
  int timeout_seconds = 120;
  GatewayOptions gateway;
  std::size_t max_document_chars = kDefaultMaxDocumentChars;
  Rubric rubric = default_rubric();
  PromptTemplates templates = builtin_templates();
  std::optional<std::filesystem::path> config_path;
  /// Where each non-default value came from, by dotted key.
  std::map<std::string, std::string> sources;
};

using Environment = std::function<std::optional<std::string>(const std::string&)>;
Environment process_environment();

/// Merges defaults, the config file (if any), environment and flags, then
/// loads the rubric and templates and validates the engine settings.
/// Throws ConfigError.
ResolvedConfig resolve_config(const std::optional<std::filesystem::path>& config_path, const CliOverrides& flags,
                              const Environment& env = process_environment());

}  // namespace evoqa
