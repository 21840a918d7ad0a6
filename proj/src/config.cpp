#include "evoqa/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "evoqa/live_backend.hpp"

namespace evoqa {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

// Typed access to one object section of the config file. Every key read is
// remembered so leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& node, std::string prefix, std::string source)
      : node_(node), prefix_(std::move(prefix)), source_(std::move(source)) {
    if (!node_.is_object()) {
      throw ConfigError(prefix_.empty() ? "<root>" : prefix_, source_, "expected an object");
    }
  }

  [[nodiscard]] std::string key(const std::string& name) const {
    return prefix_.empty() ? name : prefix_ + "." + name;
  }

  const json* find(const std::string& name) {
    seen_.insert(name);
    auto it = node_.find(name);
    return it == node_.end() || it->is_null() ? nullptr : &*it;
  }

  template <typename T>
  bool read(const std::string& name, T& out, std::map<std::string, std::string>& sources) {
    const json* v = find(name);
    if (v == nullptr) {
      return false;
    }
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw std::invalid_argument("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw std::invalid_argument("expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw std::invalid_argument("expected a number");
      } else {
        if (!v->is_string()) throw std::invalid_argument("expected a string");
      }
      out = v->get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(key(name), source_, e.what());
    }
    sources[key(name)] = source_;
    return true;
  }

  void reject_unknown() const {
    for (const auto& [name, value] : node_.items()) {
      if (!seen_.count(name)) {
        throw ConfigError(key(name), source_, "unknown setting");
      }
    }
  }

  [[nodiscard]] const std::string& source() const noexcept { return source_; }

 private:
  const json& node_;
  std::string prefix_;
  std::string source_;
  std::set<std::string> seen_;
};

Rational parse_threshold(const json& v, const std::string& key, const std::string& source) {
  try {
    if (v.is_number_integer()) {
      return Rational(v.get<long long>());
    }
    if (v.is_number()) {
      return rational_from_double(v.get<double>());
    }
    if (v.is_string()) {
      return parse_rational(v.get<std::string>());
    }
  } catch (const std::exception& e) {
    throw ConfigError(key, source, e.what());
  }
  throw ConfigError(key, source, "expected a number");
}

BackendKind parse_backend(const std::string& name, const std::string& key, const std::string& source) {
  auto kind = backend_kind_from_string(name);
  if (!kind) {
    throw ConfigError(key, source, "unknown backend '" + name + "' (expected live, scripted or replay)");
  }
  return *kind;
}

fs::path resolve_relative(const fs::path& p, const fs::path& base) {
  if (p.is_absolute() || base.empty()) {
    return p;
  }
  return base / p;
}

void apply_file(ResolvedConfig& cfg, const fs::path& path, std::optional<fs::path>& rubric_path,
                std::optional<fs::path>& templates_dir) {
  const std::string source = "file " + path.string();
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("<file>", source, "cannot read config file");
  }
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    throw ConfigError("<file>", source, "not valid JSON");
  }
  const fs::path base = fs::absolute(path).parent_path();
  auto& src = cfg.sources;

  Section root(doc, "", source);
  if (const json* engine = root.find("engine")) {
    Section s(*engine, "engine", source);
    s.read("n_seeds", cfg.engine.n_seeds, src);
    s.read("n_variations", cfg.engine.n_variations, src);
    if (const json* t = s.find("threshold")) {
      cfg.engine.threshold = parse_threshold(*t, "engine.threshold", source);
      src["engine.threshold"] = source;
    }
    s.read("max_rounds", cfg.engine.max_rounds, src);
    s.read("include_parent_in_pool", cfg.engine.include_parent_in_pool, src);
    s.read("judge_parse_retries", cfg.engine.judge_parse_retries, src);
    s.read("max_concurrent_lineages", cfg.max_concurrent_lineages, src);
    s.reject_unknown();
  }
  if (const json* gateway = root.find("gateway")) {
    Section s(*gateway, "gateway", source);
    std::string text;
    if (s.read("backend", text, src)) {
      cfg.backend = parse_backend(text, "gateway.backend", source);
    }
    if (s.read("cassette", text, src)) {
      cfg.cassette = resolve_relative(text, base);
    }
    if (s.read("script", text, src)) {
      cfg.script = resolve_relative(text, base);
    }
    s.read("model_name", cfg.generation.model_name, src);
    s.read("seed_temperature", cfg.generation.seed_temperature, src);
    s.read("variation_temperature", cfg.generation.variation_temperature, src);
    s.read("judge_temperature", cfg.generation.judge_temperature, src);
    s.read("max_output_tokens", cfg.generation.max_output_tokens, src);
    s.read("endpoint", cfg.endpoint, src);
    s.read("api_key", cfg.api_key, src);
    s.read("timeout_seconds", cfg.timeout_seconds, src);
    s.read("rate_limit_per_sec", cfg.gateway.rate_limit_per_sec, src);
    std::uint64_t budget = 0;
    if (s.read("max_total_tokens", budget, src)) {
      cfg.gateway.max_total_tokens = budget;
    }
    if (const json* retry = s.find("retry")) {
      Section r(*retry, "gateway.retry", source);
      r.read("max_attempts", cfg.gateway.retry.max_attempts, src);
      r.read("base_backoff_ms", cfg.gateway.retry.base_backoff_ms, src);
      r.read("backoff_multiplier", cfg.gateway.retry.backoff_multiplier, src);
      r.reject_unknown();
    }
    s.reject_unknown();
  }
  std::string text;
  if (root.read("rubric", text, src)) {
    rubric_path = resolve_relative(text, base);
  }
  if (root.read("templates_dir", text, src)) {
    templates_dir = resolve_relative(text, base);
  }
  root.read("max_document_chars", cfg.max_document_chars, src);
  root.reject_unknown();
}

void check_ranges(const ResolvedConfig& cfg) {
  auto source_of = [&](const std::string& key) {
    auto it = cfg.sources.find(key);
    return it == cfg.sources.end() ? std::string("default") : it->second;
  };
  auto require = [&](bool ok, const std::string& key, const std::string& msg) {
    if (!ok) {
      throw ConfigError(key, source_of(key), msg);
    }
  };
  require(cfg.engine.n_seeds >= 1, "engine.n_seeds", "must be at least 1");
  require(cfg.engine.n_variations >= 1, "engine.n_variations", "must be at least 1");
  require(cfg.engine.max_rounds >= 1, "engine.max_rounds", "must be at least 1");
  require(cfg.engine.judge_parse_retries >= 0, "engine.judge_parse_retries", "must not be negative");
  require(cfg.engine.threshold >= 0 && cfg.engine.threshold <= cfg.rubric.scale_max, "engine.threshold",
          "must lie within the rubric scale [0, " + std::to_string(cfg.rubric.scale_max) + "]");
  require(cfg.max_concurrent_lineages >= 1, "engine.max_concurrent_lineages", "must be at least 1");
  require(cfg.generation.max_output_tokens >= 1, "gateway.max_output_tokens", "must be at least 1");
  require(cfg.generation.seed_temperature >= 0, "gateway.seed_temperature", "must not be negative");
  require(cfg.generation.variation_temperature >= 0, "gateway.variation_temperature", "must not be negative");
  require(cfg.generation.judge_temperature >= 0, "gateway.judge_temperature", "must not be negative");
  require(cfg.gateway.rate_limit_per_sec >= 0, "gateway.rate_limit_per_sec", "must not be negative");
  require(cfg.gateway.retry.max_attempts >= 1, "gateway.retry.max_attempts", "must be at least 1");
  require(cfg.gateway.retry.base_backoff_ms >= 0, "gateway.retry.base_backoff_ms", "must not be negative");
  require(cfg.gateway.retry.backoff_multiplier >= 1, "gateway.retry.backoff_multiplier", "must be at least 1");
  require(cfg.timeout_seconds >= 1, "gateway.timeout_seconds", "must be at least 1");
  require(cfg.max_document_chars >= 1, "max_document_chars", "must be at least 1");
  require(cfg.backend != BackendKind::Replay || cfg.cassette.has_value(), "gateway.cassette",
          "the replay backend needs a cassette");
  require(cfg.backend != BackendKind::Scripted || cfg.script.has_value(), "gateway.script",
          "the scripted backend needs a script file");
}

}  // namespace

ordered_json overrides_to_json(const CliOverrides& f) {
  ordered_json j = ordered_json::object();
  auto put = [&](const char* name, const auto& opt) {
    if (opt) {
      j[name] = *opt;
    }
  };
  put("backend", f.backend);
  put("cassette", f.cassette);
  put("script", f.script);
  put("rubric", f.rubric);
  put("model", f.model);
  put("max_rounds", f.max_rounds);
  put("threshold", f.threshold);
  put("seeds", f.seeds);
  put("variations", f.variations);
  put("concurrency", f.concurrency);
  return j;
}

CliOverrides overrides_from_json(const json& doc) {
  CliOverrides f;
  auto get = [&](const char* name, auto& opt) {
    if (auto it = doc.find(name); it != doc.end() && !it->is_null()) {
      opt = it->get<typename std::decay_t<decltype(opt)>::value_type>();
    }
  };
  get("backend", f.backend);
  get("cassette", f.cassette);
  get("script", f.script);
  get("rubric", f.rubric);
  get("model", f.model);
  get("max_rounds", f.max_rounds);
  get("threshold", f.threshold);
  get("seeds", f.seeds);
  get("variations", f.variations);
  get("concurrency", f.concurrency);
  return f;
}

CliOverrides merge_overrides(const CliOverrides& base, const CliOverrides& top) {
  CliOverrides out = base;
  auto take = [](auto& dst, const auto& src) {
    if (src) {
      dst = src;
    }
  };
  take(out.backend, top.backend);
  take(out.cassette, top.cassette);
  take(out.script, top.script);
  take(out.rubric, top.rubric);
  take(out.model, top.model);
  take(out.max_rounds, top.max_rounds);
  take(out.threshold, top.threshold);
  take(out.seeds, top.seeds);
  take(out.variations, top.variations);
  take(out.concurrency, top.concurrency);
  return out;
}

Environment process_environment() {
  return [](const std::string& name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name.c_str())) {
      return std::string(v);
    }
    return std::nullopt;
  };
}

ResolvedConfig resolve_config(const std::optional<fs::path>& config_path, const CliOverrides& flags,
                              const Environment& env) {
  ResolvedConfig cfg;
  std::optional<fs::path> rubric_path;
  std::optional<fs::path> templates_dir;
  if (config_path) {
    cfg.config_path = fs::absolute(*config_path);
    apply_file(cfg, *cfg.config_path, rubric_path, templates_dir);
  }

  if (auto v = env(kEndpointEnvVar); v && !v->empty()) {
    cfg.endpoint = *v;
    cfg.sources["gateway.endpoint"] = std::string("env ") + kEndpointEnvVar;
  }
  if (auto v = env(kApiKeyEnvVar); v && !v->empty()) {
    cfg.api_key = *v;
    cfg.sources["gateway.api_key"] = std::string("env ") + kApiKeyEnvVar;
  }

  const std::string flag = "flag";
  if (flags.backend) {
    cfg.backend = parse_backend(*flags.backend, "gateway.backend", "flag --backend");
    cfg.sources["gateway.backend"] = flag;
  }
  if (flags.cassette) {
    cfg.cassette = fs::absolute(*flags.cassette);
    cfg.sources["gateway.cassette"] = flag;
  }
  if (flags.script) {
    cfg.script = fs::absolute(*flags.script);
    cfg.sources["gateway.script"] = flag;
  }
  if (flags.rubric) {
    rubric_path = fs::absolute(*flags.rubric);
    cfg.sources["rubric"] = flag;
  }
  if (flags.model) {
    cfg.generation.model_name = *flags.model;
    cfg.sources["gateway.model_name"] = flag;
  }
  if (flags.max_rounds) {
    cfg.engine.max_rounds = *flags.max_rounds;
    cfg.sources["engine.max_rounds"] = flag;
  }
  if (flags.threshold) {
    try {
      cfg.engine.threshold = parse_rational(*flags.threshold);
    } catch (const std::exception& e) {
      throw ConfigError("engine.threshold", "flag --threshold", e.what());
    }
    cfg.sources["engine.threshold"] = flag;
  }
  if (flags.seeds) {
    cfg.engine.n_seeds = *flags.seeds;
    cfg.sources["engine.n_seeds"] = flag;
  }
  if (flags.variations) {
    cfg.engine.n_variations = *flags.variations;
    cfg.sources["engine.n_variations"] = flag;
  }
  if (flags.concurrency) {
    cfg.max_concurrent_lineages = *flags.concurrency;
    cfg.sources["engine.max_concurrent_lineages"] = flag;
  }

  if (rubric_path) {
    try {
      cfg.rubric = load_rubric(*rubric_path);
    } catch (const std::exception& e) {
      throw ConfigError("rubric", cfg.sources["rubric"], e.what());
    }
  }
  if (templates_dir) {
    try {
      cfg.templates = load_templates(*templates_dir);
    } catch (const std::exception& e) {
      throw ConfigError("templates_dir", cfg.sources["templates_dir"], e.what());
    }
  }

  check_ranges(cfg);
  try {
    validate_engine_config(cfg.engine, cfg.rubric);
  } catch (const EngineError& e) {
    throw ConfigError("engine", "merged config", e.what());
  }
  return cfg;
}

}  // namespace evoqa
