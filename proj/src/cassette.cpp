#include <fstream>

#include "evoqa/gateway.hpp"

namespace evoqa {

using nlohmann::ordered_json;

namespace {

ordered_json entry_to_json(const CassetteEntry& e) {
  return {{"request_fingerprint", e.request_fingerprint},
          {"prompt_digest", e.prompt_digest},
          {"role", e.role},
          {"model_name", e.model_name},
          {"text", e.text},
          {"prompt_token_estimate", e.prompt_token_estimate},
          {"output_token_estimate", e.output_token_estimate}};
}

CassetteEntry entry_from_json(const nlohmann::json& j) {
  CassetteEntry e;
  e.request_fingerprint = j.at("request_fingerprint").get<std::string>();
  e.prompt_digest = j.value("prompt_digest", std::string{});
  e.role = j.value("role", std::string{});
  e.model_name = j.value("model_name", std::string{});
  e.text = j.at("text").get<std::string>();
  e.prompt_token_estimate = j.value("prompt_token_estimate", std::size_t{0});
  e.output_token_estimate = j.value("output_token_estimate", std::size_t{0});
  return e;
}

}  // namespace

Cassette::Cassette(std::filesystem::path path) : path_(std::move(path)) {}

std::shared_ptr<Cassette> Cassette::open(const std::filesystem::path& path) {
  auto cassette = std::make_shared<Cassette>(path);
  std::ifstream in(path);
  if (!in) {
    return cassette;
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) {
        throw std::invalid_argument("not JSON");
      }
      CassetteEntry e = entry_from_json(j);
      cassette->entries_[e.request_fingerprint] = std::move(e);
    } catch (const std::exception&) {
      throw GatewayError(GatewayErrc::CassetteCorrupt,
                         "cassette " + path.string() + " line " + std::to_string(line_no) + " is malformed");
    }
  }
  return cassette;
}

std::optional<CassetteEntry> Cassette::find(const std::string& request_fingerprint) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(request_fingerprint);
  if (it == entries_.end()) {
    return std::nullopt;
  }
  return it->second;
}

void Cassette::record(const CompletionRequest& request, const CompletionResult& result) {
  CassetteEntry e;
  e.request_fingerprint = request.request_fingerprint;
  e.prompt_digest = fingerprint(request.prompt.text);
  e.role = to_string(request.prompt.role);
  e.model_name = request.model_name;
  e.text = result.text;
  e.prompt_token_estimate = result.prompt_token_estimate;
  e.output_token_estimate = result.output_token_estimate;

  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) {
    throw GatewayError(GatewayErrc::StoreNotWritable, "cannot append to cassette " + path_.string());
  }
  out << entry_to_json(e).dump() << '\n';
  out.flush();
  if (!out) {
    throw GatewayError(GatewayErrc::StoreNotWritable, "write to cassette failed: " + path_.string());
  }
  entries_[e.request_fingerprint] = std::move(e);
}

std::size_t Cassette::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

}  // namespace evoqa
