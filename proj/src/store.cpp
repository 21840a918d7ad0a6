#include "evoqa/store.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace evoqa {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(StoreErrc code) noexcept {
  switch (code) {
    case StoreErrc::StoreNotWritable:
      return "StoreNotWritable";
    case StoreErrc::CheckpointCorrupt:
      return "CheckpointCorrupt";
    case StoreErrc::ConfigMismatch:
      return "ConfigMismatch";
    case StoreErrc::InvalidRecord:
      return "InvalidRecord";
    case StoreErrc::EmptyReportList:
      return "EmptyReportList";
  }
  return "Unknown";
}

namespace {

// Decimal-representable values are written as numbers, anything else as an
// exact "num/den" string. Both forms parse back exactly.
ordered_json rational_json(const Rational& value) {
  const double d = to_double(value);
  if (rational_from_double(d) == value) {
    return d;
  }
  return to_exact_string(value);
}

Rational rational_from_json(const json& node) {
  if (node.is_number_integer()) {
    return Rational(node.get<long long>());
  }
  if (node.is_number()) {
    return rational_from_double(node.get<double>());
  }
  if (node.is_string()) {
    return parse_rational(node.get<std::string>());
  }
  throw std::invalid_argument("expected a number");
}

ScoreMap scores_from_json(const json& node) {
  if (!node.is_object()) {
    throw std::invalid_argument("scores must be an object");
  }
  ScoreMap out;
  for (const auto& [id, value] : node.items()) {
    out.emplace(id, rational_from_json(value));
  }
  return out;
}

std::filesystem::path temp_sibling(const std::filesystem::path& path) {
  static std::atomic<unsigned> counter{0};
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1));
  return tmp;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) {
    throw StoreError(StoreErrc::StoreNotWritable, "cannot append to " + path.string());
  }
  out << line << '\n';
  out.flush();
  if (!out) {
    throw StoreError(StoreErrc::StoreNotWritable, "write failed: " + path.string());
  }
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const auto tmp = temp_sibling(path);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw StoreError(StoreErrc::StoreNotWritable, "cannot write " + tmp.string());
    }
    out << contents;
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw StoreError(StoreErrc::StoreNotWritable, "write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw StoreError(StoreErrc::StoreNotWritable, "cannot replace " + path.string());
  }
}

// ---------------------------------------------------------------------------
// JSON forms of engine values

ordered_json pair_to_json(const QAPair& pair) {
  ordered_json j = {{"pair_id", pair.pair_id},
                    {"question", pair.question},
                    {"answer", pair.answer},
                    {"lineage_id", pair.lineage_id},
                    {"generation", pair.generation}};
  j["parent_id"] = pair.parent_id ? ordered_json(*pair.parent_id) : ordered_json(nullptr);
  return j;
}

QAPair pair_from_json(const json& doc) {
  std::optional<std::string> parent;
  if (auto it = doc.find("parent_id"); it != doc.end() && !it->is_null()) {
    parent = it->get<std::string>();
  }
  QAPair p = make_qa_pair(doc.at("question").get<std::string>(), doc.at("answer").get<std::string>(),
                          doc.at("lineage_id").get<std::string>(), doc.at("generation").get<int>(), parent);
  if (doc.contains("pair_id") && doc.at("pair_id").get<std::string>() != p.pair_id) {
    throw std::invalid_argument("pair_id does not match content");
  }
  return p;
}

ordered_json report_to_json(const EvaluationReport& report) {
  ordered_json scores = ordered_json::object();
  for (const auto& [id, value] : report.scores) {
    scores[id] = to_exact_string(value);
  }
  return {{"candidate_id", report.candidate_id},
          {"scores", scores},
          {"overall", to_exact_string(report.overall)},
          {"rationale", report.judge_rationale},
          {"raw_response_digest", report.raw_response_digest}};
}

EvaluationReport report_from_json(const json& doc) {
  EvaluationReport r;
  r.candidate_id = doc.at("candidate_id").get<std::string>();
  r.scores = scores_from_json(doc.at("scores"));
  r.overall = rational_from_json(doc.at("overall"));
  r.judge_rationale = doc.value("rationale", std::string{});
  r.raw_response_digest = doc.value("raw_response_digest", std::string{});
  return r;
}

ordered_json lineage_outcome_to_json(const LineageOutcome& o) {
  ordered_json history = ordered_json::array();
  for (const auto& h : o.history) {
    history.push_back(to_exact_string(h));
  }
  ordered_json ancestry = ordered_json::array();
  for (const auto& p : o.ancestry) {
    ancestry.push_back(pair_to_json(p));
  }
  return {{"lineage_id", o.lineage_id},
          {"status", to_string(o.status)},
          {"rounds_used", o.rounds_used},
          {"calls_made", o.calls_made},
          {"history", history},
          {"seed", pair_to_json(o.seed)},
          {"accepted", {{"pair", pair_to_json(o.accepted.pair)}, {"report", report_to_json(o.accepted.report)}}},
          {"ancestry", ancestry}};
}

LineageOutcome lineage_outcome_from_json(const json& doc) {
  LineageOutcome o;
  o.lineage_id = doc.at("lineage_id").get<std::string>();
  auto status = lineage_status_from_string(doc.at("status").get<std::string>());
  if (!status) {
    throw std::invalid_argument("unknown lineage status");
  }
  o.status = *status;
  o.rounds_used = doc.at("rounds_used").get<int>();
  o.calls_made = doc.at("calls_made").get<std::uint64_t>();
  for (const auto& h : doc.at("history")) {
    o.history.push_back(rational_from_json(h));
  }
  o.seed = pair_from_json(doc.at("seed"));
  o.accepted.pair = pair_from_json(doc.at("accepted").at("pair"));
  o.accepted.report = report_from_json(doc.at("accepted").at("report"));
  for (const auto& p : doc.at("ancestry")) {
    o.ancestry.push_back(pair_from_json(p));
  }
  return o;
}

// ---------------------------------------------------------------------------
// Dataset

ordered_json dataset_record_json(const LineageOutcome& outcome) {
  const auto& pair = outcome.accepted.pair;
  const auto& report = outcome.accepted.report;
  ordered_json scores = ordered_json::object();
  for (const auto& [id, value] : report.scores) {
    scores[id] = to_double(value);
  }
  return {{"lineage_id", outcome.lineage_id},
          {"question", pair.question},
          {"answer", pair.answer},
          {"overall", to_double(report.overall)},
          {"scores", scores},
          {"status", to_string(outcome.status)},
          {"generation", pair.generation},
          {"rounds_used", outcome.rounds_used}};
}

void append_dataset_record(const std::filesystem::path& path, const LineageOutcome& outcome) {
  append_line(path, dataset_record_json(outcome).dump());
}

std::vector<DatasetRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw StoreError(StoreErrc::InvalidRecord, "cannot read dataset " + path.string());
  }
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    try {
      json j = json::parse(line);
      DatasetRecord r;
      r.lineage_id = j.at("lineage_id").get<std::string>();
      r.question = j.at("question").get<std::string>();
      r.answer = j.at("answer").get<std::string>();
      r.overall = rational_from_json(j.at("overall"));
      r.scores = scores_from_json(j.at("scores"));
      auto status = lineage_status_from_string(j.at("status").get<std::string>());
      if (!status) {
        throw std::invalid_argument("unknown status");
      }
      r.status = *status;
      r.generation = j.at("generation").get<int>();
      r.rounds_used = j.at("rounds_used").get<int>();
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw StoreError(StoreErrc::InvalidRecord,
                       path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

OrderedDatasetWriter::OrderedDatasetWriter(std::filesystem::path path, std::size_t total)
    : path_(std::move(path)), total_(total) {
  std::ofstream out(path_, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw StoreError(StoreErrc::StoreNotWritable, "cannot create " + path_.string());
  }
}

void OrderedDatasetWriter::submit(std::size_t index, const LineageOutcome& outcome) {
  std::lock_guard lock(mutex_);
  if (index < next_ || index >= total_) {
    return;
  }
  pending_.insert_or_assign(index, outcome);
  for (auto it = pending_.find(next_); it != pending_.end(); it = pending_.find(next_)) {
    append_dataset_record(path_, it->second);
    pending_.erase(it);
    ++next_;
  }
}

std::size_t OrderedDatasetWriter::written() const {
  std::lock_guard lock(mutex_);
  return next_;
}

// ---------------------------------------------------------------------------
// Manifest and config snapshot

ordered_json manifest_to_json(const RunManifest& m) {
  ordered_json summary = ordered_json::object();
  for (const auto& [status, count] : m.outcome_summary) {
    summary[status] = count;
  }
  ordered_json j = {{"run_id", m.run_id},
                    {"doc_id", m.doc_id},
                    {"config_snapshot", m.config_snapshot},
                    {"started_at", m.started_at}};
  if (m.finished_at) {
    j["finished_at"] = *m.finished_at;
  }
  j["total_calls"] = m.total_calls;
  j["total_token_estimate"] = m.total_token_estimate;
  j["outcome_summary"] = summary;
  return j;
}

RunManifest manifest_from_json(const ordered_json& doc) {
  RunManifest m;
  m.run_id = doc.at("run_id").get<std::string>();
  m.doc_id = doc.at("doc_id").get<std::string>();
  m.config_snapshot = doc.at("config_snapshot");
  m.started_at = doc.at("started_at").get<std::string>();
  if (doc.contains("finished_at")) {
    m.finished_at = doc.at("finished_at").get<std::string>();
  }
  m.total_calls = doc.at("total_calls").get<std::uint64_t>();
  m.total_token_estimate = doc.at("total_token_estimate").get<std::uint64_t>();
  for (const auto& [status, count] : doc.at("outcome_summary").items()) {
    m.outcome_summary[status] = count.get<std::uint64_t>();
  }
  return m;
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_json(manifest).dump(2) + "\n");
}

ordered_json config_snapshot(const EngineConfig& cfg, const std::string& rubric_version, BackendKind backend,
                             const std::string& model_name) {
  ordered_json engine = {{"n_seeds", cfg.n_seeds},
                         {"n_variations", cfg.n_variations},
                         {"threshold", rational_json(cfg.threshold)},
                         {"max_rounds", cfg.max_rounds},
                         {"include_parent_in_pool", cfg.include_parent_in_pool},
                         {"judge_parse_retries", cfg.judge_parse_retries}};
  return {{"engine", engine},
          {"rubric_version", rubric_version},
          {"backend", to_string(backend)},
          {"model_name", model_name}};
}

std::string config_digest(const ordered_json& snapshot) { return fingerprint(snapshot.dump()); }

std::string utc_timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr const char* kCheckpointFormat = "evoqa-checkpoint-v1";

bool lineage_less(const std::string& a, const std::string& b) {
  return a.size() != b.size() ? a.size() < b.size() : a < b;
}

}  // namespace

std::vector<QAPair> Checkpoint::all_seeds() const {
  std::vector<QAPair> seeds;
  seeds.reserve(completed.size() + pending.size());
  for (const auto& o : completed) {
    seeds.push_back(o.seed);
  }
  seeds.insert(seeds.end(), pending.begin(), pending.end());
  std::sort(seeds.begin(), seeds.end(),
            [](const QAPair& a, const QAPair& b) { return lineage_less(a.lineage_id, b.lineage_id); });
  return seeds;
}

void save_checkpoint(const Checkpoint& state, const std::filesystem::path& path) {
  ordered_json completed = ordered_json::array();
  for (const auto& o : state.completed) {
    completed.push_back(lineage_outcome_to_json(o));
  }
  ordered_json pending = ordered_json::array();
  for (const auto& p : state.pending) {
    pending.push_back(pair_to_json(p));
  }
  ordered_json j = {{"format", kCheckpointFormat},
                    {"run_id", state.run_id},
                    {"doc_id", state.doc_id},
                    {"config_digest", state.config_digest},
                    {"config_snapshot", state.config_snapshot},
                    {"journal_sequence", state.journal_sequence},
                    {"seeding_calls", state.seeding_calls},
                    {"tokens_spent", state.tokens_spent},
                    {"cache_snapshot", state.cache_snapshot},
                    {"doc_path", state.doc_path},
                    {"config_path", state.config_path},
                    {"cli_overrides", state.cli_overrides},
                    {"completed", completed},
                    {"pending", pending}};
  write_file_atomic(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_config_digest,
                           const std::optional<std::string>& expected_doc_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw StoreError(StoreErrc::CheckpointCorrupt, "cannot read checkpoint " + path.string());
  }
  ordered_json doc = ordered_json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw StoreError(StoreErrc::CheckpointCorrupt, "checkpoint is not a complete JSON document: " + path.string());
  }
  Checkpoint cp;
  try {
    if (doc.at("format").get<std::string>() != kCheckpointFormat) {
      throw std::invalid_argument("unsupported checkpoint format");
    }
    cp.run_id = doc.at("run_id").get<std::string>();
    cp.doc_id = doc.at("doc_id").get<std::string>();
    cp.config_digest = doc.at("config_digest").get<std::string>();
    cp.config_snapshot = doc.at("config_snapshot");
    cp.journal_sequence = doc.at("journal_sequence").get<std::uint64_t>();
    cp.seeding_calls = doc.at("seeding_calls").get<std::uint64_t>();
    cp.tokens_spent = doc.at("tokens_spent").get<std::uint64_t>();
    cp.cache_snapshot = doc.at("cache_snapshot").get<std::string>();
    cp.doc_path = doc.at("doc_path").get<std::string>();
    cp.config_path = doc.at("config_path").get<std::string>();
    cp.cli_overrides = ordered_json::parse(doc.value("cli_overrides", json::object()).dump());
    for (const auto& o : doc.at("completed")) {
      cp.completed.push_back(lineage_outcome_from_json(o));
    }
    for (const auto& p : doc.at("pending")) {
      cp.pending.push_back(pair_from_json(p));
    }
  } catch (const std::exception& e) {
    throw StoreError(StoreErrc::CheckpointCorrupt, "checkpoint " + path.string() + " is malformed: " + e.what());
  }

  std::set<std::string> ids;
  for (const auto& o : cp.completed) {
    if (o.seed.lineage_id != o.lineage_id || !ids.insert(o.lineage_id).second) {
      throw StoreError(StoreErrc::CheckpointCorrupt, "checkpoint lineage set is inconsistent");
    }
  }
  for (const auto& p : cp.pending) {
    if (p.generation != 0 || !ids.insert(p.lineage_id).second) {
      throw StoreError(StoreErrc::CheckpointCorrupt, "checkpoint lineage set is inconsistent");
    }
  }
  if (config_digest(cp.config_snapshot) != cp.config_digest) {
    throw StoreError(StoreErrc::CheckpointCorrupt, "checkpoint config digest does not match its snapshot");
  }
  if (expected_config_digest && *expected_config_digest != cp.config_digest) {
    throw StoreError(StoreErrc::ConfigMismatch, "current configuration differs from the checkpointed run (stored " +
                                                    cp.config_snapshot.dump() + ")");
  }
  if (expected_doc_id && *expected_doc_id != cp.doc_id) {
    throw StoreError(StoreErrc::ConfigMismatch, "document differs from the checkpointed run");
  }
  return cp;
}

// ---------------------------------------------------------------------------
// Cache snapshot

void save_cache_snapshot(const CacheEntries& entries, const std::filesystem::path& path) {
  std::string body;
  for (const auto& [key, report] : entries) {
    ordered_json j = {{"key", key}, {"report", report_to_json(report)}};
    body += j.dump();
    body += '\n';
  }
  write_file_atomic(path, body);
}

CacheEntries load_cache_snapshot(const std::filesystem::path& path) {
  CacheEntries out;
  std::ifstream in(path);
  if (!in) {
    return out;
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    try {
      json j = json::parse(line);
      out.emplace_back(j.at("key").get<std::string>(), report_from_json(j.at("report")));
    } catch (const std::exception& e) {
      throw StoreError(StoreErrc::CheckpointCorrupt, "cache snapshot " + path.string() + " is malformed: " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scores files and comparison

void write_scores_file(const std::filesystem::path& path, const std::vector<ScoredItem>& items) {
  std::string body;
  for (const auto& item : items) {
    ordered_json scores = ordered_json::object();
    for (const auto& [id, value] : item.report.scores) {
      scores[id] = to_double(value);
    }
    ordered_json j = {{"item_id", item.item_id},
                      {"candidate_id", item.report.candidate_id},
                      {"question", item.question},
                      {"answer", item.answer},
                      {"scores", scores},
                      {"overall", to_double(item.report.overall)},
                      {"rationale", item.report.judge_rationale},
                      {"raw_response_digest", item.report.raw_response_digest}};
    body += j.dump();
    body += '\n';
  }
  write_file_atomic(path, body);
}

std::vector<EvaluationReport> read_scores_file(const std::filesystem::path& path, const Rubric& rubric) {
  std::ifstream in(path);
  if (!in) {
    throw StoreError(StoreErrc::InvalidRecord, "cannot read scores file " + path.string());
  }
  std::vector<EvaluationReport> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      json j = json::parse(line);
      EvaluationReport r;
      r.candidate_id = j.value("candidate_id", j.value("item_id", std::string{}));
      r.scores = scores_from_json(j.at("scores"));
      r.judge_rationale = j.value("rationale", std::string{});
      r.raw_response_digest = j.value("raw_response_digest", std::string{});
      if (j.contains("overall")) {
        r.overall = rational_from_json(j.at("overall"));
        validate_report(r, rubric);
      }
      r.overall = aggregate_overall(r.scores, rubric);
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw StoreError(StoreErrc::InvalidRecord, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ComparisonReport compare_report(const std::vector<EvaluationReport>& reports_a,
                                const std::vector<EvaluationReport>& reports_b, const Rubric& rubric) {
  if (reports_a.empty() || reports_b.empty()) {
    throw StoreError(StoreErrc::EmptyReportList,
                     std::string("EmptyReportList: side ") + (reports_a.empty() ? "A" : "B") + " has no reports");
  }
  const MetricMeans a = mean_per_metric(reports_a, rubric);
  const MetricMeans b = mean_per_metric(reports_b, rubric);
  ComparisonReport out;
  for (const auto& m : rubric.metrics) {
    out.per_metric.push_back({m.id, a.per_metric.at(m.id), b.per_metric.at(m.id)});
  }
  out.overall_a = a.overall_mean;
  out.overall_b = b.overall_mean;
  out.overall_of_means_a = a.overall_of_metric_means;
  out.overall_of_means_b = b.overall_of_metric_means;
  out.n_a = a.count;
  out.n_b = b.count;
  return out;
}

ordered_json comparison_to_json(const ComparisonReport& report, const std::string& label_a,
                                const std::string& label_b) {
  ordered_json per_metric = ordered_json::array();
  for (const auto& m : report.per_metric) {
    per_metric.push_back({{"metric_id", m.metric_id},
                          {"mean_a", to_double(m.mean_a)},
                          {"mean_b", to_double(m.mean_b)},
                          {"delta", to_double(m.mean_a - m.mean_b)}});
  }
  return {{"label_a", label_a},
          {"label_b", label_b},
          {"n_a", report.n_a},
          {"n_b", report.n_b},
          {"overall_a", to_double(report.overall_a)},
          {"overall_b", to_double(report.overall_b)},
          {"overall_delta", to_double(report.overall_a - report.overall_b)},
          {"overall_of_metric_means_a", to_double(report.overall_of_means_a)},
          {"overall_of_metric_means_b", to_double(report.overall_of_means_b)},
          {"per_metric", per_metric}};
}

std::string comparison_table(const ComparisonReport& report, const std::string& label_a,
                             const std::string& label_b) {
  std::size_t name_width = std::string("overall (mean of pairs)").size();
  for (const auto& m : report.per_metric) {
    name_width = std::max(name_width, m.metric_id.size());
  }
  const int col = static_cast<int>(std::max<std::size_t>({8, label_a.size(), label_b.size()}));
  auto signed_fixed = [](const Rational& v) {
    std::string s = format_fixed(v, 2);
    return s.front() == '-' ? s : "+" + s;
  };

  std::ostringstream out;
  auto row = [&](const std::string& name, const std::string& a, const std::string& b, const std::string& d) {
    out << std::left << std::setw(static_cast<int>(name_width)) << name << "  " << std::right << std::setw(col) << a
        << "  " << std::setw(col) << b << "  " << std::setw(col) << d << '\n';
  };
  row("metric", label_a, label_b, "delta");
  out << std::string(name_width + 6 + 3 * static_cast<std::size_t>(col), '-') << '\n';
  for (const auto& m : report.per_metric) {
    row(m.metric_id, format_fixed(m.mean_a, 2), format_fixed(m.mean_b, 2), signed_fixed(m.mean_a - m.mean_b));
  }
  out << std::string(name_width + 6 + 3 * static_cast<std::size_t>(col), '-') << '\n';
  row("overall (mean of pairs)", format_fixed(report.overall_a, 2), format_fixed(report.overall_b, 2),
      signed_fixed(report.overall_a - report.overall_b));
  row("n", std::to_string(report.n_a), std::to_string(report.n_b), "");
  return out.str();
}

}  // namespace evoqa
