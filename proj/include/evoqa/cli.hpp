#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>

#include "evoqa/config.hpp"
#include "evoqa/engine.hpp"
#include "evoqa/gateway.hpp"
#include "evoqa/store.hpp"

namespace evoqa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitBelowThreshold = 3;

inline constexpr const char* kDatasetFile = "dataset.ndjson";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kCacheFile = "cache.ndjson";

/// Process-level plumbing for the commands. Progress goes to `out`,
/// diagnostics to `err`.
struct CliContext {
  std::ostream& out;
  std::ostream& err;
  Environment env = process_environment();
  const std::atomic<bool>* stop = nullptr;
  std::shared_ptr<Clock> clock = std::make_shared<SystemClock>();
  /// Called after each lineage result has been written (tests use this to interrupt runs).
  std::function<void(std::size_t, const LineageOutcome&)> on_lineage;
};

struct GenerateArgs {
  std::filesystem::path doc;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out_dir = "out";
  CliOverrides flags;
};

struct JudgeArgs {
  std::filesystem::path doc;
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  CliOverrides flags;
};

struct CompareArgs {
  std::filesystem::path scores_a;
  std::filesystem::path scores_b;
  std::optional<std::filesystem::path> rubric;
  /// Structured report; the table is written next to it with a .txt extension.
  std::filesystem::path out;
  std::string label_a = "A";
  std::string label_b = "B";
};

struct ResumeArgs {
  std::filesystem::path checkpoint;
  /// Defaults to the config file recorded in the checkpoint.
  std::optional<std::filesystem::path> config;
  CliOverrides flags;
};

int cmd_generate(const GenerateArgs& args, CliContext& ctx);
int cmd_judge(const JudgeArgs& args, CliContext& ctx);
int cmd_compare(const CompareArgs& args, CliContext& ctx);
int cmd_resume(const ResumeArgs& args, CliContext& ctx);

/// Parses argv and dispatches to a command.
int run_cli(int argc, const char* const* argv, CliContext& ctx);

/// Backend for a resolved config. A live backend without an API key fails
/// here with GatewayError(AuthError), before any network traffic.
std::shared_ptr<Backend> make_backend(const ResolvedConfig& cfg);

/// Writes dataset, checkpoint, cache snapshot and manifest into `out_dir`
/// as a run progresses.
class RunRecorder final : public RunObserver {
 public:
  explicit RunRecorder(std::filesystem::path out_dir, std::ostream* progress = nullptr,
                       std::function<void(std::size_t, const LineageOutcome&)> on_lineage = {});

  void on_seeds(const std::vector<QAPair>& seeds) override;
  void on_lineage_complete(std::size_t index, const LineageOutcome& outcome) override;
  void on_checkpoint(const Checkpoint& state, const EvaluationCache& cache) override;
  void on_run_finished(const RunResult& result) override;
  void on_run_aborted(const RunManifest& partial) override;

 private:
  std::filesystem::path out_dir_;
  std::ostream* progress_;
  std::function<void(std::size_t, const LineageOutcome&)> on_lineage_;
  std::unique_ptr<OrderedDatasetWriter> writer_;
};

}  // namespace evoqa
