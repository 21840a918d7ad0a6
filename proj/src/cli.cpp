#include "evoqa/cli.hpp"

#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "evoqa/live_backend.hpp"

namespace evoqa {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Message of an exception plus, for engine errors, the chain of causes.
std::string describe(std::exception_ptr error) {
  std::string out;
  while (error) {
    std::exception_ptr next;
    try {
      std::rethrow_exception(error);
    } catch (const EngineError& e) {
      out += e.what();
      next = e.cause();
    } catch (const std::exception& e) {
      out += e.what();
    } catch (...) {
      out += "unknown error";
    }
    error = next;
    if (error) {
      out += "\n  caused by: ";
    }
  }
  return out;
}

std::string error_label(std::exception_ptr error) {
  try {
    std::rethrow_exception(error);
  } catch (const GatewayError& e) {
    return to_string(e.code());
  } catch (const StoreError& e) {
    return to_string(e.code());
  } catch (const EngineError& e) {
    return to_string(e.code());
  } catch (const ProtocolError& e) {
    return to_string(e.code());
  } catch (const ConfigError&) {
    return "ConfigError";
  } catch (const IngestError&) {
    return "IngestError";
  } catch (...) {
  }
  return "error";
}

int report_failure(CliContext& ctx, const std::string& command, std::exception_ptr error) {
  ctx.err << "evoqa " << command << ": " << error_label(error) << ": " << describe(error) << '\n';
  return kExitError;
}

DocumentFormat format_for(const fs::path& path) {
  const auto ext = path.extension().string();
  return ext == ".md" || ext == ".markdown" ? DocumentFormat::Markdown : DocumentFormat::Plain;
}

// Paths in stored overrides are made absolute so a resume works from any
// working directory.
CliOverrides absolutize(CliOverrides flags) {
  for (auto* p : {&flags.cassette, &flags.script, &flags.rubric}) {
    if (*p) {
      *p = fs::absolute(**p).string();
    }
  }
  return flags;
}

struct Pipeline {
  ResolvedConfig cfg;
  std::shared_ptr<Gateway> gateway;
  std::unique_ptr<Engine> engine;
};

Pipeline build_pipeline(const std::optional<fs::path>& config, const CliOverrides& flags, CliContext& ctx) {
  Pipeline p;
  p.cfg = resolve_config(config, flags, ctx.env);
  p.gateway = std::make_shared<Gateway>(make_backend(p.cfg), p.cfg.gateway, ctx.clock);
  p.engine = std::make_unique<Engine>(*p.gateway, p.cfg.rubric, p.cfg.engine, p.cfg.generation, p.cfg.templates);
  p.engine->set_stop_flag(ctx.stop);
  return p;
}

int finish_run(const RunResult& result, const fs::path& out_dir, CliContext& ctx) {
  std::size_t capped = 0;
  for (const auto& o : result.outcomes) {
    capped += o.status == LineageStatus::RoundCapReached ? 1 : 0;
  }
  ctx.out << "run " << result.manifest.run_id << ": " << result.outcomes.size() << " lineage(s), "
          << result.outcomes.size() - capped << " threshold_met, " << capped << " round_cap_reached, "
          << result.manifest.total_calls << " call(s); dataset at " << (out_dir / kDatasetFile).string() << '\n';
  return capped > 0 ? kExitBelowThreshold : kExitOk;
}

int run_and_record(Pipeline& p, const SourceDocument& doc, const RunOptions& options, const fs::path& out_dir,
                   const Checkpoint* resume, const std::string& command, CliContext& ctx) {
  RunRecorder recorder(out_dir, &ctx.out, ctx.on_lineage);
  try {
    RunResult result = p.engine->run(doc, options, &recorder, resume);
    return finish_run(result, out_dir, ctx);
  } catch (const EngineError& e) {
    if (e.code() == EngineErrc::RunCancelled) {
      ctx.err << "evoqa " << command << ": interrupted; resume with: evoqa resume "
              << (out_dir / kCheckpointFile).string() << '\n';
      return kExitError;
    }
    return report_failure(ctx, command, std::current_exception());
  }
}

}  // namespace

std::shared_ptr<Backend> make_backend(const ResolvedConfig& cfg) {
  std::shared_ptr<Backend> backend;
  switch (cfg.backend) {
    case BackendKind::Replay: {
      if (!cfg.cassette || !fs::exists(*cfg.cassette)) {
        throw GatewayError(GatewayErrc::CassetteCorrupt,
                           "replay cassette not found: " + (cfg.cassette ? cfg.cassette->string() : "<unset>"));
      }
      return std::make_shared<ReplayBackend>(Cassette::open(*cfg.cassette));
    }
    case BackendKind::Scripted:
      backend = ScriptedBackend::from_file(*cfg.script);
      break;
    case BackendKind::Live: {
      if (cfg.api_key.empty()) {
        throw GatewayError(GatewayErrc::AuthError,
                           std::string("no API key for the live backend; set ") + kApiKeyEnvVar);
      }
      if (cfg.endpoint.empty()) {
        throw ConfigError("gateway.endpoint", "default", std::string("no endpoint set; set ") + kEndpointEnvVar);
      }
      LiveBackendOptions opts;
      opts.endpoint = cfg.endpoint;
      opts.api_key = cfg.api_key;
      opts.timeout = std::chrono::seconds(cfg.timeout_seconds);
      backend = std::make_shared<LiveBackend>(opts);
      break;
    }
  }
  if (cfg.cassette) {
    return std::make_shared<RecordingBackend>(backend, Cassette::open(*cfg.cassette));
  }
  return backend;
}

// ---------------------------------------------------------------------------
// RunRecorder

RunRecorder::RunRecorder(fs::path out_dir, std::ostream* progress,
                         std::function<void(std::size_t, const LineageOutcome&)> on_lineage)
    : out_dir_(std::move(out_dir)), progress_(progress), on_lineage_(std::move(on_lineage)) {
  std::error_code ec;
  fs::create_directories(out_dir_, ec);
  if (ec || !fs::is_directory(out_dir_)) {
    throw StoreError(StoreErrc::StoreNotWritable, "cannot create output directory " + out_dir_.string());
  }
}

void RunRecorder::on_seeds(const std::vector<QAPair>& seeds) {
  writer_ = std::make_unique<OrderedDatasetWriter>(out_dir_ / kDatasetFile, seeds.size());
  if (progress_ != nullptr) {
    *progress_ << seeds.size() << " seed pair(s)\n";
  }
}

void RunRecorder::on_lineage_complete(std::size_t index, const LineageOutcome& outcome) {
  writer_->submit(index, outcome);
  if (progress_ != nullptr) {
    *progress_ << outcome.lineage_id << ": " << to_string(outcome.status) << " after " << outcome.rounds_used
               << " round(s), overall " << format_fixed(outcome.accepted.report.overall, 2) << '\n';
  }
  if (on_lineage_) {
    on_lineage_(index, outcome);
  }
}

void RunRecorder::on_checkpoint(const Checkpoint& state, const EvaluationCache& cache) {
  save_cache_snapshot(cache.snapshot(), out_dir_ / state.cache_snapshot);
  save_checkpoint(state, out_dir_ / kCheckpointFile);
}

void RunRecorder::on_run_finished(const RunResult& result) { write_manifest(result.manifest, out_dir_ / kManifestFile); }

void RunRecorder::on_run_aborted(const RunManifest& partial) { write_manifest(partial, out_dir_ / kManifestFile); }

// ---------------------------------------------------------------------------
// Commands

int cmd_generate(const GenerateArgs& args, CliContext& ctx) {
  try {
    Pipeline p = build_pipeline(args.config, args.flags, ctx);
    const SourceDocument doc = load_document(args.doc, format_for(args.doc), p.cfg.max_document_chars);
    RunOptions options;
    options.max_concurrent_lineages = p.cfg.max_concurrent_lineages;
    options.doc_path = fs::absolute(args.doc).string();
    options.config_path = p.cfg.config_path ? p.cfg.config_path->string() : std::string{};
    options.cli_overrides = overrides_to_json(absolutize(args.flags));
    options.cache_snapshot_name = kCacheFile;
    return run_and_record(p, doc, options, args.out_dir, nullptr, "generate", ctx);
  } catch (...) {
    return report_failure(ctx, "generate", std::current_exception());
  }
}

int cmd_resume(const ResumeArgs& args, CliContext& ctx) {
  try {
    const Checkpoint stored = load_checkpoint(args.checkpoint);
    const CliOverrides flags = merge_overrides(overrides_from_json(stored.cli_overrides), args.flags);
    std::optional<fs::path> config = args.config;
    if (!config && !stored.config_path.empty()) {
      config = stored.config_path;
    }
    Pipeline p = build_pipeline(config, flags, ctx);
    const SourceDocument doc = load_document(stored.doc_path, format_for(stored.doc_path), p.cfg.max_document_chars);
    const Checkpoint cp = load_checkpoint(args.checkpoint, config_digest(p.engine->snapshot()), doc.doc_id);

    const fs::path out_dir = fs::absolute(args.checkpoint).parent_path();
    p.engine->cache().load(load_cache_snapshot(out_dir / cp.cache_snapshot));
    p.gateway->add_tokens_spent(cp.tokens_spent);

    RunOptions options;
    options.max_concurrent_lineages = p.cfg.max_concurrent_lineages;
    options.doc_path = cp.doc_path;
    options.config_path = config ? fs::absolute(*config).string() : std::string{};
    options.cli_overrides = overrides_to_json(absolutize(flags));
    options.cache_snapshot_name = cp.cache_snapshot;
    if (cp.pending.empty()) {
      ctx.out << "checkpoint has no pending lineages\n";
    }
    return run_and_record(p, doc, options, out_dir, &cp, "resume", ctx);
  } catch (...) {
    return report_failure(ctx, "resume", std::current_exception());
  }
}

int cmd_judge(const JudgeArgs& args, CliContext& ctx) {
  try {
    Pipeline p = build_pipeline(args.config, args.flags, ctx);
    const SourceDocument doc = load_document(args.doc, format_for(args.doc), p.cfg.max_document_chars);

    std::ifstream in(args.dataset);
    if (!in) {
      throw StoreError(StoreErrc::InvalidRecord, "cannot read dataset " + args.dataset.string());
    }
    std::vector<ScoredItem> items;
    std::size_t failures = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) {
        continue;
      }
      const std::string where = args.dataset.string() + " line " + std::to_string(line_no);
      json record = json::parse(line, nullptr, false);
      if (record.is_discarded() || !record.is_object()) {
        ctx.err << where << ": not a JSON object\n";
        ++failures;
        continue;
      }
      std::string missing;
      for (const char* field : {"question", "answer"}) {
        auto it = record.find(field);
        if (it == record.end() || !it->is_string() ||
            it->get<std::string>().find_first_not_of(" \t\r\n") == std::string::npos) {
          missing = field;
          break;
        }
      }
      if (!missing.empty()) {
        ctx.err << where << ": missing or empty " << missing << " field\n";
        ++failures;
        continue;
      }
      std::string item_id = "line-" + std::to_string(line_no);
      for (const char* id_field : {"id", "lineage_id"}) {
        if (auto it = record.find(id_field); it != record.end() && it->is_string()) {
          item_id = it->get<std::string>();
          break;
        }
      }
      try {
        QAPair pair = make_qa_pair(record["question"].get<std::string>(), record["answer"].get<std::string>(),
                                   item_id, 0, std::nullopt);
        ScoredCandidate scored = p.engine->evaluate_candidate(doc, pair);
        items.push_back({item_id, pair.question, pair.answer, scored.report});
      } catch (...) {
        ctx.err << where << ": unscorable: " << describe(std::current_exception()) << '\n';
        ++failures;
      }
    }
    if (!args.out.parent_path().empty()) {
      fs::create_directories(args.out.parent_path());
    }
    write_scores_file(args.out, items);
    ctx.out << items.size() << " report(s) written to " << args.out.string();
    if (failures > 0) {
      ctx.out << ", " << failures << " record(s) failed";
    }
    ctx.out << '\n';
    return failures > 0 ? kExitError : kExitOk;
  } catch (...) {
    return report_failure(ctx, "judge", std::current_exception());
  }
}

int cmd_compare(const CompareArgs& args, CliContext& ctx) {
  try {
    const Rubric rubric = args.rubric ? load_rubric(*args.rubric) : default_rubric();
    const auto a = read_scores_file(args.scores_a, rubric);
    const auto b = read_scores_file(args.scores_b, rubric);
    const ComparisonReport report = compare_report(a, b, rubric);
    if (!args.out.parent_path().empty()) {
      fs::create_directories(args.out.parent_path());
    }
    const std::string table = comparison_table(report, args.label_a, args.label_b);
    write_file_atomic(args.out, comparison_to_json(report, args.label_a, args.label_b).dump(2) + "\n");
    auto table_path = args.out;
    table_path.replace_extension(".txt");
    if (table_path == args.out) {
      table_path += ".table.txt";
    }
    write_file_atomic(table_path, table);
    ctx.out << table;
    return kExitOk;
  } catch (...) {
    return report_failure(ctx, "compare", std::current_exception());
  }
}

// ---------------------------------------------------------------------------
// Argument parsing

int run_cli(int argc, const char* const* argv, CliContext& ctx) {
  CLI::App app{"Evolutionary question-answer dataset generation with an LLM judge"};
  app.require_subcommand(1);

  GenerateArgs gen;
  JudgeArgs judge;
  CompareArgs cmp;
  ResumeArgs resume;
  std::string doc, config, out_dir = "out", resume_from, dataset, out, scores_a, scores_b, rubric_path;
  CliOverrides flags;

  auto add_overrides = [&](CLI::App* sub) {
    sub->add_option("--backend", flags.backend, "live, scripted or replay");
    sub->add_option("--cassette", flags.cassette, "Replay source, or record target for other backends");
    sub->add_option("--script", flags.script, "Response script for the scripted backend");
    sub->add_option("--rubric", flags.rubric, "Rubric file replacing the default 15 metrics");
    sub->add_option("--model", flags.model, "Model name sent to the backend");
    sub->add_option("--max-rounds", flags.max_rounds, "Round cap per lineage");
    sub->add_option("--threshold", flags.threshold, "Acceptance threshold on the overall score");
    sub->add_option("--seeds", flags.seeds, "Number of seed pairs");
    sub->add_option("--variations", flags.variations, "Variations per parent and round");
    sub->add_option("--concurrency", flags.concurrency, "Lineages evolved at once");
    sub->add_option("--config", config, "Config file");
  };

  auto* g = app.add_subcommand("generate", "Generate a dataset from a document");
  g->add_option("--doc", doc, "Source document");
  g->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  g->add_option("--resume-from", resume_from, "Continue the run in this checkpoint instead");
  add_overrides(g);

  auto* j = app.add_subcommand("judge", "Score an existing dataset with the rubric");
  j->add_option("--doc", doc, "Source document")->required();
  j->add_option("--dataset", dataset, "Line-delimited records with question and answer")->required();
  j->add_option("--out", out, "Scores file to write")->required();
  add_overrides(j);

  auto* c = app.add_subcommand("compare", "Compare two scores files metric by metric");
  c->add_option("--scores-a", scores_a, "First scores file")->required();
  c->add_option("--scores-b", scores_b, "Second scores file")->required();
  c->add_option("--rubric", rubric_path, "Rubric both files were scored with");
  c->add_option("--out", out, "Comparison report to write")->required();
  c->add_option("--label-a", cmp.label_a, "Column label for the first file");
  c->add_option("--label-b", cmp.label_b, "Column label for the second file");

  auto* r = app.add_subcommand("resume", "Continue an interrupted run");
  r->add_option("checkpoint", resume_from, "Checkpoint file");
  r->add_option("--resume-from", resume_from, "Checkpoint file");
  add_overrides(r);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, ctx.out, ctx.err) == 0 ? kExitOk : kExitError;
  }

  auto config_opt = [&]() -> std::optional<fs::path> {
    return config.empty() ? std::nullopt : std::optional<fs::path>(config);
  };

  if (g->parsed() || r->parsed()) {
    if (!resume_from.empty()) {
      resume.checkpoint = resume_from;
      resume.config = config_opt();
      resume.flags = flags;
      return cmd_resume(resume, ctx);
    }
    if (r->parsed()) {
      ctx.err << "evoqa resume: a checkpoint path is required\n";
      return kExitError;
    }
    if (doc.empty()) {
      ctx.err << "evoqa generate: --doc is required\n";
      return kExitError;
    }
    gen.doc = doc;
    gen.config = config_opt();
    gen.out_dir = out_dir;
    gen.flags = flags;
    return cmd_generate(gen, ctx);
  }
  if (j->parsed()) {
    judge.doc = doc;
    judge.dataset = dataset;
    judge.config = config_opt();
    judge.out = out;
    judge.flags = flags;
    return cmd_judge(judge, ctx);
  }
  cmp.scores_a = scores_a;
  cmp.scores_b = scores_b;
  if (!rubric_path.empty()) {
    cmp.rubric = rubric_path;
  }
  cmp.out = out;
  return cmd_compare(cmp, ctx);
}

}  // namespace evoqa
