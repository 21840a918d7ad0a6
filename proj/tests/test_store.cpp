#include <gtest/gtest.h>

#include "evoqa/engine.hpp"
#include "evoqa/store.hpp"
#include "support/sim.hpp"

using namespace evoqa;
using evoqa::testing::count_lines;
using evoqa::testing::read_text;
using evoqa::testing::TempDir;
using evoqa::testing::uniform_scores;
using evoqa::testing::write_text;

namespace {

EvaluationReport report_for(const QAPair& p, const Rational& score) {
  const Rubric r = default_rubric();
  ScoreMap s = uniform_scores(r, score);
  return EvaluationReport{p.pair_id, s, aggregate_overall(s, r), "why", "digest"};
}

LineageOutcome outcome(int index, const Rational& score, LineageStatus status) {
  LineageOutcome o;
  o.lineage_id = seed_lineage_id(static_cast<std::size_t>(index), 10);
  o.seed = make_qa_pair("seed question " + std::to_string(index), "seed answer", o.lineage_id, 0);
  QAPair child = make_qa_pair("child question " + std::to_string(index), "child answer", o.lineage_id, 1,
                              o.seed.pair_id);
  o.accepted = {child, report_for(child, score)};
  o.status = status;
  o.rounds_used = 1;
  o.history = {score};
  o.calls_made = 4;
  o.ancestry = {o.seed};
  return o;
}

Checkpoint sample_checkpoint() {
  Checkpoint cp;
  cp.run_id = "run-1";
  cp.doc_id = fingerprint("doc");
  cp.config_snapshot = config_snapshot(EngineConfig{}, "v1", BackendKind::Replay, "m");
  cp.config_digest = config_digest(cp.config_snapshot);
  cp.completed = {outcome(0, Rational(17, 2), LineageStatus::ThresholdMet)};
  cp.pending = {make_qa_pair("pending q", "pending a", "seed-01", 0)};
  cp.cache_snapshot = "cache.ndjson";
  cp.journal_sequence = 3;
  cp.seeding_calls = 1;
  cp.tokens_spent = 1234;
  cp.doc_path = "/tmp/doc.md";
  cp.cli_overrides = {{"seeds", 2}};
  return cp;
}

}  // namespace

TEST(Checkpoint, RoundTripsExactly) {
  TempDir dir;
  const Checkpoint cp = sample_checkpoint();
  save_checkpoint(cp, dir / "cp.json");
  EXPECT_EQ(load_checkpoint(dir / "cp.json"), cp);
  EXPECT_EQ(load_checkpoint(dir / "cp.json", cp.config_digest, cp.doc_id), cp);
  // Only the checkpoint itself remains: the temp file was renamed into place.
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir.path()), std::filesystem::directory_iterator{}), 1);
}

TEST(Checkpoint, AllSeedsInLineageOrder) {
  Checkpoint cp = sample_checkpoint();
  cp.pending.insert(cp.pending.begin(), make_qa_pair("later", "a", "seed-02", 0));
  const auto seeds = cp.all_seeds();
  ASSERT_EQ(seeds.size(), 3u);
  EXPECT_EQ(seeds[0].lineage_id, "seed-00");
  EXPECT_EQ(seeds[1].lineage_id, "seed-01");
  EXPECT_EQ(seeds[2].lineage_id, "seed-02");
}

TEST(Checkpoint, CorruptAndMismatch) {
  TempDir dir;
  const Checkpoint cp = sample_checkpoint();
  save_checkpoint(cp, dir / "cp.json");
  const std::string full = read_text(dir / "cp.json");
  write_text(dir / "partial.json", full.substr(0, full.size() / 2));
  auto code_of = [](const std::function<void()>& fn) {
    try {
      fn();
    } catch (const StoreError& e) {
      return e.code();
    }
    return StoreErrc::InvalidRecord;
  };
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "partial.json"); }), StoreErrc::CheckpointCorrupt);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "absent.json"); }), StoreErrc::CheckpointCorrupt);

  EngineConfig altered;
  altered.threshold = Rational(75, 10);
  const auto other = config_digest(config_snapshot(altered, "v1", BackendKind::Replay, "m"));
  EXPECT_NE(other, cp.config_digest);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "cp.json", other); }), StoreErrc::ConfigMismatch);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "cp.json", std::nullopt, fingerprint("other")); }),
            StoreErrc::ConfigMismatch);
}

TEST(Dataset, OrderedWriterEmitsInLineageOrder) {
  TempDir dir;
  OrderedDatasetWriter writer(dir / "d.ndjson", 3);
  writer.submit(2, outcome(2, 9, LineageStatus::ThresholdMet));
  EXPECT_EQ(writer.written(), 0u);
  writer.submit(0, outcome(0, 9, LineageStatus::ThresholdMet));
  EXPECT_EQ(writer.written(), 1u);
  writer.submit(1, outcome(1, 5, LineageStatus::RoundCapReached));
  EXPECT_EQ(writer.written(), 3u);
  const auto records = read_dataset(dir / "d.ndjson");
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].lineage_id, "seed-00");
  EXPECT_EQ(records[1].lineage_id, "seed-01");
  EXPECT_EQ(records[1].status, LineageStatus::RoundCapReached);
  EXPECT_EQ(records[2].overall, Rational(9));
  EXPECT_EQ(records[0].generation, 1);
  EXPECT_EQ(records[0].scores.size(), 15u);
}

TEST(Dataset, RecordFieldOrderIsStable) {
  const auto j = dataset_record_json(outcome(0, Rational(17, 2), LineageStatus::ThresholdMet));
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) {
    keys.push_back(k);
  }
  EXPECT_EQ(keys, (std::vector<std::string>{"lineage_id", "question", "answer", "overall", "scores", "status",
                                            "generation", "rounds_used"}));
  EXPECT_EQ(j["status"], "threshold_met");
  EXPECT_GE(j["overall"].get<double>(), 8.0);
}

TEST(Dataset, UnwritableLocation) {
  TempDir dir;
  EXPECT_THROW(OrderedDatasetWriter(dir / "missing" / "d.ndjson", 1), StoreError);
  EXPECT_THROW(write_file_atomic(dir / "missing" / "x", "y"), StoreError);
}

TEST(Manifest, RoundTrip) {
  RunManifest m;
  m.run_id = "r";
  m.doc_id = "d";
  m.config_snapshot = config_snapshot(EngineConfig{}, "v", BackendKind::Scripted, "m");
  m.started_at = utc_timestamp_now();
  m.total_calls = 12;
  m.total_token_estimate = 3456;
  m.outcome_summary = {{"threshold_met", 2}};
  const auto back = manifest_from_json(nlohmann::ordered_json::parse(manifest_to_json(m).dump()));
  EXPECT_EQ(back.config_snapshot, m.config_snapshot);
  EXPECT_FALSE(back.finished_at);
  EXPECT_EQ(back.total_calls, 12u);
  EXPECT_EQ(back.outcome_summary, m.outcome_summary);
  EXPECT_EQ(m.started_at.size(), std::string("2026-01-01T00:00:00Z").size());
}

TEST(CacheSnapshot, RoundTrip) {
  TempDir dir;
  const QAPair p = make_qa_pair("q", "a");
  CacheEntries entries{{"k1", report_for(p, Rational(43, 5))}, {"k2", report_for(p, 3)}};
  save_cache_snapshot(entries, dir / "c.ndjson");
  EXPECT_EQ(load_cache_snapshot(dir / "c.ndjson"), entries);
  EXPECT_TRUE(load_cache_snapshot(dir / "none.ndjson").empty());
}

TEST(Scores, FileRoundTripAndComparison) {
  TempDir dir;
  const Rubric r = default_rubric();
  std::vector<ScoredItem> a, b;
  for (int i = 0; i < 4; ++i) {
    const QAPair p = make_qa_pair("q" + std::to_string(i), "a");
    a.push_back({"a" + std::to_string(i), p.question, p.answer, report_for(p, Rational(15 + i, 2))});
    b.push_back({"b" + std::to_string(i), p.question, p.answer, report_for(p, 7)});
  }
  write_scores_file(dir / "a.ndjson", a);
  write_scores_file(dir / "b.ndjson", b);
  const auto ra = read_scores_file(dir / "a.ndjson", r);
  const auto rb = read_scores_file(dir / "b.ndjson", r);
  ASSERT_EQ(ra.size(), 4u);
  EXPECT_EQ(ra[3].overall, Rational(9));

  const auto ab = compare_report(ra, rb, r);
  const auto ba = compare_report(rb, ra, r);
  EXPECT_EQ(ab.overall_a, Rational(33, 4));  // mean of 7.5, 8, 8.5, 9
  EXPECT_EQ(ab.overall_a, ab.overall_of_means_a);
  EXPECT_EQ(ab.overall_b, ba.overall_a);
  ASSERT_EQ(ab.per_metric.size(), 15u);
  EXPECT_EQ(ab.per_metric.front().metric_id, "relevance");
  for (std::size_t i = 0; i < ab.per_metric.size(); ++i) {
    EXPECT_EQ(ab.per_metric[i].mean_a - ab.per_metric[i].mean_b, ba.per_metric[i].mean_b - ba.per_metric[i].mean_a);
  }
  const std::string table = comparison_table(ab, "evo", "human");
  EXPECT_NE(table.find("8.25"), std::string::npos);
  EXPECT_NE(table.find("+1.25"), std::string::npos);
  EXPECT_NE(comparison_table(ba).find("-1.25"), std::string::npos);
  EXPECT_EQ(count_lines(table), 15u + 5u);

  write_text(dir / "empty.ndjson", "");
  try {
    compare_report(read_scores_file(dir / "empty.ndjson", r), rb, r);
    FAIL();
  } catch (const StoreError& e) {
    EXPECT_EQ(e.code(), StoreErrc::EmptyReportList);
  }
}

TEST(Scores, InvalidRecordNamesLine) {
  TempDir dir;
  write_text(dir / "s.ndjson", "\n{\"scores\": {\"relevance\": 4}}\n");
  try {
    read_scores_file(dir / "s.ndjson", default_rubric());
    FAIL();
  } catch (const StoreError& e) {
    EXPECT_EQ(e.code(), StoreErrc::InvalidRecord);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}
