#include <gtest/gtest.h>

#include <random>

#include "evoqa/ingest.hpp"
#include "evoqa/rational.hpp"
#include "evoqa/rubric.hpp"
#include "evoqa/template_engine.hpp"
#include "support/sim.hpp"

using namespace evoqa;
using evoqa::testing::TempDir;
using evoqa::testing::write_text;

// --- ingest -----------------------------------------------------------------

TEST(Ingest, FingerprintMatchesPublishedSha256Vectors) {
  EXPECT_EQ(fingerprint(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(fingerprint("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Ingest, LoadsFileVerbatim) {
  TempDir dir;
  const std::string text = "# Title\n\nSome *markdown* text.\n";
  write_text(dir / "doc.md", text);
  const SourceDocument doc = load_document(dir / "doc.md", DocumentFormat::Markdown);
  EXPECT_EQ(doc.text, text);
  EXPECT_EQ(doc.doc_id, fingerprint(text));
  EXPECT_EQ(doc.char_count, text.size());
  EXPECT_EQ(doc.token_estimate, (text.size() + 3) / 4);
}

TEST(Ingest, CountsCodePointsNotBytes) {
  const std::string text = "caf\xc3\xa9 \xe2\x82\xac";  // "café €"
  EXPECT_EQ(count_code_points(text), 6u);
  EXPECT_EQ(make_document(text).char_count, 6u);
  EXPECT_EQ(estimate_tokens(text), 2u);
  EXPECT_EQ(estimate_tokens(""), 0u);
}

TEST(Ingest, RejectsBadInput) {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const IngestError& e) {
      return e.code();
    }
    ADD_FAILURE() << "no IngestError";
    return IngestErrc::FileNotReadable;
  };
  TempDir dir;
  EXPECT_EQ(code_of([&] { load_document(dir / "missing.txt"); }), IngestErrc::FileNotReadable);
  EXPECT_EQ(code_of([&] { load_document(dir.path()); }), IngestErrc::FileNotReadable);
  EXPECT_EQ(code_of([] { make_document(" \n\t "); }), IngestErrc::EmptyDocument);
  EXPECT_EQ(code_of([] { make_document("ab\xff"); }), IngestErrc::NotUtf8);
  EXPECT_EQ(code_of([] { make_document(std::string(11, 'x'), {}, 10); }), IngestErrc::DocumentTooLarge);
  EXPECT_NO_THROW(make_document(std::string(10, 'x'), {}, 10));
}

TEST(Ingest, Utf8Validation) {
  EXPECT_TRUE(is_valid_utf8("plain"));
  EXPECT_TRUE(is_valid_utf8("\xf0\x9f\x98\x80"));
  EXPECT_FALSE(is_valid_utf8("\xc0\xaf"));          // overlong
  EXPECT_FALSE(is_valid_utf8("\xed\xa0\x80"));      // surrogate
  EXPECT_FALSE(is_valid_utf8("\xf4\x90\x80\x80"));  // above U+10FFFF
  EXPECT_FALSE(is_valid_utf8("\xe2\x82"));          // truncated
}

// --- rational ---------------------------------------------------------------

TEST(RationalText, ParsesAndFormatsExactly) {
  EXPECT_EQ(parse_rational("8.5"), Rational(17, 2));
  EXPECT_EQ(parse_rational("-2.25"), Rational(-9, 4));
  EXPECT_EQ(parse_rational("85e-1"), Rational(17, 2));
  EXPECT_EQ(parse_rational("3/4"), Rational(3, 4));
  EXPECT_THROW(parse_rational("abc"), std::invalid_argument);
  EXPECT_THROW(parse_rational("1/0"), std::invalid_argument);
  EXPECT_EQ(rational_from_double(8.1), Rational(81, 10));
  EXPECT_EQ(to_exact_string(Rational(132, 15)), "44/5");
  EXPECT_EQ(parse_rational(to_exact_string(Rational(-7, 3))), Rational(-7, 3));
  EXPECT_EQ(format_fixed(Rational(8755, 1000), 2), "8.76");
  EXPECT_EQ(format_fixed(Rational(-8755, 1000), 2), "-8.76");
  EXPECT_EQ(format_fixed(Rational(43, 5), 2), "8.60");
}

// --- rubric -----------------------------------------------------------------

TEST(Rubric, DefaultHasFifteenValidMetrics) {
  const Rubric r = default_rubric();
  EXPECT_EQ(r.metrics.size(), 15u);
  EXPECT_EQ(r.scale_max, 10);
  EXPECT_TRUE(validate_rubric(r).empty());
  for (const char* id : {"relevance", "depth", "factual_accuracy", "conciseness", "clarity",
                         "hallucination_absence", "coverage"}) {
    EXPECT_NE(r.find(id), nullptr) << id;
  }
}

TEST(Rubric, AggregateFourteenNinesAndASix) {
  const Rubric r = default_rubric();
  ScoreMap s = evoqa::testing::uniform_scores(r, 9);
  s["fluency"] = 6;
  // (14 * 9 + 6) / 15
  EXPECT_EQ(aggregate_overall(s, r), Rational(14 * 9 + 6, 15));
  EXPECT_EQ(aggregate_overall(s, r), Rational(88, 10));
}

TEST(Rubric, WeightedMean) {
  Rubric r{"w", {{"a", "A", "", 3}, {"b", "B", "", 1}}, 10};
  EXPECT_EQ(aggregate_overall({{"a", 10}, {"b", 0}}, r), Rational(30, 4));
}

TEST(Rubric, AggregateErrors) {
  const Rubric r = default_rubric();
  ScoreMap s = evoqa::testing::uniform_scores(r, 5);
  auto code_of = [&](const ScoreMap& m) {
    try {
      aggregate_overall(m, r);
    } catch (const RubricError& e) {
      return e.code();
    }
    return RubricErrc::InvalidRubric;
  };
  ScoreMap missing = s;
  missing.erase("depth");
  EXPECT_EQ(code_of(missing), RubricErrc::MissingMetric);
  ScoreMap high = s;
  high["depth"] = Rational(101, 10);
  EXPECT_EQ(code_of(high), RubricErrc::ScoreOutOfRange);
  ScoreMap low = s;
  low["depth"] = -1;
  EXPECT_EQ(code_of(low), RubricErrc::ScoreOutOfRange);
  ScoreMap extra = s;
  extra["novelty"] = 5;
  EXPECT_EQ(code_of(extra), RubricErrc::UnknownMetric);
}

TEST(Rubric, ValidationViolations) {
  Rubric r{"bad", {{"a", "A", "", 0}, {"a", "A", "", 1}, {"Bad Id", "B", "", 1}}, 0};
  std::set<RubricViolationKind> kinds;
  for (const auto& v : validate_rubric(r)) {
    kinds.insert(v.kind);
  }
  EXPECT_TRUE(kinds.count(RubricViolationKind::NonPositiveWeight));
  EXPECT_TRUE(kinds.count(RubricViolationKind::DuplicateMetricId));
  EXPECT_TRUE(kinds.count(RubricViolationKind::InvalidMetricId));
  EXPECT_TRUE(kinds.count(RubricViolationKind::ScaleMaxTooSmall));
  EXPECT_EQ(validate_rubric(Rubric{"e", {}, 10}).front().kind, RubricViolationKind::EmptyMetricList);
}

TEST(Rubric, ValidateReportChecksOverall) {
  const Rubric r = default_rubric();
  EvaluationReport rep{"c", evoqa::testing::uniform_scores(r, 8), 8, "", ""};
  EXPECT_NO_THROW(validate_report(rep, r));
  rep.overall = Rational(81, 10);
  try {
    validate_report(rep, r);
    FAIL();
  } catch (const RubricError& e) {
    EXPECT_EQ(e.code(), RubricErrc::OverallMismatch);
  }
}

TEST(Rubric, MeansOfTwoReports) {
  const Rubric r = default_rubric();
  auto make = [&](Rational h) {
    ScoreMap s = evoqa::testing::uniform_scores(r, 8);
    s["hallucination_absence"] = h;
    return EvaluationReport{"c", s, aggregate_overall(s, r), "", ""};
  };
  const MetricMeans m = mean_per_metric({make(Rational(95, 10)), make(Rational(96, 10))}, r);
  EXPECT_EQ(m.per_metric.at("hallucination_absence"), Rational(955, 100));
  EXPECT_EQ(m.overall_mean, m.overall_of_metric_means);
  EXPECT_EQ(m.count, 2u);
  EXPECT_THROW(mean_per_metric({}, r), RubricError);
}

TEST(Rubric, UniformWeightScalingIsInvariant) {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> score(0, 20);
  std::uniform_int_distribution<int> weight(1, 9);
  Rubric base = default_rubric();
  for (auto& m : base.metrics) {
    m.weight = weight(rng);
  }
  for (int trial = 0; trial < 50; ++trial) {
    ScoreMap s;
    for (const auto& m : base.metrics) {
      s[m.id] = Rational(score(rng), 2);
    }
    Rubric scaled = base;
    for (auto& m : scaled.metrics) {
      m.weight *= Rational(7, 3);
    }
    EXPECT_EQ(aggregate_overall(s, base), aggregate_overall(s, scaled));
  }
}

TEST(Rubric, JsonRoundTripAndFile) {
  const Rubric r = default_rubric();
  EXPECT_EQ(rubric_from_json(rubric_to_json(r)), r);
  TempDir dir;
  write_text(dir / "r.json",
             R"({"rubric_version":"two","scale_max":5,"metrics":[)"
             R"({"id":"a","name":"A","description":"first","weight":2},)"
             R"({"id":"b","name":"B","description":"second","weight":"1/2"}]})");
  const Rubric loaded = load_rubric(dir / "r.json");
  EXPECT_EQ(loaded.version, "two");
  EXPECT_EQ(loaded.scale_max, 5);
  EXPECT_EQ(loaded.metrics.at(1).weight, Rational(1, 2));
  write_text(dir / "bad.json", R"({"rubric_version":"x","scale_max":10,"metrics":[]})");
  EXPECT_THROW(load_rubric(dir / "bad.json"), RubricError);
}

// --- template engine --------------------------------------------------------

TEST(TemplateEngine, SinglePassSubstitution) {
  EXPECT_EQ(placeholders_in("a {{x}} b {{y}} {{x}}"), (std::set<std::string>{"x", "y"}));
  EXPECT_EQ(render_template("<{{doc}}>", {{"doc", "has {{count}} braces"}, {"count", "3"}}),
            "<has {{count}} braces>");
  EXPECT_THROW(render_template("{{missing}}", {}), TemplateError);
}
