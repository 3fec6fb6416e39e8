#include <gtest/gtest.h>

#include <chrono>

#include "qad/error.hpp"
#include "qad/external_scorer.hpp"
#include "qad/random.hpp"
#include "test_util.hpp"

using namespace qad;
using qad::testing::TempDir;
using qad::testing::read_file;
using qad::testing::stub_command;

namespace {

ExternalScorerConfig config(const std::string& args, int batch = 256, double timeout = 10.0) {
  ExternalScorerConfig cfg;
  cfg.command = parse_metric_spec("external:" + stub_command(args), MetricKind::kReferenceFree)
                    .external->command;
  cfg.batch_size = batch;
  cfg.timeout_seconds = timeout;
  return cfg;
}

std::vector<MetricRow> rows_of(const std::vector<std::string>& hyps) {
  std::vector<MetricRow> rows;
  for (const auto& h : hyps) rows.push_back({"src", h, std::nullopt});
  return rows;
}

ScorerError::Reason reason_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ScorerError& e) {
    return e.reason();
  }
  ADD_FAILURE() << "no ScorerError";
  return ScorerError::Reason::kLaunch;
}

}  // namespace

TEST(Escape, RoundTrip) {
  EXPECT_EQ(escape_field("a\tb\nc\\d"), "a\\tb\\nc\\\\d");
  Philox rng(31, 0);
  const std::string alphabet = "ab\t\n\\ tn";
  for (int i = 0; i < 1000; ++i) {
    std::string s;
    for (int k = static_cast<int>(rng() % 12); k > 0; --k) s += alphabet[rng() % alphabet.size()];
    const auto e = escape_field(s);
    EXPECT_EQ(e.find('\t'), std::string::npos);
    EXPECT_EQ(e.find('\n'), std::string::npos);
    EXPECT_EQ(unescape_field(e), s);
  }
}

TEST(ExternalScorer, HandshakeAndScores) {
  ExternalScorer s(config("--name len --mode length"));
  EXPECT_EQ(s.name(), "len");
  EXPECT_EQ(s.kind(), MetricKind::kReferenceFree);
  // The tab survives the wire format, so the stub sees one field of three words.
  const auto rows = rows_of({"a b c", "", "x\ty z"});
  EXPECT_EQ(s.score(rows), (std::vector<double>{3, 0, 3}));
  // Same process answers a second, identical batch identically.
  EXPECT_EQ(s.score(rows), (std::vector<double>{3, 0, 3}));
}

TEST(ExternalScorer, ReferenceRowsReachTheScorer) {
  ExternalMetric m(config("--kind ref --mode exact"), MetricKind::kReferenceBased);
  const std::vector<MetricRow> rows{{"s", "a b", "a b"}, {"s", "a\nb", "a b"}, {"s", "a\nb", "a\nb"}};
  EXPECT_EQ(m.score(rows), (std::vector<double>{1, 0, 1}));
  const std::vector<MetricRow> missing{{"s", "a", std::nullopt}};
  EXPECT_THROW(m.score(missing), ValidationError);
}

TEST(ExternalScorer, KindMismatch) {
  EXPECT_EQ(reason_of([] { ExternalMetric m(config("--kind noref"), MetricKind::kReferenceBased); }),
            ScorerError::Reason::kProtocol);
}

TEST(ExternalScorer, BadHandshake) {
  EXPECT_EQ(reason_of([] { ExternalScorer s(config("--handshake HELLO")); }),
            ScorerError::Reason::kProtocol);
  EXPECT_EQ(reason_of([] { ExternalScorer s(config("--handshake none")); }),
            ScorerError::Reason::kCrash);
}

TEST(ExternalScorer, NonNumericResponseNamesRow) {
  ExternalScorer s(config("--bad-at 2"));
  try {
    s.score(rows_of({"a", "b", "c", "d"}));
    FAIL();
  } catch (const ScorerError& e) {
    EXPECT_EQ(e.reason(), ScorerError::Reason::kProtocol);
    EXPECT_EQ(e.row(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(ExternalScorer, CrashMidBatch) {
  ExternalScorer s(config("--crash-at 1"));
  try {
    s.score(rows_of({"a", "b", "c"}));
    FAIL();
  } catch (const ScorerError& e) {
    EXPECT_EQ(e.reason(), ScorerError::Reason::kCrash);
    EXPECT_NE(std::string(e.what()).find("crashing"), std::string::npos) << e.what();
  }
}

TEST(ExternalScorer, Timeout) {
  ExternalScorer s(config("--sleep 5", 256, 0.3));
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(reason_of([&] { s.score(rows_of({"a"})); }), ScorerError::Reason::kTimeout);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(3));
}

TEST(ExternalScorer, LaunchFailure) {
  ExternalScorerConfig cfg;
  cfg.command = {"/nonexistent/scorer-binary"};
  EXPECT_EQ(reason_of([&] { ExternalScorer s(cfg); }), ScorerError::Reason::kLaunch);
}

TEST(ExternalScorer, BatchingPreservesOrder) {
  TempDir dir;
  const auto counter = (dir / "count").string();
  ExternalScorer s(config("--mode length --count-file " + counter, 3));
  std::vector<std::string> hyps;
  std::vector<double> expect;
  for (int i = 0; i < 10; ++i) {
    std::string h;
    for (int k = 0; k < i; ++k) h += "w ";
    hyps.push_back(h);
    expect.push_back(i);
  }
  EXPECT_EQ(s.score(rows_of(hyps)), expect);
  EXPECT_EQ(read_file(counter).size(), 20u);
}
