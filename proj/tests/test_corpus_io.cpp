#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "qad/corpus_io.hpp"
#include "qad/error.hpp"
#include "qad/random.hpp"
#include "test_util.hpp"

using namespace qad;
using qad::testing::TempDir;
using qad::testing::read_file;
using qad::testing::write_file;

TEST(CorpusIo, ReadsSingleRecord) {
  TempDir dir;
  write_file(dir / "a.jsonl", R"({"id":0,"src":"a","hyps":[{"text":"b","logprob":-0.5}]})" "\n");
  const auto e = read_nbest(dir / "a.jsonl");
  ASSERT_EQ(e.size(), 1u);
  EXPECT_EQ(e[0].segment.id, 0);
  EXPECT_EQ(e[0].segment.text, "a");
  ASSERT_EQ(e[0].candidates.size(), 1u);
  EXPECT_EQ(e[0].candidates[0].text, "b");
  EXPECT_EQ(e[0].candidates[0].logprob, -0.5);
  EXPECT_EQ(e[0].candidates[0].multiplicity, 1);
}

TEST(CorpusIo, EmptyFileIsEmptyList) {
  TempDir dir;
  write_file(dir / "e.jsonl", "");
  EXPECT_TRUE(read_nbest(dir / "e.jsonl").empty());
}

TEST(CorpusIo, DuplicateIdNamesLine) {
  TempDir dir;
  write_file(dir / "d.jsonl",
             "{\"id\":3,\"src\":\"a\",\"hyps\":[]}\n{\"id\":3,\"src\":\"b\",\"hyps\":[]}\n");
  try {
    read_nbest(dir / "d.jsonl");
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos) << e.what();
  }
}

TEST(CorpusIo, DecreasingIdsRejected) {
  TempDir dir;
  write_file(dir / "d.jsonl",
             "{\"id\":4,\"src\":\"a\",\"hyps\":[]}\n{\"id\":2,\"src\":\"b\",\"hyps\":[]}\n");
  EXPECT_THROW(read_nbest(dir / "d.jsonl"), ValidationError);
}

TEST(CorpusIo, MalformedLineIsParseErrorWithLineNumber) {
  TempDir dir;
  write_file(dir / "m.jsonl", "{\"id\":0,\"src\":\"a\",\"hyps\":[]}\n{not json\n");
  try {
    read_nbest(dir / "m.jsonl");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(CorpusIo, FieldValidation) {
  EXPECT_THROW(parse_nbest_record(R"({"src":"a","hyps":[]})", 1), ParseError);
  EXPECT_THROW(parse_nbest_record(R"({"id":-1,"src":"a","hyps":[]})", 1), ValidationError);
  EXPECT_THROW(parse_nbest_record(R"({"id":0,"src":"a","hyps":[{"text":"x","count":0}]})", 1),
               ValidationError);
  EXPECT_THROW(parse_nbest_record(R"({"id":0,"src":"a","hyps":[{"text":"x","logprob":"?"}]})", 1),
               ParseError);
  EXPECT_THROW(parse_nbest_record(R"({"id":0,"src":"a\nb","hyps":[]})", 1), ValidationError);
  // Unknown fields are ignored.
  const auto e = parse_nbest_record(R"({"id":0,"src":"a","hyps":[],"extra":{"k":1}})", 1);
  EXPECT_TRUE(e.candidates.empty());
}

TEST(CorpusIo, MissingFileIsIoError) {
  EXPECT_THROW(read_nbest("/nonexistent/dir/x.jsonl"), IoError);
  EXPECT_THROW(write_nbest({}, "/nonexistent/dir/x.jsonl"), IoError);
}

TEST(CorpusIo, FormatRules) {
  NBestEntry e;
  e.segment = {7, "src"};
  Candidate c;
  c.text = "hyp";
  c.multiplicity = 3;
  e.candidates.push_back(c);
  const std::string line = format_nbest_record(e);
  EXPECT_EQ(line.find("\"refs\""), std::string::npos);
  EXPECT_NE(line.find("\"count\":3"), std::string::npos);
  EXPECT_EQ(line.find("\"logprob\""), std::string::npos);
}

namespace {

std::string random_text(Philox& rng) {
  static const std::vector<std::string> pieces = {"a", "b", "ü", "\"q\"", "\\", "\t", "x y",
                                                  "東", "&amp;", ""};
  std::string s;
  const int n = static_cast<int>(rng() % 5);
  for (int i = 0; i < n; ++i) s += pieces[rng() % pieces.size()];
  return s;
}

}  // namespace

TEST(CorpusIo, RoundTripProperty) {
  Philox rng(11, 0);
  TempDir dir;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<NBestEntry> entries;
    const int n = static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) {
      NBestEntry e;
      e.segment = {i * 3 + static_cast<std::int64_t>(rng() % 3), random_text(rng)};
      const int refs = static_cast<int>(rng() % 3);
      for (int r = 0; r < refs; ++r) e.references.push_back(random_text(rng));
      const int cands = static_cast<int>(rng() % 4);
      for (int k = 0; k < cands; ++k) {
        Candidate c;
        c.text = random_text(rng);
        if (rng() % 2) c.logprob = -rng.uniform(0.0, 30.0);
        if (rng() % 2) c.features["qe"] = rng.uniform(-5.0, 5.0);
        if (rng() % 3 == 0) c.features["len"] = static_cast<double>(rng() % 10);
        c.multiplicity = 1 + static_cast<std::int64_t>(rng() % 4);
        c.truncated = rng() % 5 == 0;
        e.candidates.push_back(c);
      }
      entries.push_back(e);
    }
    write_nbest(entries, dir / "rt.jsonl");
    EXPECT_EQ(read_nbest(dir / "rt.jsonl"), entries);
  }
}

TEST(CorpusIo, DedupCollapsesIntoMultiplicity) {
  NBestEntry e;
  e.segment = {0, "s"};
  for (const char* t : {"a", "b", "a", "a", "c", "b"}) {
    Candidate c;
    c.text = t;
    e.candidates.push_back(c);
  }
  const auto map = collapse_duplicates(e);
  ASSERT_EQ(e.candidates.size(), 3u);
  EXPECT_EQ(e.candidates[0].text, "a");
  EXPECT_EQ(e.candidates[0].multiplicity, 3);
  EXPECT_EQ(e.candidates[1].multiplicity, 2);
  EXPECT_EQ(e.candidates[2].multiplicity, 1);
  EXPECT_EQ(e.sample_count(), 6);
  EXPECT_EQ(map, (std::vector<std::size_t>{0, 1, 0, 0, 2, 1}));
}

TEST(CorpusIo, ParallelFiles) {
  TempDir dir;
  write_file(dir / "s", "a\nb\r\nc\n");
  write_file(dir / "r", "A\nB\nC");
  const auto p = read_parallel(dir / "s", dir / "r");
  ASSERT_EQ(p.size(), 3u);
  EXPECT_EQ(p[1], std::make_pair(std::string("b"), std::string("B")));
  write_file(dir / "r2", "A\nB\n");
  try {
    read_parallel(dir / "s", dir / "r2");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("3 vs 2"), std::string::npos) << e.what();
  }
}

TEST(CorpusIo, WeightsRoundTripAndErrors) {
  TempDir dir;
  WeightsTable w;
  w.set("logprob", 0.1);
  w.set("qe", -1.0 / 3.0);
  w.set("zero", 0.0);
  write_weights(w, dir / "w.tsv");
  EXPECT_EQ(read_weights(dir / "w.tsv"), w);
  EXPECT_TRUE(w.has_nonzero());
  EXPECT_THROW(w.set("qe", 1.0), ValidationError);
  EXPECT_THROW(w.set("inf", std::numeric_limits<double>::infinity()), ValidationError);

  write_file(dir / "bad.tsv", "logprob\tabc\n");
  EXPECT_THROW(read_weights(dir / "bad.tsv"), ParseError);
  write_file(dir / "nan.tsv", "logprob\tnan\n");
  EXPECT_THROW(read_weights(dir / "nan.tsv"), ParseError);
  write_file(dir / "dup.tsv", "a\t1\na\t2\n");
  EXPECT_THROW(read_weights(dir / "dup.tsv"), ValidationError);
}
